#pragma once

// Monte-Carlo checks shared by the unit tests and the acceptance runner.

#include <boost/math/distributions/chi_squared.hpp>
#include <vector>

#include "winn/anysize.hpp"

namespace winn::testing {

struct ChiSquare {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 0.0;
  std::size_t hits = 0;
};

inline ChiSquare chi_square_uniform(const std::vector<std::size_t>& counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  const double expected = static_cast<double>(total) / static_cast<double>(counts.size());
  ChiSquare r;
  for (auto c : counts) r.statistic += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected);
  r.statistic /= expected;
  r.dof = static_cast<double>(counts.size() - 1);
  r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.dof), r.statistic));
  r.hits = total;
  return r;
}

/// Equal-coverage test for the central crop. Each draw places a patch, then picks one pixel of that
/// patch uniformly, so a pixel's hit probability is proportional to its coverage probability. Hits
/// that land in the center x center crop are binned per pixel and tested against uniformity.
inline ChiSquare central_coverage_test(const PatchSampler& sampler, std::size_t center, std::size_t draws, Rng& rng) {
  const std::size_t w = sampler.working(), p = sampler.patch(), off = (w - center) / 2;
  std::vector<std::size_t> counts(center * center, 0);
  for (std::size_t i = 0; i < draws; ++i) {
    const PatchLocation loc = sampler(rng);
    const std::size_t y = sampler.wrap(loc.y, uniform_index(rng, p));
    const std::size_t x = sampler.wrap(loc.x, uniform_index(rng, p));
    if (y >= off && y < off + center && x >= off && x < off + center) ++counts[(y - off) * center + (x - off)];
  }
  return chi_square_uniform(counts);
}

}  // namespace winn::testing
