#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "winn/random.hpp"

namespace winn {

/// Probability vector over a finite support.
class DiscreteDist {
 public:
  static constexpr double kSumTolerance = 1e-12;

  explicit DiscreteDist(std::vector<double> p) : p_(std::move(p)) {
    if (p_.empty()) throw UsageError("DiscreteDist: empty support");
    double s = 0.0;
    for (double v : p_) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("DiscreteDist: probabilities must be finite and >= 0");
      s += v;
    }
    if (std::abs(s - 1.0) > kSumTolerance)
      throw UsageError("DiscreteDist: probabilities sum to " + std::to_string(s) + ", not 1");
  }

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  const std::vector<double>& probs() const noexcept { return p_; }
  double min() const { return *std::min_element(p_.begin(), p_.end()); }

 private:
  std::vector<double> p_;
};

namespace detail {
inline void same_support(const DiscreteDist& p, const DiscreteDist& q) {
  if (p.size() != q.size()) throw UsageError("divergence: supports have different sizes");
}
}  // namespace detail

/// KL(p||q) in nats with 0 ln 0 = 0.
inline double kl(const DiscreteDist& p, const DiscreteDist& q) {
  detail::same_support(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw UsageError("kl: q is zero where p is positive (index " + std::to_string(i) + ")");
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline double jeffreys(const DiscreteDist& p, const DiscreteDist& q) { return kl(p, q) + kl(q, p); }

/// Sum of |p_i - q_i|.
inline double l1_distance(const DiscreteDist& p, const DiscreteDist& q) {
  detail::same_support(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s;
}

struct ObjectiveGap {
  double lhs = 0.0;  // E_p[f] - E_q[f], f = ln(p/q)
  double rhs = 0.0;  // Jeffreys divergence
  double gap = 0.0;
};

/// With the log-ratio critic, the Wasserstein objective equals the Jeffreys divergence.
inline ObjectiveGap objective_gap(const DiscreteDist& p, const DiscreteDist& q) {
  detail::same_support(p, q);
  double ep = 0.0, eq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0 || q[i] == 0.0) throw UsageError("objective_gap: needs mutually positive distributions");
    const double f = std::log(p[i]) - std::log(q[i]);
    ep += p[i] * f;
    eq += q[i] * f;
  }
  ObjectiveGap g;
  g.lhs = ep - eq;
  g.rhs = jeffreys(p, q);
  g.gap = std::abs(g.lhs - g.rhs);
  return g;
}

struct BoundCheck {
  std::string name;
  double lower = 0.0;  // the inequality claims lower <= upper
  double upper = 0.0;
  double margin() const { return upper - lower; }
  bool holds(double tol = 0.0) const { return lower <= upper + tol; }
};

struct BoundReport {
  double l1 = 0.0;
  double p_min = 0.0;
  double kl_pq = 0.0;
  double kl_qp = 0.0;
  double jeffreys = 0.0;
  std::vector<BoundCheck> checks;

  std::size_t violations(double tol = 0.0) const {
    std::size_t n = 0;
    for (const auto& c : checks) n += !c.holds(tol);
    return n;
  }
};

/// The bound chain relating the Jeffreys divergence, both KL directions and the L1 distance:
///   pinsker:        1/2 |p-q|^2 <= KL(q||p)
///   reverse:        KL(q||p) <= |p-q|^2 / p_min
///   sandwich_lower: (1 + p_min/2) KL(p||q) <= J(p,q)
///   sandwich_upper: J(p,q) <= (1 + 2/p_min) KL(p||q)
inline BoundReport bound_suite(const DiscreteDist& p, const DiscreteDist& q) {
  detail::same_support(p, q);
  BoundReport r;
  r.p_min = p.min();
  if (!(r.p_min > 0.0)) throw UsageError("bound_suite: p must be strictly positive (p_min = 0)");
  r.l1 = l1_distance(p, q);
  r.kl_pq = kl(p, q);
  r.kl_qp = kl(q, p);
  r.jeffreys = r.kl_pq + r.kl_qp;
  r.checks = {
      {"pinsker", 0.5 * r.l1 * r.l1, r.kl_qp},
      {"reverse_pinsker", r.kl_qp, r.l1 * r.l1 / r.p_min},
      {"sandwich_lower", (1.0 + r.p_min / 2.0) * r.kl_pq, r.jeffreys},
      {"sandwich_upper", r.jeffreys, (1.0 + 2.0 / r.p_min) * r.kl_pq},
  };
  return r;
}

/// Uniform-Dirichlet draw (normalized exponentials), floored at `floor` and renormalized; the floor
/// is applied as floor + (1 - K floor) * w so every entry is >= floor exactly.
inline DiscreteDist random_dist(std::size_t support, double floor, Rng& rng) {
  if (support < 1) throw UsageError("random_dist: support must be >= 1");
  if (!(floor >= 0.0) || floor * static_cast<double>(support) >= 1.0)
    throw UsageError("random_dist: floor * support must be < 1");
  std::exponential_distribution<double> e(1.0);
  std::vector<double> w(support);
  double s = 0.0;
  for (double& v : w) s += (v = e(rng));
  for (double& v : w) v = floor + (1.0 - floor * static_cast<double>(support)) * (v / s);
  // Fold the rounding residue into the largest entry so the sum is 1 to within an ulp or two.
  double t = 0.0;
  for (double v : w) t += v;
  *std::max_element(w.begin(), w.end()) += 1.0 - t;
  return DiscreteDist(std::move(w));
}

struct SweepSettings {
  std::size_t trials = 1000;
  std::size_t max_support = 16;
  std::size_t min_support = 2;
  double floor = 1e-3;
  std::uint64_t seed = 0;
};

struct SweepSummary {
  std::size_t trials = 0;
  double max_objective_gap = 0.0;
  std::vector<std::string> names;        // per bound
  std::vector<std::size_t> violations;   // per bound
  std::vector<double> worst_margin;      // per bound, smallest upper - lower
};

/// Random pairs with support drawn uniformly from [min_support, max_support].
inline SweepSummary divergence_sweep(const SweepSettings& s) {
  if (s.min_support < 1 || s.max_support < s.min_support) throw UsageError("sweep: bad support range");
  Rng rng = make_rng(s.seed, Stream::Evaluation);
  SweepSummary out;
  out.trials = s.trials;
  for (std::size_t t = 0; t < s.trials; ++t) {
    const std::size_t k = s.min_support + uniform_index(rng, s.max_support - s.min_support + 1);
    const DiscreteDist p = random_dist(k, s.floor, rng), q = random_dist(k, s.floor, rng);
    out.max_objective_gap = std::max(out.max_objective_gap, objective_gap(p, q).gap);
    const BoundReport r = bound_suite(p, q);
    if (out.names.empty()) {
      for (const auto& c : r.checks) out.names.push_back(c.name);
      out.violations.assign(r.checks.size(), 0);
      out.worst_margin.assign(r.checks.size(), std::numeric_limits<double>::infinity());
    }
    for (std::size_t i = 0; i < r.checks.size(); ++i) {
      out.violations[i] += !r.checks[i].holds();
      out.worst_margin[i] = std::min(out.worst_margin[i], r.checks[i].margin());
    }
  }
  return out;
}

}  // namespace winn
