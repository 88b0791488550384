#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "finv/linalg.hpp"

namespace finv {

/// Lower binomial tail Σ_{j≤v} C(N,j) eᶨ (1−e)^{N−j}.
///
/// Terms are summed outward from the largest one in relative units, starting
/// from a log-space anchor, so the cost is O(√N) and nothing overflows for N
/// in the tens of millions. When v sits above the mode the upper tail is
/// summed instead and subtracted from one.
inline double binomial_cdf(std::int64_t v, std::int64_t n, double e) {
  require(n >= 0 && v >= 0 && v <= n, "binomial_cdf requires 0 <= v <= N");
  require(e >= 0.0 && e <= 1.0, "binomial_cdf requires e in [0, 1]");
  if (v >= n || e <= 0.0) return 1.0;
  if (e >= 1.0) return 0.0;

  using ld = long double;
  const ld p = e;
  const ld log_p = std::log(p);
  const ld log_q = std::log1p(-p);
  auto log_term = [&](std::int64_t j) {
    return std::lgamma(static_cast<ld>(n) + 1) - std::lgamma(static_cast<ld>(j) + 1) -
           std::lgamma(static_cast<ld>(n - j) + 1) + static_cast<ld>(j) * log_p +
           static_cast<ld>(n - j) * log_q;
  };
  constexpr ld kNegligible = 1e-21L;
  const ld odds = p / (1 - p);
  const auto mode = static_cast<std::int64_t>(std::floor(static_cast<ld>(n + 1) * p));

  if (v < mode) {
    // Terms increase up to j = v; walk down from there.
    ld sum = 1, term = 1;
    for (std::int64_t j = v; j > 0; --j) {
      term *= static_cast<ld>(j) / (static_cast<ld>(n - j + 1) * odds);
      sum += term;
      if (term < kNegligible * sum) break;
    }
    return static_cast<double>(std::exp(log_term(v)) * sum);
  }
  // Terms decrease from j = v + 1 upward.
  ld sum = 1, term = 1;
  for (std::int64_t j = v + 1; j < n; ++j) {
    term *= static_cast<ld>(n - j) / static_cast<ld>(j + 1) * odds;
    sum += term;
    if (term < kNegligible * sum) break;
  }
  const ld upper = std::exp(log_term(v + 1)) * sum;
  return static_cast<double>(upper >= 1 ? 0.0L : 1 - upper);
}

/// Largest e with Bin(v, N, e) ≥ β, by bisection on [v/N, 1] to 1e-12.
inline double binomial_tail_inversion(std::int64_t v, std::int64_t n, double beta) {
  require(n >= 1 && v >= 0 && v <= n, "tail inversion requires 0 <= v <= N, N >= 1");
  require(beta > 0.0 && beta <= 1.0, "tail inversion requires beta in (0, 1]");
  if (v == n) return 1.0;
  double lo = static_cast<double>(v) / static_cast<double>(n);
  if (binomial_cdf(v, n, lo) < beta) lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (binomial_cdf(v, n, mid) >= beta)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

/// Holdout certificate: with confidence 1 − β over the draw of the N test
/// samples, the k-step violation probability is at most epsilon_star.
struct PacCertificate {
  std::int64_t violations = 0;
  std::int64_t samples = 0;
  double beta = 0.0;
  double epsilon_star = 1.0;
  int steps = 1;

  bool operator==(const PacCertificate&) const = default;
};

inline PacCertificate certify_counts(std::int64_t violations, std::int64_t samples,
                                     double beta, int steps = 1) {
  require(steps >= 1, "certificate steps must be positive");
  return PacCertificate{violations, samples, beta,
                        binomial_tail_inversion(violations, samples, beta), steps};
}

/// Certificate from per-sample containment flags (true = stayed inside).
inline PacCertificate certify(std::span<const bool> contained, double beta, int steps = 1) {
  require(!contained.empty(), "certify requires at least one flag");
  std::int64_t violations = 0;
  for (bool c : contained) violations += c ? 0 : 1;
  return certify_counts(violations, static_cast<std::int64_t>(contained.size()), beta,
                        steps);
}

inline PacCertificate certify(const std::vector<bool>& contained, double beta,
                              int steps = 1) {
  std::int64_t violations = 0;
  for (bool c : contained) violations += c ? 0 : 1;
  require(!contained.empty(), "certify requires at least one flag");
  return certify_counts(violations, static_cast<std::int64_t>(contained.size()), beta,
                        steps);
}

}  // namespace finv
