#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "finv/ellipsoid.hpp"
#include "finv/hybrid.hpp"
#include "finv/mvee.hpp"
#include "finv/pac.hpp"
#include "finv/parallel.hpp"

namespace finv {

/// One iteration's paired samples and the containment partition:
/// U = inputs whose images stayed inside, W = those images,
/// Z = inputs whose images escaped (or failed to evaluate), V = escaped images.
struct SampleBatch {
  std::vector<Vec> inputs;
  std::vector<std::optional<Vec>> outputs;  // nullopt: map evaluation failed
  std::vector<bool> contained;

  std::size_t size() const { return inputs.size(); }

  std::size_t violations() const {
    std::size_t v = 0;
    for (bool c : contained) v += c ? 0 : 1;
    return v;
  }

  std::vector<Vec> inliers() const { return select(inputs, true); }   // U
  std::vector<Vec> outliers() const { return select(inputs, false); } // Z

  std::vector<Vec> contained_images() const {  // W
    std::vector<Vec> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (contained[i]) out.push_back(*outputs[i]);
    return out;
  }

  /// V; failed evaluations have no image and are omitted.
  std::vector<Vec> escaped_images() const {
    std::vector<Vec> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (!contained[i] && outputs[i]) out.push_back(*outputs[i]);
    return out;
  }

 private:
  std::vector<Vec> select(const std::vector<Vec>& from, bool flag) const {
    std::vector<Vec> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (contained[i] == flag) out.push_back(from[i]);
    return out;
  }
};

/// Splits samples by whether their images lie in `region` (closed test).
template <class Region>
SampleBatch partition(const Region& region, std::vector<Vec> inputs,
                      std::vector<std::optional<Vec>> outputs) {
  require(inputs.size() == outputs.size(), "partition: inputs and outputs differ in length");
  SampleBatch batch{std::move(inputs), std::move(outputs), {}};
  batch.contained.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& y = batch.outputs[i];
    batch.contained[i] = y && y->allFinite() && region.contains(*y);
  }
  return batch;
}

/// Evaluates the map on every input in parallel. Evaluation failures and
/// non-finite images become nullopt.
inline std::vector<std::optional<Vec>> evaluate_map(const PoincareMap& map,
                                                    const std::vector<Vec>& inputs,
                                                    unsigned threads, int steps = 1) {
  std::vector<std::optional<Vec>> out(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    try {
      Vec y = map.iterate(inputs[i], steps);
      if (y.allFinite()) out[i] = std::move(y);
    } catch (const MapEvaluationError&) {
    }
  });
  return out;
}

struct RunOptions {
  std::size_t samples = 1000;
  double eps_target = 0.03;
  double beta = 1e-9;
  int max_iters = 200;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  /// Retain every iteration's SampleBatch in the history.
  bool keep_samples = false;
  MveeOptions mvee;

  void validate(int dim) const {
    require(eps_target > 0.0 && eps_target < 1.0, "eps_target must lie in (0, 1)");
    require(beta > 0.0 && beta < 1.0, "beta must lie in (0, 1)");
    require(max_iters >= 1, "max_iters must be at least 1");
    require(samples >= static_cast<std::size_t>(dim) + 1, "samples must be at least dim + 1");
  }
};

enum class Termination { Certified, Budget };

inline const char* to_string(Termination t) {
  return t == Termination::Certified ? "certified" : "budget";
}

template <class Region>
struct IterationRecord {
  int iteration = 0;  // 1-based
  Region region;
  double volume = 0.0;
  std::size_t violations = 0;
  double epsilon_star = 1.0;
  double wall_ms = 0.0;
  std::optional<SampleBatch> batch;
};

template <class Region>
struct RunResult {
  Region region;
  PacCertificate certificate;
  Termination termination = Termination::Budget;
  int iteration = 0;  // iteration whose region is returned
  std::vector<IterationRecord<Region>> history;
};

/// Every sample escaped (or nearly so): there is nothing left to refit.
class CollapseError : public std::runtime_error {
 public:
  CollapseError(const std::string& what, std::vector<std::size_t> violation_history)
      : std::runtime_error(what), violation_history_(std::move(violation_history)) {}
  const std::vector<std::size_t>& violation_history() const { return violation_history_; }

 private:
  std::vector<std::size_t> violation_history_;
};

/// Sample streams 1..max_iters belong to the search iterations; verification
/// draws from streams above this offset.
inline constexpr std::uint64_t kVerifyStreamBase = 1ull << 32;

/// The sampling–partition–certify–refit loop.
///
/// Each iteration draws `samples` points uniformly from the current region,
/// maps them, and certifies the region with the holdout bound on the count of
/// escaped images. A certified region is returned as is, with the certificate
/// computed from samples that were never used to fit it. Otherwise the region
/// is refit to the inliers U. When the budget runs out the iterate with the
/// smallest ε* is returned.
template <class Region, class Refit>
RunResult<Region> run_search(const PoincareMap& map, Region initial, Refit&& refit,
                             std::size_t min_inliers, const RunOptions& opt) {
  opt.validate(map.dim());
  require(initial.dim() == map.dim(), "initial region and map dimensions differ");
  using Clock = std::chrono::steady_clock;

  RunResult<Region> result{initial, {}, Termination::Budget, 0, {}};
  Region current = std::move(initial);
  std::vector<std::size_t> violation_history;
  std::optional<std::size_t> best;

  for (int it = 1; it <= opt.max_iters; ++it) {
    const auto start = Clock::now();
    std::vector<Vec> inputs =
        sample_uniform(current, opt.samples, opt.seed, static_cast<std::uint64_t>(it));
    auto outputs = evaluate_map(map, inputs, opt.threads);
    SampleBatch batch = partition(current, std::move(inputs), std::move(outputs));
    const PacCertificate cert = certify(batch.contained, opt.beta, 1);
    violation_history.push_back(static_cast<std::size_t>(cert.violations));

    IterationRecord<Region> rec{it, current, current.volume(),
                                static_cast<std::size_t>(cert.violations),
                                cert.epsilon_star, 0.0, std::nullopt};
    if (!best || cert.epsilon_star < result.history[*best].epsilon_star)
      best = result.history.size();

    if (cert.epsilon_star <= opt.eps_target) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      if (opt.keep_samples) rec.batch = std::move(batch);
      result.history.push_back(std::move(rec));
      result.region = std::move(current);
      result.certificate = cert;
      result.termination = Termination::Certified;
      result.iteration = it;
      return result;
    }

    std::vector<Vec> inliers = batch.inliers();
    if (inliers.size() < min_inliers) {
      std::ostringstream msg;
      msg << "candidate set collapsed at iteration " << it << ": " << inliers.size()
          << " of " << opt.samples << " samples returned inside (need " << min_inliers
          << "); violation history:";
      for (auto v : violation_history) msg << ' ' << v;
      msg << ". Enlarge the initial set (e.g. a larger contraction scale r) so it "
             "contains the invariant set.";
      throw CollapseError(msg.str(), violation_history);
    }
    Region next = refit(inliers, current);
    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    if (opt.keep_samples) rec.batch = std::move(batch);
    result.history.push_back(std::move(rec));
    current = std::move(next);
  }

  const auto& b = result.history[*best];
  result.region = b.region;
  result.certificate =
      certify_counts(static_cast<std::int64_t>(b.violations),
                     static_cast<std::int64_t>(opt.samples), opt.beta, 1);
  result.termination = Termination::Budget;
  result.iteration = b.iteration;
  return result;
}

/// Invariant ellipsoid search with minimum-volume refits.
inline RunResult<Ellipsoid> run(const PoincareMap& map, const Ellipsoid& initial,
                                const RunOptions& opt) {
  auto refit = [&opt](const std::vector<Vec>& inliers, const Ellipsoid&) {
    return mvee(inliers, opt.mvee).ellipsoid;
  };
  return run_search(map, initial, refit, static_cast<std::size_t>(map.dim()) + 1, opt);
}

struct KStepPoint {
  int k = 0;
  PacCertificate certificate;
};

/// k-step holdout curve: for each k, fresh samples from the region are
/// pushed through k applications of the map and the k-th iterate is tested.
template <class Region>
std::vector<KStepPoint> verify_k_step(const PoincareMap& map, const Region& region,
                                      std::size_t samples, int k_max, double beta,
                                      std::uint64_t seed, unsigned threads = 0) {
  require(k_max >= 1, "k_max must be at least 1");
  require(samples >= 1, "verification needs at least one sample");
  require(beta > 0.0 && beta <= 1.0, "beta must lie in (0, 1]");
  std::vector<KStepPoint> curve;
  for (int k = 1; k <= k_max; ++k) {
    std::vector<Vec> inputs =
        sample_uniform(region, samples, seed, kVerifyStreamBase + static_cast<std::uint64_t>(k));
    auto outputs = evaluate_map(map, inputs, threads, k);
    const SampleBatch batch = partition(region, std::move(inputs), std::move(outputs));
    curve.push_back({k, certify(batch.contained, beta, k)});
  }
  return curve;
}

}  // namespace finv
