#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "finv/finv.hpp"

namespace finv::app {

using json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- serialization -------------------------------------------------------

json vec_to_json(const Vec& v);
json mat_to_json(const Mat& m);
Vec vec_from_json(const json& j, const std::string& what);
Mat mat_from_json(const json& j, const std::string& what);

json to_json(const Ellipsoid& e);
Ellipsoid ellipsoid_from_json(const json& j);
json to_json(const PacCertificate& c);
PacCertificate certificate_from_json(const json& j);
json to_json(const RbfSet& s);
RbfSet rbf_from_json(const json& j);

/// Shortest text that reads back to the same double.
std::string format_double(double x);

// ---- systems -------------------------------------------------------------

struct BuiltSystem {
  std::string name;
  PoincareMap map;
  json block;  // {"name", "params"} with every default filled in
  bool hybrid = false;
  std::optional<Vec> fixed_point_seed;
};

/// Accepts "name" or {"name": ..., "params": {...}}.
BuiltSystem build_system(const json& block, const IntegrationOptions& integration);

/// Built-in systems with their default parameters.
json builtin_systems();

// ---- configuration -------------------------------------------------------

struct InitSpec {
  enum class Kind { Explicit, Contraction } kind = Kind::Explicit;
  std::optional<Ellipsoid> ellipsoid;
  double r = 0.0;
  std::optional<Vec> fixed_point_seed;
};

struct RunConfig {
  json system;
  std::string representation = "ellipsoid";
  std::size_t rbf_m = 2;
  double rbf_gamma = kDefaultRbfGamma;
  bool rbf_warm_start = false;
  std::size_t samples = 1000;
  double eps_target = 0.03;
  double beta = 1e-9;
  int max_iters = 200;
  std::uint64_t seed = 0;
  InitSpec init;
  IntegrationOptions integration;
  int k_max = 0;
  std::size_t verify_samples = 0;  // 0: same as samples
  bool keep_samples = true;
  std::string output_dir;
  std::string name;  // stem of the config file

  json to_json() const;
};

/// Parses a config document. Unknown keys and malformed values raise
/// ConfigError naming the offending line.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// ---- execution -----------------------------------------------------------

struct HistoryRow {
  int iteration = 0;
  double volume = 0.0;
  std::size_t violations = 0;
  double epsilon_star = 1.0;
  double wall_ms = 0.0;
};

using Region = std::variant<Ellipsoid, RbfSet>;

struct Outcome {
  Termination termination = Termination::Budget;
  int iteration = 0;
  PacCertificate certificate;
  Region region;
  Ellipsoid initial;
  std::vector<HistoryRow> history;
  std::vector<SampleBatch> batches;  // empty unless samples are kept
  json linearization;                // null for explicit initial sets
};

struct ExecOptions {
  unsigned threads = 0;
  bool keep_samples = false;
  bool record_timing = false;
};

/// Full pipeline: system, initial set (fixed point, Jacobian and contraction
/// metric when asked for), then the invariant-set search.
Outcome execute(const RunConfig& cfg, const ExecOptions& opt);

std::vector<KStepPoint> verify_region(const PoincareMap& map, const Region& region,
                                      std::size_t samples, int k_max, double beta,
                                      std::uint64_t seed, unsigned threads);

// ---- output --------------------------------------------------------------

void write_history_csv(const std::filesystem::path& file, const std::vector<HistoryRow>& rows);
void write_kstep_csv(const std::filesystem::path& file, const std::vector<KStepPoint>& curve);
void write_samples_csv(const std::filesystem::path& file, const SampleBatch& batch, int dim);
json result_json(const RunConfig& cfg, const Outcome& out);

/// --out beats the config's output_dir, which beats FINV_OUTPUT_ROOT/<name>,
/// which beats ./runs/<name>.
std::filesystem::path resolve_output_dir(const RunConfig& cfg, const std::string& override_dir);

// ---- commands ------------------------------------------------------------

struct CommandOptions {
  unsigned threads = 0;
  std::string out;
  bool record_timing = false;
};

int cmd_run(const std::filesystem::path& config, const CommandOptions& opt, std::ostream& log);
int cmd_verify(const std::filesystem::path& result, int k_max, std::size_t samples,
               std::uint64_t seed, const CommandOptions& opt, std::ostream& log);
int cmd_study(const std::filesystem::path& config, int runs, const CommandOptions& opt,
              std::ostream& log);
int cmd_systems(std::ostream& out);

/// Command-line entry point; returns the process exit code.
int main_entry(int argc, char** argv);

}  // namespace finv::app
