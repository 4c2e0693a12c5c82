#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "scorelab/distill.hpp"
#include "scorelab/errors.hpp"
#include "scorelab/oracle.hpp"
#include "scorelab/sampler.hpp"

namespace scorelab::cli {

inline constexpr std::string_view kExperimentSchema = "scorelab.experiment/1";
inline constexpr std::string_view kReportSchema = "scorelab.report/1";

// Anything wrong with a config file. field() is a dotted path into it.
class ConfigError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

enum class ExperimentKind { Sample, Compare, Interp, Ablate, Distill };
std::string_view to_string(ExperimentKind kind) noexcept;
/// Also accepts the long names compare-composers, interp-sweep, ablate-weights.
ExperimentKind parse_kind(std::string_view name);

struct SampleSpec {
  SampleRun proto;  // seed and label filled per run
  std::string target;
  bool trajectories = false;
};

struct CompareSpec {
  std::string target;
  Condition positive;
  double guidance = 7.5;
  double w_pos = 1.0;
  std::vector<ComposerKind> composers;
  std::vector<std::vector<NegativePrompt>> combinations;
};

struct InterpSpec {
  std::vector<ViewPair> pairs;
  std::vector<double> rs;
  int samples = 1000;
  double guidance = 7.5;
  ViewPromptPlan plan;
  std::optional<WeightFnGrid> grid;  // select f parameters before sweeping
  int select_samples = 10;
};

struct AblateSpec {
  std::string target;
  Condition positive;
  double guidance = 7.5;
  double w_pos = 1.0;
  std::vector<ComposerKind> composers;
  std::vector<double> weights;
  std::vector<std::string> negatives;
};

struct DistillSpec {
  std::vector<DistillVariant> variants;
  int bins = 24;
  double init_scale = 0.5;
  std::uint64_t scene_seed_offset = 1000;
  SDSConfig sds;
  ViewPromptPlan plan;
  int log_every = 1;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<int> threads;
};

/// A validated config with its world loaded and every label resolved.
struct Experiment {
  ExperimentKind kind = ExperimentKind::Sample;
  nlohmann::json config;  // effective config, overrides applied, without out and threads
  OracleWorld world;
  std::string config_hash;  // 16 hex digits
  std::filesystem::path out_dir;
  int threads = 1;
  std::uint64_t first_seed = 0;
  int seed_count = 1;
  int samples_per_seed = 1;
  int steps = 50;
  double eta = 0.0;
  std::variant<SampleSpec, CompareSpec, InterpSpec, AblateSpec, DistillSpec> spec;
};

/// Relative paths inside the config (the world file) resolve against
/// `base_dir`. Throws ConfigError naming the field on any problem.
Experiment parse_experiment(const nlohmann::json& config, const std::filesystem::path& base_dir,
                            const Overrides& overrides = {});
Experiment load_experiment(const std::filesystem::path& config_path,
                           const Overrides& overrides = {});

struct SummaryTable {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct RunResult {
  SummaryTable summary;
  std::vector<std::filesystem::path> files;  // in write order
};

/// Runs the experiment and writes its files into out_dir. Every file records
/// the config hash. Throws DivergenceError if a distillation blows up.
RunResult run_experiment(const Experiment& experiment);

void print_table(std::ostream& os, const SummaryTable& table);

/// Reads <dir>/report.json written by run_experiment.
SummaryTable read_report_summary(const std::filesystem::path& dir, std::string* config_hash = nullptr);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace scorelab::cli
