#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gdc/baselines.hpp"
#include "gdc/dpg.hpp"
#include "gdc/ebm.hpp"
#include "gdc/error.hpp"

namespace gdc {

inline constexpr std::string_view kVersion = "0.1.0";

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "GDC_OUTPUT_ROOT";

struct BaseModelConfig {
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> model;
  int order = 2;
  double smoothing = 1.0;
  /// Optional fixed vocabulary for corpus tokenization.
  std::vector<std::string> vocabulary;
};

/// One entry of the constraints list, kept unresolved until the vocabulary is known.
struct ConstraintConfig {
  std::string id;
  std::string kind;
  std::vector<std::string> tokens;       // token_presence (one), wordlist_presence, prefix_match
  std::vector<std::string> numerator;    // token_ratio
  std::vector<std::string> denominator;  // token_ratio
  double empty_value = 0.0;              // token_ratio
  std::vector<std::pair<std::string, double>> table;  // predicate_table: rendered sequence -> value
  double fallback = 0.0;
  FeatureRange range = FeatureRange::Binary;
  double target = 0.0;
  bool pointwise = false;
};

enum class FitMethod { Snis, Exact };

struct FitSection {
  FitConfig config;
  FitMethod method = FitMethod::Snis;
  /// Skips fitting and uses these lambdas directly.
  std::optional<std::vector<double>> lambda;
};

struct TrainerSection {
  std::string method = "gdc";  // gdc or a baseline kind
  DpgConfig dpg;
  BaselineConfig baseline;
};

struct EvalSection {
  std::size_t eval_every = 10;
  std::size_t sample_size = 1000;
  bool exact_oracle = false;
  /// eval subcommand: model file to score; defaults to <output>/policy.json.
  std::optional<std::filesystem::path> model;
};

struct AblationSection {
  std::vector<Adaptivity> variants{Adaptivity::Kl, Adaptivity::Tvd, Adaptivity::None};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double kl_threshold = 0.1;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t lmax = 0;
  BaseModelConfig base_model;
  std::vector<ConstraintConfig> constraints;
  FitSection fit;
  TrainerSection trainer;
  EvalSection eval;
  AblationSection ablation;
  std::optional<std::filesystem::path> output;
  /// Name used for the default output directory.
  std::string name = "experiment";
  /// The parsed document, echoed into manifests.
  std::string document;
};

/// Parses a JSON experiment document. Relative paths resolve against
/// `base_dir`. Throws ConfigError with the offending field path.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// --output, else the config's output (relative to $GDC_OUTPUT_ROOT when
/// set), else $GDC_OUTPUT_ROOT/<name>, else runs/<name>.
std::filesystem::path resolve_output(const ExperimentConfig& config, const std::optional<std::filesystem::path>& flag);

/// Base model and constraint set resolved against its vocabulary.
struct Problem {
  std::shared_ptr<const TabularARModel> base;
  ConstraintSet constraints;
};

Problem build_problem(const ExperimentConfig& config);

struct RunManifest {
  std::string subcommand;
  std::map<std::string, std::filesystem::path> artifacts;
  double wall_clock_seconds = 0.0;
};

RunManifest run_fit(const ExperimentConfig& config, const std::filesystem::path& out);
RunManifest run_train(const ExperimentConfig& config, const std::filesystem::path& out);
RunManifest run_ablation(const ExperimentConfig& config, const std::filesystem::path& out);
RunManifest run_oracle(const ExperimentConfig& config, const std::filesystem::path& out);
RunManifest run_eval(const ExperimentConfig& config, const std::filesystem::path& out);

/// A distribution with the same moments as `p`, built as p (1 + eps h) with h
/// orthogonal to 1 and to every feature under p.
std::vector<double> moment_matched_member(std::span<const double> p, const std::vector<std::vector<double>>& features,
                                          std::uint64_t seed, double strength = 0.5);

/// |KL(c, a) - KL(c, p) - KL(p, a)|.
double pythagorean_residual(std::span<const double> c, std::span<const double> p, std::span<const double> a);

/// 0 success, 2 configuration, 3 numerical failure, 4 universe guard.
int exit_code(ErrorKind kind);

}  // namespace gdc
