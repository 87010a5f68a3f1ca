#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "segsel/embedding.hpp"
#include "segsel/signal.hpp"
#include "segsel/stats.hpp"
#include "segsel/trainer.hpp"

namespace segsel {

/// Invalid experiment configuration. Carries every problem found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Per-seed variation that turns one generator configuration into a population of
/// synthetic subjects.
struct SubjectVariation {
  /// SNR drawn uniformly from this range per subject (otherwise generator.snr).
  std::optional<Range> snr;
  /// Multiplier on the burst duration range drawn uniformly per subject.
  std::optional<Range> duration_scale;
  /// Randomly reassign channels to the two class groups per subject.
  bool shuffle_channels = false;
};

struct DataConfig {
  std::size_t n_train = 100;
  std::size_t n_test = 100;
  double fraction_class1 = 0.5;
  /// Recorded data instead of the generator (trial binary file or a directory of trial CSVs).
  std::optional<std::filesystem::path> train_file;
  std::optional<std::filesystem::path> test_file;
  /// Sample rate assumed for CSV trials.
  double csv_sample_rate = 1000.0;
};

struct TraceConfig {
  std::vector<std::size_t> channels{0};
  std::size_t trials = 4;
  std::size_t window = 32;
  std::size_t hop = 4;
};

struct ExperimentConfig {
  GeneratorConfig generator = default_generator_config();
  SubjectVariation subjects;
  DataConfig data;
  PreprocessConfig preprocess;
  EmbeddingConfig embedding;
  TrainConfig train;
  TraceConfig traces;
  std::filesystem::path output_dir = "runs";
  std::vector<std::uint64_t> seeds{0};
};

/// Parses JSON text. Unknown keys and invalid values are collected and reported together.
ExperimentConfig parse_experiment_config(std::string_view json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Generator settings of synthetic subject `seed`.
GeneratorConfig subject_generator(const ExperimentConfig& cfg, std::uint64_t seed);

struct SubjectData {
  std::vector<Trial> train;  ///< preprocessed
  std::vector<Trial> test;   ///< preprocessed
};

/// Raw (unpreprocessed) trials of one subject.
std::pair<std::vector<Trial>, std::vector<Trial>> raw_subject_data(const ExperimentConfig& cfg, std::uint64_t seed);
SubjectData subject_data(const ExperimentConfig& cfg, std::uint64_t seed);

std::filesystem::path subject_dir(const ExperimentConfig& cfg, std::uint64_t seed);

struct SubjectMetrics {
  std::uint64_t seed = 0;
  double accuracy = 0.0;  ///< percent
  double selection_fraction = 0.0;
  double in_mask_rate = 0.0;
  double out_mask_rate = 0.0;
  double mask_coverage = 0.0;
};

/// Writes `<subject>/predictions.csv` and returns the subject's summary.
SubjectMetrics evaluate_subject(const ExperimentConfig& cfg, std::uint64_t seed, const Networks& nets,
                                const std::vector<Trial>& test);

/// Writes `accuracies.csv` and `metrics.json` (mean/SD/median/max/min over subjects) in the output directory.
void write_metrics(const ExperimentConfig& cfg, const std::vector<SubjectMetrics>& subjects);

/// Writes raw trials to `<out>/subject-<seed>/{train,test}.sgtr` for every seed.
void cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out);
/// Trains every subject, then evaluates it on its test trials.
std::vector<SubjectMetrics> cmd_train(const ExperimentConfig& cfg);
/// Re-evaluates saved models.
std::vector<SubjectMetrics> cmd_eval(const ExperimentConfig& cfg);
/// Per-trial action traces, input-aligned selections, mask overlays and spectrograms.
void cmd_traces(const ExperimentConfig& cfg);

struct Comparison {
  std::vector<std::uint64_t> seeds;
  std::vector<double> a;  ///< percent
  std::vector<double> b;
  WilcoxonResult test;
};

/// Pairs per-subject accuracies of two metrics files by seed and runs the signed-rank test.
Comparison cmd_compare(const std::filesystem::path& metrics_a, const std::filesystem::path& metrics_b,
                       const std::optional<std::filesystem::path>& out);

}  // namespace segsel
