#pragma once

// Experiment harness: end-to-end runs, the S+T baseline, ablations, sweeps
// and embedding export.

#include "ssda/data.hpp"
#include "ssda/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ssda {

enum class FractionScope { kLabeled, kUnlabeled, kBoth };

std::string to_string(FractionScope s);
FractionScope fraction_scope_from_string(const std::string& s);

struct DatasetSource {
  enum class Kind { kSynthetic, kIdx };

  Kind kind = Kind::kSynthetic;
  SyntheticShiftSpec synthetic = default_benchmark_spec();
  std::string source_images;
  std::string source_labels;
  std::string target_images;
  std::string target_labels;
  /// Stratified subsample size per domain for IDX data; 0 keeps everything.
  Index subset = 0;
  /// Common image side for IDX data (both domains are resampled to it).
  Index side = 28;
  std::uint64_t data_seed = 7;
};

struct ExperimentConfig {
  DatasetSource data;
  int k_shot = 3;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> beta_sweep{1e-4, 1e-3, 1e-2, 0.1, 0.25, 1.0};
  std::vector<double> fraction_sweep{1.0 / 3.0, 2.0 / 3.0, 1.0};
  FractionScope fraction_scope = FractionScope::kLabeled;
  std::string output_dir;
  Index embedding_samples = 2000;
  bool compare_baseline = true;
  bool monitor_accuracy = true;
  bool write_checkpoints = true;
  int jobs = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& cfg);
void from_json(const nlohmann::json& j, ExperimentConfig& cfg);
void to_json(nlohmann::json& j, const DatasetSource& d);
void from_json(const nlohmann::json& j, DatasetSource& d);

/// FNV-1a of the canonical JSON form of the config.
std::string config_hash(const ExperimentConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::optional<double> baseline_accuracy;
  double mmd_before = 0.0;
  double mmd_after = 0.0;
  int stage1_epochs = 0;
  std::vector<EpochLog> history;
};

struct RunReport {
  std::string method;  // "ssda" or "s+t"
  ExperimentConfig config;
  std::string config_hash;
  std::vector<SeedResult> seeds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::optional<double> baseline_mean_accuracy;
  double wall_clock_seconds = 0.0;

  /// Full report. Timing is included only when requested so that the
  /// remaining content is reproducible bit-for-bit.
  nlohmann::json to_json(bool include_timing = true) const;
  /// Hash of to_json(false).
  std::string content_hash() const;
};

/// Data for one seed after the k-shot split.
struct PreparedData {
  LabeledDataset source;
  KShotSplit split;
};

/// Loads or generates both domains (identical across seeds) and draws the
/// seed's k-shot split.
PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed);

/// Fraction of D_u rows whose predicted label matches the hidden label.
double target_accuracy(const TargetModel& model, const UnlabeledSet& du);

/// Runs all three stages for every seed and evaluates on D_u. Writes
/// report.json, losses.csv, and per-seed checkpoints when output_dir is set.
RunReport run_experiment(const ExperimentConfig& cfg);

/// Same protocol with the S+T model.
RunReport run_s_plus_t_baseline(const ExperimentConfig& cfg);

struct AblationRow {
  std::string name;
  double beta = 0.0;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::string to_csv() const;
  nlohmann::json to_json() const;
  const AblationRow* find(const std::string& name) const;
};

/// Rows: full, disable_mmd, sequential_learning, then one row per beta in
/// the sweep (named "beta=<value>"). Baseline comparison is skipped.
AblationTable run_ablations(const ExperimentConfig& cfg, bool include_beta_sweep = true);

/// Beta sweep rows only.
AblationTable run_beta_sweep(const ExperimentConfig& cfg);

struct FractionPoint {
  double fraction = 0.0;
  std::vector<double> accuracies;
  double mean = 0.0;
  double std = 0.0;
};

struct FractionCurve {
  std::vector<FractionPoint> points;
  std::string to_csv() const;
};

/// Subsamples D_l (and/or D_u, per fraction_scope) to each fraction and
/// reports seed-averaged accuracy. Throws ConfigError when a fraction leaves
/// a class without labeled samples.
FractionCurve run_fraction_sweep(const ExperimentConfig& cfg);

/// Writes "sample_id,label,f0..f{b-1}" rows for a seeded random subset of at
/// most `max_samples` rows, in ascending sample order.
void export_embeddings(std::span<const DenseLayer> encoder, const Matrix& samples,
                       std::span<const int> labels, const std::filesystem::path& out_path,
                       Index max_samples = 2000, std::uint64_t seed = 0);

std::string losses_csv(const std::vector<EpochLog>& history);

double mean(const std::vector<double>& v);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(const std::vector<double>& v);

}  // namespace ssda
