#pragma once

// Simultaneous learning of coupled source/target auto-encoders, followed by
// classifier training on the source encoder and fine-tuning on the target
// encoder.

#include "ssda/data.hpp"
#include "ssda/losses.hpp"
#include "ssda/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace ssda {

struct TrainConfig {
  double beta = 0.25;
  double learning_rate = 1e-3;
  Index batch_size = 64;
  int max_epochs_stage1 = 200;
  int max_epochs_stage2 = 100;
  int max_epochs_stage3 = 100;
  int patience = 10;
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
  bool use_unlabeled_recon = false;
  bool disable_mmd = false;
  bool sequential_learning = false;
  std::vector<Index> hidden{256};
  Index bottleneck = 100;
  std::vector<Index> classifier_hidden{};
  double validation_fraction = 0.1;

  /// Throws ConfigError on out-of-range fields or batch_size < classes.
  void validate(int classes) const;
  AdamConfig adam() const { return AdamConfig{learning_rate}; }
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

/// Mixes a tag into a seed (splitmix64) so sub-streams stay independent.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

// ---------------------------------------------------------------------------
// Coupled graph

struct CoupledGraph {
  AutoEncoder source_ae;
  AutoEncoder target_ae;
  Index dummy_width = 1;

  /// Both auto-encoders for input width `input_dim`, seeded independently.
  static CoupledGraph create(Index input_dim, const TrainConfig& cfg);
  void validate() const;
};

struct CoupledOptimizers {
  AdamState source;
  AdamState target;

  explicit CoupledOptimizers(AdamConfig cfg = {}) : source(cfg), target(cfg) {}
};

struct LabeledBatch {
  Matrix x;
  std::vector<int> labels;
};

/// Class-sorted source and labeled-target batches with identical per-class
/// counts. `unlabeled` optionally carries D_u rows that join the target
/// reconstruction term only.
struct BatchPair {
  LabeledBatch src;
  LabeledBatch tgt;
  std::optional<Matrix> unlabeled;

  /// Throws MissingClassError / ContractError when the class structure of the
  /// two sides differs.
  void validate() const;
};

struct CoupledLoss {
  Tensor total;
  Tensor source;  // L_s
  Tensor target;  // L_t = recon + beta * mmd
  Tensor recon;
  Tensor mmd;
  Tensor source_features;
  Tensor target_features;
};

struct StepOptions {
  double beta = 0.25;
  bool disable_mmd = false;
  /// Source features enter the MMD as constants and L_s is omitted.
  bool freeze_source = false;
  /// Join both networks through the dummy node.
  bool couple = true;
};

/// Records one forward pass of both auto-encoders on the active tape.
CoupledLoss coupled_forward(const CoupledGraph& g, const BatchPair& batch, const StepOptions& opt);

struct StepLosses {
  double source = 0.0;
  double target = 0.0;
  double recon = 0.0;
  double mmd = 0.0;
};

/// One forward pass, one backward pass and one Adam update of both
/// auto-encoders. The MMD term reaches both encoders.
StepLosses simultaneous_step(CoupledGraph& g, const BatchPair& batch, CoupledOptimizers& opt,
                             const StepOptions& options);

/// Source-only reconstruction step (first phase of the sequential ablation).
double source_only_step(CoupledGraph& g, const BatchPair& batch, CoupledOptimizers& opt);

// ---------------------------------------------------------------------------
// Data preparation

/// Equalizes per-class counts by upsampling the smaller side with seeded
/// draws. Every original sample is kept once; the rest is drawn with
/// replacement. Both outputs are class-sorted.
std::pair<LabeledDataset, LabeledDataset> class_matched_resample(const LabeledDataset& ds,
                                                                 const LabeledDataset& dl,
                                                                 std::uint64_t seed);

/// Produces class-stratified batch pairs: every batch carries the same quota
/// of each class on both sides.
class StratifiedBatcher {
 public:
  StratifiedBatcher(const LabeledDataset& src, const LabeledDataset& tgt, Index batch_size,
                    std::uint64_t seed, const UnlabeledSet* unlabeled = nullptr);

  std::vector<BatchPair> next_epoch();
  Index steps_per_epoch() const { return steps_; }
  Index quota() const { return quota_; }

 private:
  const LabeledDataset& src_;
  const LabeledDataset& tgt_;
  const UnlabeledSet* unlabeled_;
  std::vector<std::vector<Index>> src_rows_;
  std::vector<std::vector<Index>> tgt_rows_;
  std::vector<Index> unlabeled_order_;
  Index unlabeled_cursor_ = 0;
  Index quota_ = 1;
  Index steps_ = 0;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Stages

struct EpochLog {
  int epoch = 0;
  double source_loss = 0.0;
  double target_loss = 0.0;
  double recon_target = 0.0;
  double mmd = 0.0;
  double target_acc = std::numeric_limits<double>::quiet_NaN();
};

/// Optional per-epoch probe (evaluation side) returning target accuracy.
using EpochMonitor = std::function<double(const CoupledGraph&)>;

struct Stage1Result {
  std::vector<EpochLog> history;
  int epochs = 0;
  bool converged = false;
};

Stage1Result train_stage1(CoupledGraph& g, const LabeledDataset& ds_matched,
                          const LabeledDataset& dl_matched, const UnlabeledSet* du,
                          const TrainConfig& cfg, const EpochMonitor& monitor = {});

struct ClassifierLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct ClassifierResult {
  std::vector<ClassifierLog> history;
  int epochs = 0;
};

/// Trains `clf` on frozen source-encoder features with cross-entropy, early
/// stopping on a held-out validation split.
ClassifierResult train_stage2_source_classifier(const AutoEncoder& source_ae, Classifier& clf,
                                                const LabeledDataset& ds,
                                                const TrainConfig& cfg);

/// Fine-tunes `clf` on frozen target-encoder features of D_l and returns the
/// deployable target model. Throws ConfigError for an empty D_l.
TargetModel train_stage3_target_finetune(const AutoEncoder& target_ae, Classifier& clf,
                                         const LabeledDataset& dl, const TrainConfig& cfg,
                                         ClassifierResult* log = nullptr);

struct Predictions {
  std::vector<int> labels;
  std::vector<double> confidence;
};

/// Argmax per row, ties broken toward the lower class index.
Predictions predict_labels(const Matrix& probabilities);
Predictions predict_unlabeled(const TargetModel& model, const UnlabeledSet& du);
Predictions predict(const TargetModel& model, const Matrix& x);

/// Bottleneck features without recording.
Matrix encode_values(std::span<const DenseLayer> encoder, const Matrix& x);

/// Class-wise centroid distance between the two encoders' bottlenecks.
double bottleneck_classwise_mmd(const CoupledGraph& g, const LabeledDataset& src,
                                const LabeledDataset& tgt);

// ---------------------------------------------------------------------------
// End-to-end

struct SsdaResult {
  CoupledGraph graph;
  Classifier source_classifier;  // after stage 2
  TargetModel model;             // after stage 3
  Stage1Result stage1;
  ClassifierResult stage2;
  ClassifierResult stage3;
  double mmd_before = 0.0;
  double mmd_after = 0.0;
};

/// All three stages. Training reads D_u samples only.
SsdaResult train_ssda(const LabeledDataset& ds, const LabeledDataset& dl, const UnlabeledSet& du,
                      const TrainConfig& cfg, const EpochMonitor& monitor = {});

/// "S+T": one encoder plus classifier trained jointly with cross-entropy on
/// D_s united with D_l. No reconstruction, no alignment, no stages.
TargetModel train_source_plus_target(const LabeledDataset& ds, const LabeledDataset& dl,
                                     const TrainConfig& cfg, ClassifierResult* log = nullptr);

}  // namespace ssda
