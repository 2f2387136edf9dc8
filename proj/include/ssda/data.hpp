#pragma once

// Datasets, IDX ingestion, k-shot splitting and the synthetic domain-shift
// benchmark.

#include "ssda/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ssda {

/// Samples in [0,1]^d, one per row, with labels in [0, class_count).
struct LabeledDataset {
  Matrix samples;
  std::vector<int> labels;
  int class_count = 0;
  std::string name;

  Index size() const { return samples.rows(); }
  Index dim() const { return samples.cols(); }

  /// Throws ConfigError when entries leave [0,1] or labels leave [0, C).
  void validate() const;
  std::vector<Index> class_counts() const;
  LabeledDataset subset(std::span<const Index> rows) const;
  /// Stable reorder by ascending label.
  LabeledDataset sorted_by_class() const;
};

/// Unlabeled target samples. Ground truth is kept for evaluation only and is
/// reachable solely through EvaluationAccess.
class UnlabeledSet {
 public:
  UnlabeledSet() = default;

  const Matrix& samples() const { return samples_; }
  Index size() const { return samples_.rows(); }
  Index dim() const { return samples_.cols(); }

 private:
  UnlabeledSet(Matrix samples, std::vector<int> hidden_labels)
      : samples_(std::move(samples)), hidden_labels_(std::move(hidden_labels)) {}

  Matrix samples_;
  std::vector<int> hidden_labels_;

  friend class EvaluationAccess;
};

/// The evaluation-side door to hidden D_u labels. Training code never names it.
class EvaluationAccess {
 public:
  static UnlabeledSet make_unlabeled(Matrix samples, std::vector<int> hidden_labels);
  static const std::vector<int>& hidden_labels(const UnlabeledSet& set) {
    return set.hidden_labels_;
  }
};

struct KShotSplit {
  LabeledDataset labeled;   // D_l, k per class
  UnlabeledSet unlabeled;   // D_u
  std::vector<Index> labeled_indices;
  std::vector<Index> unlabeled_indices;
  int k = 0;
  std::uint64_t seed = 0;
};

struct SSDASplit {
  LabeledDataset source;          // D_s
  LabeledDataset target_labeled;  // D_l
  UnlabeledSet target_unlabeled;  // D_u
};

/// Draws exactly k samples per class without replacement into D_l; the rest
/// form D_u. Throws ConfigError when a class holds fewer than k samples.
KShotSplit make_kshot_split(const LabeledDataset& target, int k, std::uint64_t seed);

/// Stratified subsample of n rows total (proportional per class, at least one
/// per class when n allows).
LabeledDataset stratified_subsample(const LabeledDataset& data, Index n, std::uint64_t seed);

nlohmann::json split_to_json(const KShotSplit& split);

// ---------------------------------------------------------------------------
// IDX container

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images);
std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Loads an image/label IDX pair, scaling pixels by 1/255. When `side` is
/// given, images are bilinearly resampled to side x side first.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path,
                        std::optional<Index> side = std::nullopt, std::string name = {});

/// Writes samples (quantized to bytes) and labels as an IDX pair of
/// side x side images.
void write_idx(const LabeledDataset& data, Index side, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Bilinear resampling with half-pixel centres of one flattened image.
RowVector resize_bilinear(std::span<const double> image, Index src_rows, Index src_cols,
                          Index dst_rows, Index dst_cols);

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// Gaussian classes in R^d; the target domain applies scale * R(angle) x + t,
/// where R rotates each coordinate pair (0,1), (2,3), ... by the same angle.
struct SyntheticShiftSpec {
  int class_count = 4;
  Index samples_per_class = 500;
  Index dimension = 16;
  std::vector<RowVector> means;      // empty -> circular layout below
  std::vector<Matrix> covariances;   // empty -> isotropic class_spread^2 I
  /// Default layout: in every coordinate pair, class k's mean sits at angle
  /// k * mean_step_deg on a circle of radius mean_radius.
  double mean_radius = 3.0;
  double mean_step_deg = 30.0;
  double class_spread = 1.0;
  double rotation_deg = 30.0;
  RowVector translation;             // empty -> 0.3 in every coordinate
  double scale = 1.0;
  double noise = 0.1;
  std::uint64_t seed = 20240611;

  /// Fills defaulted fields in place and checks consistency.
  void resolve();
};

SyntheticShiftSpec default_benchmark_spec();

/// Returns (source, target) both mapped into [0,1]^d by one shared per-feature
/// affine map. Throws ConfigError for a non-PSD covariance or scale <= 0.
std::pair<LabeledDataset, LabeledDataset> gen_synthetic_shift(SyntheticShiftSpec spec);

void to_json(nlohmann::json& j, const SyntheticShiftSpec& spec);
void from_json(const nlohmann::json& j, SyntheticShiftSpec& spec);

}  // namespace ssda
