#pragma once

// Objective functions. The Tensor overloads are differentiable; the templated
// Eigen overloads evaluate the same quantities on plain matrices for metrics.

#include "ssda/errors.hpp"
#include "ssda/tensor.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace ssda {

struct ClassRange {
  int label = 0;
  Index begin = 0;
  Index count = 0;
};

/// Computes the contiguous per-class ranges of ascending-sorted labels.
/// Throws ContractError when labels are not sorted.
std::vector<ClassRange> class_ranges(std::span<const int> sorted_labels);

/// Features whose rows are grouped by ascending class label.
class ClassIndexedBatch {
 public:
  ClassIndexedBatch(Tensor features, std::vector<int> labels);

  const Tensor& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<ClassRange>& classes() const { return classes_; }
  const ClassRange* find(int label) const;

 private:
  Tensor features_;
  std::vector<int> labels_;
  std::vector<ClassRange> classes_;
};

/// -(1/N) sum_i sum_pixels [x log p + (1 - x) log(1 - p)].
Tensor recon_bce(const Tensor& x, const Tensor& p);

/// || mean(a) - mean(b) ||^2.
Tensor mmd_linear(const Tensor& a, const Tensor& b);

/// (1/C) sum_k || mean_k(src) - mean_k(tgt) ||^2 over the shared class set.
/// Throws MissingClassError when a class appears on only one side.
Tensor mmd_classwise(const ClassIndexedBatch& src, const ClassIndexedBatch& tgt);

/// recon + beta * mmd. Throws ConfigError for negative beta.
Tensor target_objective(const Tensor& recon, const Tensor& mmd, double beta);

/// Batch mean of -sum_c y_c log p_c.
Tensor classifier_ce(const Tensor& y, const Tensor& p);

/// [n x classes] one-hot encoding.
Matrix one_hot(std::span<const int> labels, int classes);

// ---------------------------------------------------------------------------
// Plain-matrix evaluations

template <typename DerivedA, typename DerivedB>
double centroid_distance(const Eigen::MatrixBase<DerivedA>& a,
                         const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ContractError("centroid_distance: empty batch");
  if (a.cols() != b.cols()) throw DimensionError("centroid_distance: feature widths differ");
  return (a.colwise().mean() - b.colwise().mean()).squaredNorm();
}

/// Class-wise centroid distance for unsorted labelled feature sets.
template <typename DerivedA, typename DerivedB>
double classwise_centroid_distance(const Eigen::MatrixBase<DerivedA>& a,
                                   std::span<const int> labels_a,
                                   const Eigen::MatrixBase<DerivedB>& b,
                                   std::span<const int> labels_b, int classes) {
  using Scalar = typename DerivedA::Scalar;
  using Rows = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (a.cols() != b.cols()) throw DimensionError("classwise_centroid_distance: widths differ");
  Rows sum_a = Rows::Zero(classes, a.cols());
  Rows sum_b = Rows::Zero(classes, b.cols());
  std::vector<Index> n_a(classes, 0), n_b(classes, 0);
  for (Index i = 0; i < a.rows(); ++i) {
    sum_a.row(labels_a[i]) += a.row(i);
    ++n_a[labels_a[i]];
  }
  for (Index i = 0; i < b.rows(); ++i) {
    sum_b.row(labels_b[i]) += b.row(i);
    ++n_b[labels_b[i]];
  }
  Scalar total = 0;
  int present = 0;
  for (int k = 0; k < classes; ++k) {
    if (n_a[k] == 0 && n_b[k] == 0) continue;
    if (n_a[k] == 0) throw MissingClassError(k, "first feature set");
    if (n_b[k] == 0) throw MissingClassError(k, "second feature set");
    total += (sum_a.row(k) / Scalar(n_a[k]) - sum_b.row(k) / Scalar(n_b[k])).squaredNorm();
    ++present;
  }
  return present == 0 ? 0.0 : static_cast<double>(total / Scalar(present));
}

}  // namespace ssda
