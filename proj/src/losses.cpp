#include "ssda/losses.hpp"

namespace ssda {

std::vector<ClassRange> class_ranges(std::span<const int> sorted_labels) {
  std::vector<ClassRange> out;
  for (std::size_t i = 0; i < sorted_labels.size(); ++i) {
    const int label = sorted_labels[i];
    if (!out.empty() && label < out.back().label) {
      throw ContractError("labels are not sorted ascending at position " + std::to_string(i));
    }
    if (out.empty() || out.back().label != label) {
      out.push_back(ClassRange{label, static_cast<Index>(i), 0});
    }
    ++out.back().count;
  }
  return out;
}

ClassIndexedBatch::ClassIndexedBatch(Tensor features, std::vector<int> labels)
    : features_(std::move(features)), labels_(std::move(labels)) {
  if (!features_.defined() || features_.rows() != static_cast<Index>(labels_.size())) {
    throw DimensionError("class-indexed batch: feature rows and label count differ");
  }
  classes_ = class_ranges(labels_);
}

const ClassRange* ClassIndexedBatch::find(int label) const {
  for (const auto& c : classes_) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

Tensor recon_bce(const Tensor& x, const Tensor& p) {
  if (x.shape() != p.shape()) {
    throw DimensionError("recon_bce: input " + to_string(x.shape()) + " vs reconstruction " +
                         to_string(p.shape()));
  }
  const Tensor hit = mul(x, log_clamped(p));
  const Tensor miss = mul(affine(x, -1.0, 1.0), log_clamped(affine(p, -1.0, 1.0)));
  return scale(sum_all(add(hit, miss)), -1.0 / static_cast<double>(x.rows()));
}

Tensor mmd_linear(const Tensor& a, const Tensor& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ContractError("mmd_linear: empty batch");
  if (a.cols() != b.cols()) {
    throw DimensionError("mmd_linear: feature widths differ, " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  return sum_all(square(sub(mean_rows(a), mean_rows(b))));
}

Tensor mmd_classwise(const ClassIndexedBatch& src, const ClassIndexedBatch& tgt) {
  if (src.features().cols() != tgt.features().cols()) {
    throw DimensionError("mmd_classwise: feature widths differ");
  }
  for (const auto& c : tgt.classes()) {
    if (src.find(c.label) == nullptr) throw MissingClassError(c.label, "source batch");
  }
  if (src.classes().empty()) throw ContractError("mmd_classwise: empty batch");

  Tensor total;
  for (const auto& c : src.classes()) {
    const ClassRange* t = tgt.find(c.label);
    if (t == nullptr) throw MissingClassError(c.label, "target batch");
    Tensor term = mmd_linear(slice_rows(src.features(), c.begin, c.count),
                             slice_rows(tgt.features(), t->begin, t->count));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(src.classes().size()));
}

Tensor target_objective(const Tensor& recon, const Tensor& mmd, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative, got " + std::to_string(beta));
  if (recon.size() != 1 || mmd.size() != 1) {
    throw DimensionError("target_objective: terms must be scalars");
  }
  return add(recon, scale(mmd, beta));
}

Tensor classifier_ce(const Tensor& y, const Tensor& p) {
  if (y.shape() != p.shape()) {
    throw DimensionError("classifier_ce: targets " + to_string(y.shape()) + " vs predictions " +
                         to_string(p.shape()));
  }
  return scale(sum_all(mul(y, log_clamped(p))), -1.0 / static_cast<double>(y.rows()));
}

Matrix one_hot(std::span<const int> labels, int classes) {
  Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ContractError("label " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    y(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return y;
}

}  // namespace ssda
