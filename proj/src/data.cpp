#include "ssda/data.hpp"

#include "ssda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

namespace ssda {

void LabeledDataset::validate() const {
  if (static_cast<Index>(labels.size()) != samples.rows()) {
    throw ConfigError(name + ": " + std::to_string(samples.rows()) + " samples but " +
                      std::to_string(labels.size()) + " labels");
  }
  if (samples.size() > 0 && (samples.minCoeff() < 0.0 || samples.maxCoeff() > 1.0)) {
    throw ConfigError(name + ": sample entries outside [0,1]");
  }
  for (int l : labels) {
    if (l < 0 || l >= class_count) {
      throw ConfigError(name + ": label " + std::to_string(l) + " outside [0, " +
                        std::to_string(class_count) + ")");
    }
  }
}

std::vector<Index> LabeledDataset::class_counts() const {
  std::vector<Index> counts(class_count, 0);
  for (int l : labels) ++counts[l];
  return counts;
}

LabeledDataset LabeledDataset::subset(std::span<const Index> rows) const {
  LabeledDataset out;
  out.samples.resize(static_cast<Index>(rows.size()), dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.samples.row(static_cast<Index>(i)) = samples.row(rows[i]);
    out.labels.push_back(labels[rows[i]]);
  }
  out.class_count = class_count;
  out.name = name;
  return out;
}

LabeledDataset LabeledDataset::sorted_by_class() const {
  std::vector<Index> order(labels.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return labels[a] < labels[b]; });
  return subset(order);
}

UnlabeledSet EvaluationAccess::make_unlabeled(Matrix samples, std::vector<int> hidden_labels) {
  if (samples.rows() != static_cast<Index>(hidden_labels.size())) {
    throw ConfigError("unlabeled set: sample and hidden label counts differ");
  }
  return UnlabeledSet(std::move(samples), std::move(hidden_labels));
}

namespace {

std::vector<std::vector<Index>> rows_by_class(const LabeledDataset& data) {
  std::vector<std::vector<Index>> by_class(data.class_count);
  for (Index i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  return by_class;
}

}  // namespace

KShotSplit make_kshot_split(const LabeledDataset& target, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("k-shot split needs k >= 1");
  auto by_class = rows_by_class(target);
  std::mt19937_64 rng(seed);
  KShotSplit split;
  split.k = k;
  split.seed = seed;
  std::vector<bool> taken(target.size(), false);
  for (int c = 0; c < target.class_count; ++c) {
    auto& rows = by_class[c];
    if (static_cast<int>(rows.size()) < k) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                        " samples, fewer than k = " + std::to_string(k));
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    for (int i = 0; i < k; ++i) {
      split.labeled_indices.push_back(rows[i]);
      taken[rows[i]] = true;
    }
  }
  for (Index i = 0; i < target.size(); ++i) {
    if (!taken[i]) split.unlabeled_indices.push_back(i);
  }
  split.labeled = target.subset(split.labeled_indices);
  split.labeled.name = target.name + "/labeled";
  const LabeledDataset rest = target.subset(split.unlabeled_indices);
  split.unlabeled = EvaluationAccess::make_unlabeled(rest.samples, rest.labels);
  return split;
}

LabeledDataset stratified_subsample(const LabeledDataset& data, Index n, std::uint64_t seed) {
  if (n <= 0) throw ConfigError("subsample size must be positive");
  if (n >= data.size()) return data;
  auto by_class = rows_by_class(data);
  std::mt19937_64 rng(seed);
  std::vector<Index> picked;
  const double frac = static_cast<double>(n) / static_cast<double>(data.size());
  for (auto& rows : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    auto take = static_cast<Index>(std::llround(frac * static_cast<double>(rows.size())));
    take = std::clamp<Index>(take, rows.empty() ? 0 : 1, static_cast<Index>(rows.size()));
    picked.insert(picked.end(), rows.begin(), rows.begin() + take);
  }
  std::sort(picked.begin(), picked.end());
  return data.subset(picked);
}

nlohmann::json split_to_json(const KShotSplit& split) {
  return nlohmann::json{{"k", split.k},
                        {"seed", split.seed},
                        {"labeled_indices", split.labeled_indices},
                        {"unlabeled_indices", split.unlabeled_indices}};
}

// ---------------------------------------------------------------------------
// IDX

namespace {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* field) {
    need(n, field);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("truncated IDX data reading ") + field + ": need " +
                           std::to_string(n) + " bytes, have " +
                           std::to_string(bytes_.size() - pos_),
                       pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const std::uint32_t magic = in.u32("magic");
  if (magic != kIdxImagesMagic) {
    throw ParseError("bad IDX image magic " + hex32(magic) + ", expected " +
                         hex32(kIdxImagesMagic),
                     0);
  }
  IdxImages out;
  out.count = in.u32("image count");
  out.rows = in.u32("row count");
  out.cols = in.u32("column count");
  const std::uint64_t n = std::uint64_t{out.count} * out.rows * out.cols;
  const auto body = in.take(static_cast<std::size_t>(n), "pixels");
  if (in.remaining() != 0) {
    throw ParseError("trailing bytes after " + std::to_string(out.count) + " images", in.pos());
  }
  out.pixels.assign(body.begin(), body.end());
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  const std::uint32_t magic = in.u32("magic");
  if (magic != kIdxLabelsMagic) {
    throw ParseError("bad IDX label magic " + hex32(magic) + ", expected " +
                         hex32(kIdxLabelsMagic),
                     0);
  }
  const std::uint32_t count = in.u32("label count");
  const auto body = in.take(count, "labels");
  if (in.remaining() != 0) {
    throw ParseError("trailing bytes after " + std::to_string(count) + " labels", in.pos());
  }
  return {body.begin(), body.end()};
}

std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images) {
  if (images.pixels.size() != std::size_t{images.count} * images.rows * images.cols) {
    throw DimensionError("IDX image pixel count does not match header");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  put_u32(out, kIdxImagesMagic);
  put_u32(out, images.count);
  put_u32(out, images.rows);
  put_u32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  put_u32(out, kIdxLabelsMagic);
  put_u32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RowVector resize_bilinear(std::span<const double> image, Index src_rows, Index src_cols,
                          Index dst_rows, Index dst_cols) {
  if (static_cast<Index>(image.size()) != src_rows * src_cols) {
    throw DimensionError("resize_bilinear: image size does not match extents");
  }
  RowVector out(dst_rows * dst_cols);
  const double sy = static_cast<double>(src_rows) / static_cast<double>(dst_rows);
  const double sx = static_cast<double>(src_cols) / static_cast<double>(dst_cols);
  auto at = [&](Index r, Index c) { return image[static_cast<std::size_t>(r * src_cols + c)]; };
  for (Index r = 0; r < dst_rows; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0,
                                static_cast<double>(src_rows - 1));
    const auto y0 = static_cast<Index>(std::floor(y));
    const Index y1 = std::min(y0 + 1, src_rows - 1);
    const double fy = y - static_cast<double>(y0);
    for (Index c = 0; c < dst_cols; ++c) {
      const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0,
                                  static_cast<double>(src_cols - 1));
      const auto x0 = static_cast<Index>(std::floor(x));
      const Index x1 = std::min(x0 + 1, src_cols - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
      const double bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
      out(r * dst_cols + c) = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::optional<Index> side,
                        std::string name) {
  const IdxImages images = parse_idx_images(read_file_bytes(images_path));
  const std::vector<std::uint8_t> labels = parse_idx_labels(read_file_bytes(labels_path));
  if (labels.size() != images.count) {
    throw ParseError("label file holds " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(images.count) + " images",
                     4);
  }

  const Index src_rows = images.rows;
  const Index src_cols = images.cols;
  const Index dst_rows = side.value_or(src_rows);
  const Index dst_cols = side.value_or(src_cols);
  const Index src_d = src_rows * src_cols;

  LabeledDataset out;
  out.name = name.empty() ? images_path.stem().string() : std::move(name);
  out.samples.resize(images.count, dst_rows * dst_cols);
  std::vector<double> buf(static_cast<std::size_t>(src_d));
  for (Index i = 0; i < static_cast<Index>(images.count); ++i) {
    for (Index p = 0; p < src_d; ++p) {
      buf[static_cast<std::size_t>(p)] = images.pixels[static_cast<std::size_t>(i * src_d + p)] / 255.0;
    }
    if (dst_rows == src_rows && dst_cols == src_cols) {
      out.samples.row(i) = Eigen::Map<const RowVector>(buf.data(), src_d);
    } else {
      out.samples.row(i) = resize_bilinear(buf, src_rows, src_cols, dst_rows, dst_cols);
    }
  }
  int max_label = -1;
  out.labels.reserve(labels.size());
  for (auto l : labels) {
    out.labels.push_back(l);
    max_label = std::max<int>(max_label, l);
  }
  out.class_count = max_label + 1;
  out.validate();
  return out;
}

void write_idx(const LabeledDataset& data, Index side, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (side * side != data.dim()) throw DimensionError("write_idx: side^2 must equal sample width");
  IdxImages images;
  images.count = static_cast<std::uint32_t>(data.size());
  images.rows = images.cols = static_cast<std::uint32_t>(side);
  images.pixels.reserve(static_cast<std::size_t>(data.samples.size()));
  for (Index i = 0; i < data.size(); ++i) {
    for (Index p = 0; p < data.dim(); ++p) {
      images.pixels.push_back(
          static_cast<std::uint8_t>(std::lround(std::clamp(data.samples(i, p), 0.0, 1.0) * 255.0)));
    }
  }
  std::vector<std::uint8_t> labels;
  for (int l : data.labels) {
    if (l < 0 || l > 255) throw ConfigError("IDX labels must fit in one byte");
    labels.push_back(static_cast<std::uint8_t>(l));
  }
  write_file_bytes(images_path, serialize_idx_images(images));
  write_file_bytes(labels_path, serialize_idx_labels(labels));
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

void SyntheticShiftSpec::resolve() {
  if (class_count < 1 || samples_per_class < 1 || dimension < 2) {
    throw ConfigError("synthetic spec needs class_count >= 1, samples_per_class >= 1, d >= 2");
  }
  if (!(scale > 0.0)) throw ConfigError("synthetic spec scale must be positive");
  if (noise < 0.0) throw ConfigError("synthetic spec noise must be non-negative");
  if (means.empty()) {
    const double step = mean_step_deg * std::numbers::pi / 180.0;
    for (int k = 0; k < class_count; ++k) {
      RowVector m = RowVector::Zero(dimension);
      for (Index j = 0; j + 1 < dimension; j += 2) {
        m(j) = mean_radius * std::cos(k * step);
        m(j + 1) = mean_radius * std::sin(k * step);
      }
      means.push_back(m);
    }
  }
  if (covariances.empty()) {
    for (int k = 0; k < class_count; ++k) {
      covariances.push_back(Matrix::Identity(dimension, dimension) * class_spread * class_spread);
    }
  }
  if (translation.size() == 0) translation = RowVector::Constant(dimension, 0.3);
  if (static_cast<int>(means.size()) != class_count ||
      static_cast<int>(covariances.size()) != class_count) {
    throw ConfigError("synthetic spec needs one mean and one covariance per class");
  }
  for (const auto& m : means) {
    if (m.size() != dimension) throw ConfigError("synthetic spec mean has wrong dimension");
  }
  for (const auto& c : covariances) {
    if (c.rows() != dimension || c.cols() != dimension) {
      throw ConfigError("synthetic spec covariance has wrong shape");
    }
  }
  if (translation.size() != dimension) throw ConfigError("translation has wrong dimension");
}

SyntheticShiftSpec default_benchmark_spec() {
  SyntheticShiftSpec spec;
  spec.resolve();
  return spec;
}

namespace {

// Square root factor of a PSD covariance, via its eigendecomposition.
Matrix covariance_factor(const Matrix& cov, int class_id) {
  if (!cov.isApprox(cov.transpose(), 1e-12)) {
    throw ConfigError("covariance of class " + std::to_string(class_id) + " is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const auto& values = eig.eigenvalues();
  const double tol = 1e-10 * std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() < -tol) {
    throw ConfigError("covariance of class " + std::to_string(class_id) +
                      " is not positive semi-definite");
  }
  return eig.eigenvectors() * values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> gen_synthetic_shift(SyntheticShiftSpec spec) {
  spec.resolve();
  const Index d = spec.dimension;
  const Index n = spec.samples_per_class * spec.class_count;

  std::vector<Matrix> factors;
  for (int k = 0; k < spec.class_count; ++k) {
    factors.push_back(covariance_factor(spec.covariances[k], k));
  }

  Matrix rotation = Matrix::Identity(d, d);
  const double theta = spec.rotation_deg * std::numbers::pi / 180.0;
  for (Index j = 0; j + 1 < d; j += 2) {
    rotation(j, j) = std::cos(theta);
    rotation(j, j + 1) = -std::sin(theta);
    rotation(j + 1, j) = std::sin(theta);
    rotation(j + 1, j + 1) = std::cos(theta);
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](int k) {
    Eigen::VectorXd z(d);
    for (Index j = 0; j < d; ++j) z(j) = normal(rng);
    RowVector x = spec.means[k] + (factors[k] * z).transpose();
    return x;
  };
  auto jitter = [&](RowVector x) {
    for (Index j = 0; j < d; ++j) x(j) += spec.noise * normal(rng);
    return x;
  };

  LabeledDataset source;
  LabeledDataset target;
  source.samples.resize(n, d);
  target.samples.resize(n, d);
  Index row = 0;
  for (int k = 0; k < spec.class_count; ++k) {
    for (Index i = 0; i < spec.samples_per_class; ++i, ++row) {
      source.samples.row(row) = jitter(draw(k));
      const RowVector latent = draw(k);
      const RowVector moved = spec.scale * (rotation * latent.transpose()).transpose() +
                              spec.translation;
      target.samples.row(row) = jitter(moved);
      source.labels.push_back(k);
      target.labels.push_back(k);
    }
  }

  // Shared per-feature affine map into [0,1].
  const RowVector lo = source.samples.colwise().minCoeff().cwiseMin(target.samples.colwise().minCoeff());
  const RowVector hi = source.samples.colwise().maxCoeff().cwiseMax(target.samples.colwise().maxCoeff());
  const RowVector span = (hi - lo).cwiseMax(1e-12);
  for (auto* m : {&source.samples, &target.samples}) {
    *m = ((m->rowwise() - lo).array().rowwise() / span.array()).matrix();
    *m = m->cwiseMax(0.0).cwiseMin(1.0);
  }

  source.class_count = target.class_count = spec.class_count;
  source.name = "synthetic/source";
  target.name = "synthetic/target";
  source.validate();
  target.validate();
  return {std::move(source), std::move(target)};
}

void to_json(nlohmann::json& j, const SyntheticShiftSpec& spec) {
  auto row = [](const RowVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json means = nlohmann::json::array();
  for (const auto& m : spec.means) means.push_back(row(m));
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& c : spec.covariances) {
    covs.push_back(std::vector<double>(c.data(), c.data() + c.size()));
  }
  j = nlohmann::json{{"class_count", spec.class_count},
                     {"samples_per_class", spec.samples_per_class},
                     {"dimension", spec.dimension},
                     {"mean_radius", spec.mean_radius},
                     {"mean_step_deg", spec.mean_step_deg},
                     {"class_spread", spec.class_spread},
                     {"rotation_deg", spec.rotation_deg},
                     {"scale", spec.scale},
                     {"noise", spec.noise},
                     {"seed", spec.seed},
                     {"means", means},
                     {"covariances", covs},
                     {"translation", row(spec.translation)}};
}

void from_json(const nlohmann::json& j, SyntheticShiftSpec& spec) {
  SyntheticShiftSpec out;
  out.class_count = j.value("class_count", out.class_count);
  out.samples_per_class = j.value("samples_per_class", out.samples_per_class);
  out.dimension = j.value("dimension", out.dimension);
  out.mean_radius = j.value("mean_radius", out.mean_radius);
  out.mean_step_deg = j.value("mean_step_deg", out.mean_step_deg);
  out.class_spread = j.value("class_spread", out.class_spread);
  out.rotation_deg = j.value("rotation_deg", out.rotation_deg);
  out.scale = j.value("scale", out.scale);
  out.noise = j.value("noise", out.noise);
  out.seed = j.value("seed", out.seed);
  auto to_row = [](const std::vector<double>& v) {
    return RowVector(Eigen::Map<const RowVector>(v.data(), static_cast<Index>(v.size())));
  };
  if (j.contains("means")) {
    for (const auto& m : j.at("means")) out.means.push_back(to_row(m.get<std::vector<double>>()));
  }
  if (j.contains("covariances")) {
    for (const auto& c : j.at("covariances")) {
      const auto flat = c.get<std::vector<double>>();
      const auto d = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(flat.size()))));
      if (d * d != static_cast<Index>(flat.size())) throw ConfigError("covariance is not square");
      out.covariances.push_back(Eigen::Map<const Matrix>(flat.data(), d, d));
    }
  }
  if (j.contains("translation")) out.translation = to_row(j.at("translation").get<std::vector<double>>());
  spec = std::move(out);
}

}  // namespace ssda
