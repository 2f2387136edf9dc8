#include "ssda/trainer.hpp"

#include "ssda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ssda {

namespace {

// Seed stream tags.
constexpr std::uint64_t kTagResample = 1;
constexpr std::uint64_t kTagSourceInit = 2;
constexpr std::uint64_t kTagTargetInit = 3;
constexpr std::uint64_t kTagBatches = 4;
constexpr std::uint64_t kTagClassifierInit = 5;
constexpr std::uint64_t kTagStage2 = 6;
constexpr std::uint64_t kTagStage3 = 7;
constexpr std::uint64_t kTagBaselineInit = 8;
constexpr std::uint64_t kTagBaseline = 9;

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void TrainConfig::validate(int classes) const {
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (classes > 0 && batch_size < classes) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " cannot cover all " +
                      std::to_string(classes) + " classes");
  }
  if (max_epochs_stage1 < 0 || max_epochs_stage2 < 0 || max_epochs_stage3 < 0) {
    throw ConfigError("epoch budgets must be non-negative");
  }
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
  if (bottleneck < 1) throw ConfigError("bottleneck width must be positive");
  for (Index h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"beta", c.beta},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"max_epochs_stage1", c.max_epochs_stage1},
                     {"max_epochs_stage2", c.max_epochs_stage2},
                     {"max_epochs_stage3", c.max_epochs_stage3},
                     {"patience", c.patience},
                     {"min_delta", c.min_delta},
                     {"seed", c.seed},
                     {"use_unlabeled_recon", c.use_unlabeled_recon},
                     {"disable_mmd", c.disable_mmd},
                     {"sequential_learning", c.sequential_learning},
                     {"hidden", c.hidden},
                     {"bottleneck", c.bottleneck},
                     {"classifier_hidden", c.classifier_hidden},
                     {"validation_fraction", c.validation_fraction}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.beta = j.value("beta", d.beta);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs_stage1 = j.value("max_epochs_stage1", d.max_epochs_stage1);
  c.max_epochs_stage2 = j.value("max_epochs_stage2", d.max_epochs_stage2);
  c.max_epochs_stage3 = j.value("max_epochs_stage3", d.max_epochs_stage3);
  c.patience = j.value("patience", d.patience);
  c.min_delta = j.value("min_delta", d.min_delta);
  c.seed = j.value("seed", d.seed);
  c.use_unlabeled_recon = j.value("use_unlabeled_recon", d.use_unlabeled_recon);
  c.disable_mmd = j.value("disable_mmd", d.disable_mmd);
  c.sequential_learning = j.value("sequential_learning", d.sequential_learning);
  c.hidden = j.value("hidden", d.hidden);
  c.bottleneck = j.value("bottleneck", d.bottleneck);
  c.classifier_hidden = j.value("classifier_hidden", d.classifier_hidden);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
}

// ---------------------------------------------------------------------------

CoupledGraph CoupledGraph::create(Index input_dim, const TrainConfig& cfg) {
  AutoEncoderSpec spec{input_dim, cfg.hidden, cfg.bottleneck};
  CoupledGraph g;
  g.source_ae = make_autoencoder(spec, derive_seed(cfg.seed, kTagSourceInit));
  g.target_ae = make_autoencoder(spec, derive_seed(cfg.seed, kTagTargetInit));
  g.dummy_width = cfg.bottleneck;
  return g;
}

void CoupledGraph::validate() const {
  source_ae.validate();
  target_ae.validate();
  if (source_ae.bottleneck() != target_ae.bottleneck()) {
    throw DimensionError("coupled auto-encoders need equal bottleneck widths");
  }
  if (dummy_width < 1) throw DimensionError("dummy layer width must be positive");
}

void BatchPair::validate() const {
  if (src.x.rows() != static_cast<Index>(src.labels.size()) ||
      tgt.x.rows() != static_cast<Index>(tgt.labels.size())) {
    throw DimensionError("batch rows and labels disagree");
  }
  const auto s = class_ranges(src.labels);
  const auto t = class_ranges(tgt.labels);
  for (const auto& c : t) {
    if (std::none_of(s.begin(), s.end(), [&](const ClassRange& r) { return r.label == c.label; })) {
      throw MissingClassError(c.label, "source batch");
    }
  }
  for (const auto& c : s) {
    if (std::none_of(t.begin(), t.end(), [&](const ClassRange& r) { return r.label == c.label; })) {
      throw MissingClassError(c.label, "target batch");
    }
  }
  for (const auto& c : s) {
    auto it = std::find_if(t.begin(), t.end(), [&](const ClassRange& r) { return r.label == c.label; });
    if (it->count != c.count) {
      throw ContractError("class " + std::to_string(c.label) + " has " + std::to_string(c.count) +
                          " source rows but " + std::to_string(it->count) + " target rows");
    }
  }
}

CoupledLoss coupled_forward(const CoupledGraph& g, const BatchPair& batch, const StepOptions& opt) {
  CoupledLoss out;
  const Tensor xs(batch.src.x);
  const Tensor xt(batch.tgt.x);

  if (opt.freeze_source) {
    NoGradScope frozen;
    out.source_features = encode(g.source_ae, xs);
  } else {
    out.source_features = encode(g.source_ae, xs);
    out.source = recon_bce(xs, decode(g.source_ae, out.source_features));
  }

  out.target_features = encode(g.target_ae, xt);
  out.recon = recon_bce(xt, decode(g.target_ae, out.target_features));
  if (batch.unlabeled) {
    const Tensor xu(*batch.unlabeled);
    const Tensor recon_u = recon_bce(xu, reconstruct(g.target_ae, xu));
    const double nl = static_cast<double>(xt.rows());
    const double nu = static_cast<double>(xu.rows());
    out.recon = add(scale(out.recon, nl / (nl + nu)), scale(recon_u, nu / (nl + nu)));
  }

  const ClassIndexedBatch src_batch(out.source_features, batch.src.labels);
  const ClassIndexedBatch tgt_batch(out.target_features, batch.tgt.labels);
  if (opt.disable_mmd) {
    NoGradScope measure_only;
    out.mmd = mmd_classwise(ClassIndexedBatch(out.source_features.detach(), batch.src.labels),
                            ClassIndexedBatch(out.target_features.detach(), batch.tgt.labels));
  } else {
    out.mmd = mmd_classwise(src_batch, tgt_batch);
  }
  out.target = target_objective(out.recon, out.mmd, opt.beta);

  out.total = out.source.defined() ? add(out.source, out.target) : out.target;
  if (opt.couple) {
    out.total = add(out.total, sum_all(dummy_join(out.source_features, out.target_features,
                                                  g.dummy_width)));
  }
  return out;
}

StepLosses simultaneous_step(CoupledGraph& g, const BatchPair& batch, CoupledOptimizers& opt,
                             const StepOptions& options) {
  batch.validate();
  Tape tape;
  StepLosses losses;
  {
    TapeScope scope(tape);
    const CoupledLoss loss = coupled_forward(g, batch, options);
    tape.backward(loss.total);
    losses.source = loss.source.defined() ? loss.source.item()
                                          : std::numeric_limits<double>::quiet_NaN();
    losses.target = loss.target.item();
    losses.recon = loss.recon.item();
    losses.mmd = loss.mmd.item();
  }
  if (!options.freeze_source) {
    auto params = parameters(g.source_ae);
    adam_step(params, opt.source, freeze_mask(g.source_ae));
  } else {
    for (auto& p : parameters(g.source_ae)) p.zero_grad();
  }
  auto params = parameters(g.target_ae);
  adam_step(params, opt.target, freeze_mask(g.target_ae));
  return losses;
}

double source_only_step(CoupledGraph& g, const BatchPair& batch, CoupledOptimizers& opt) {
  Tape tape;
  double value = 0.0;
  {
    TapeScope scope(tape);
    const Tensor xs(batch.src.x);
    const Tensor loss = recon_bce(xs, reconstruct(g.source_ae, xs));
    tape.backward(loss);
    value = loss.item();
  }
  auto params = parameters(g.source_ae);
  adam_step(params, opt.source, freeze_mask(g.source_ae));
  return value;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<Index>> rows_per_class(const LabeledDataset& d) {
  std::vector<std::vector<Index>> rows(d.class_count);
  for (Index i = 0; i < d.size(); ++i) rows[d.labels[i]].push_back(i);
  return rows;
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> class_matched_resample(const LabeledDataset& ds,
                                                                 const LabeledDataset& dl,
                                                                 std::uint64_t seed) {
  if (ds.size() == 0 || dl.size() == 0) throw ConfigError("class matching needs nonempty sets");
  if (ds.class_count != dl.class_count) {
    throw ConfigError("source and target class vocabularies differ");
  }
  const auto s_rows = rows_per_class(ds);
  const auto t_rows = rows_per_class(dl);
  std::mt19937_64 rng(seed);
  std::vector<Index> s_pick;
  std::vector<Index> t_pick;
  for (int k = 0; k < ds.class_count; ++k) {
    const bool in_s = !s_rows[k].empty();
    const bool in_t = !t_rows[k].empty();
    if (!in_s && !in_t) continue;
    if (!in_s) throw MissingClassError(k, "source set");
    if (!in_t) throw MissingClassError(k, "labeled target set");
    const std::size_t n = std::max(s_rows[k].size(), t_rows[k].size());
    auto fill = [&](const std::vector<Index>& rows, std::vector<Index>& out) {
      out.insert(out.end(), rows.begin(), rows.end());
      std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
      for (std::size_t i = rows.size(); i < n; ++i) out.push_back(rows[pick(rng)]);
    };
    fill(s_rows[k], s_pick);
    fill(t_rows[k], t_pick);
  }
  return {ds.subset(s_pick), dl.subset(t_pick)};
}

StratifiedBatcher::StratifiedBatcher(const LabeledDataset& src, const LabeledDataset& tgt,
                                     Index batch_size, std::uint64_t seed,
                                     const UnlabeledSet* unlabeled)
    : src_(src), tgt_(tgt), unlabeled_(unlabeled), rng_(seed) {
  src_rows_ = rows_per_class(src);
  tgt_rows_ = rows_per_class(tgt);
  if (src_rows_.size() != tgt_rows_.size()) throw ConfigError("class vocabularies differ");
  int present = 0;
  Index largest = 0;
  for (std::size_t k = 0; k < src_rows_.size(); ++k) {
    if (src_rows_[k].size() != tgt_rows_[k].size()) {
      if (src_rows_[k].empty()) throw MissingClassError(static_cast<int>(k), "source set");
      if (tgt_rows_[k].empty()) throw MissingClassError(static_cast<int>(k), "target set");
      throw ContractError("class " + std::to_string(k) +
                          " is not count-matched; run class_matched_resample first");
    }
    if (!src_rows_[k].empty()) {
      ++present;
      largest = std::max<Index>(largest, static_cast<Index>(src_rows_[k].size()));
    }
  }
  if (present == 0) throw ConfigError("no classes to batch");
  if (batch_size < present) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " cannot cover all " +
                      std::to_string(present) + " classes");
  }
  quota_ = batch_size / present;
  steps_ = (largest + quota_ - 1) / quota_;
  if (unlabeled_ != nullptr && unlabeled_->size() > 0) {
    unlabeled_order_.resize(static_cast<std::size_t>(unlabeled_->size()));
    std::iota(unlabeled_order_.begin(), unlabeled_order_.end(), Index{0});
    std::shuffle(unlabeled_order_.begin(), unlabeled_order_.end(), rng_);
  } else {
    unlabeled_ = nullptr;
  }
}

std::vector<BatchPair> StratifiedBatcher::next_epoch() {
  std::vector<std::vector<Index>> perm(src_rows_.size());
  for (std::size_t k = 0; k < src_rows_.size(); ++k) {
    perm[k].resize(src_rows_[k].size());
    std::iota(perm[k].begin(), perm[k].end(), Index{0});
    std::shuffle(perm[k].begin(), perm[k].end(), rng_);
  }
  std::vector<BatchPair> out;
  out.reserve(static_cast<std::size_t>(steps_));
  for (Index s = 0; s < steps_; ++s) {
    std::vector<Index> s_idx;
    std::vector<Index> t_idx;
    for (std::size_t k = 0; k < src_rows_.size(); ++k) {
      const auto n = static_cast<Index>(perm[k].size());
      if (n == 0) continue;
      for (Index j = 0; j < quota_; ++j) {
        const Index p = perm[k][static_cast<std::size_t>((s * quota_ + j) % n)];
        s_idx.push_back(src_rows_[k][static_cast<std::size_t>(p)]);
        t_idx.push_back(tgt_rows_[k][static_cast<std::size_t>(p)]);
      }
    }
    BatchPair pair;
    const LabeledDataset sb = src_.subset(s_idx);
    const LabeledDataset tb = tgt_.subset(t_idx);
    pair.src = LabeledBatch{sb.samples, sb.labels};
    pair.tgt = LabeledBatch{tb.samples, tb.labels};
    if (unlabeled_ != nullptr) {
      Matrix u(static_cast<Index>(t_idx.size()), unlabeled_->dim());
      for (Index r = 0; r < u.rows(); ++r) {
        if (unlabeled_cursor_ == static_cast<Index>(unlabeled_order_.size())) {
          std::shuffle(unlabeled_order_.begin(), unlabeled_order_.end(), rng_);
          unlabeled_cursor_ = 0;
        }
        u.row(r) = unlabeled_->samples().row(unlabeled_order_[static_cast<std::size_t>(unlabeled_cursor_++)]);
      }
      pair.unlabeled = std::move(u);
    }
    out.push_back(std::move(pair));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Early-stopping bookkeeping: counts epochs without an improvement larger
// than min_delta on any tracked value.
class Plateau {
 public:
  Plateau(int patience, double min_delta, std::size_t tracked)
      : patience_(patience), min_delta_(min_delta),
        best_(tracked, std::numeric_limits<double>::infinity()) {}

  bool update(std::initializer_list<double> values) {
    bool improved = false;
    std::size_t i = 0;
    for (double v : values) {
      if (std::isfinite(v) && best_[i] - v > min_delta_) improved = true;
      if (std::isfinite(v)) best_[i] = std::min(best_[i], v);
      ++i;
    }
    stall_ = improved ? 0 : stall_ + 1;
    return stall_ >= patience_;
  }

 private:
  int patience_;
  double min_delta_;
  std::vector<double> best_;
  int stall_ = 0;
};

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Stage1Result train_stage1(CoupledGraph& g, const LabeledDataset& ds_matched,
                          const LabeledDataset& dl_matched, const UnlabeledSet* du,
                          const TrainConfig& cfg, const EpochMonitor& monitor) {
  cfg.validate(ds_matched.class_count);
  g.validate();
  const UnlabeledSet* extra = cfg.use_unlabeled_recon ? du : nullptr;
  StratifiedBatcher batcher(ds_matched, dl_matched, cfg.batch_size,
                            derive_seed(cfg.seed, kTagBatches), extra);
  CoupledOptimizers opt(cfg.adam());
  Stage1Result result;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto run_phase = [&](bool source_only, bool freeze_source) {
    Plateau plateau(cfg.patience, cfg.min_delta, 2);
    const StepOptions options{cfg.beta, cfg.disable_mmd, freeze_source, true};
    for (int epoch = 0; epoch < cfg.max_epochs_stage1; ++epoch) {
      std::vector<double> ls, lt, rc, md;
      for (const BatchPair& batch : batcher.next_epoch()) {
        if (source_only) {
          ls.push_back(source_only_step(g, batch, opt));
        } else {
          const StepLosses s = simultaneous_step(g, batch, opt, options);
          if (!freeze_source) ls.push_back(s.source);
          lt.push_back(s.target);
          rc.push_back(s.recon);
          md.push_back(s.mmd);
        }
      }
      EpochLog log;
      log.epoch = static_cast<int>(result.history.size()) + 1;
      log.source_loss = ls.empty() ? nan : mean_of(ls);
      log.target_loss = lt.empty() ? nan : mean_of(lt);
      log.recon_target = rc.empty() ? nan : mean_of(rc);
      log.mmd = md.empty() ? nan : mean_of(md);
      if (monitor) log.target_acc = monitor(g);
      result.history.push_back(log);
      ++result.epochs;
      if (plateau.update({log.source_loss, log.target_loss})) {
        result.converged = true;
        break;
      }
    }
  };

  if (cfg.sequential_learning) {
    run_phase(true, false);
    const bool first_converged = result.converged;
    result.converged = false;
    run_phase(false, true);
    result.converged = result.converged && first_converged;
  } else {
    run_phase(false, false);
  }
  return result;
}

// ---------------------------------------------------------------------------

Matrix encode_values(std::span<const DenseLayer> encoder, const Matrix& x) {
  NoGradScope no_grad;
  return run_layers(encoder, Tensor(x)).value();
}

double bottleneck_classwise_mmd(const CoupledGraph& g, const LabeledDataset& src,
                                const LabeledDataset& tgt) {
  const Matrix fs = encode_values(g.source_ae.encoder, src.samples);
  const Matrix ft = encode_values(g.target_ae.encoder, tgt.samples);
  return classwise_centroid_distance(fs, src.labels, ft, tgt.labels, src.class_count);
}

namespace {

double ce_value(const Classifier& clf, const Matrix& features, const Matrix& onehot) {
  NoGradScope no_grad;
  return classifier_ce(Tensor(onehot), classify(clf, Tensor(features))).item();
}

// Minibatch cross-entropy training of `clf` (and `encoder` when non-null) on
// inputs `x`. Early stopping watches the validation loss when a validation
// set is given, the training loss otherwise.
ClassifierResult fit_classifier(std::vector<DenseLayer>* encoder, Classifier& clf,
                                const Matrix& x, const std::vector<int>& y, const Matrix& val_x,
                                const std::vector<int>& val_y, int max_epochs,
                                const TrainConfig& cfg, std::uint64_t seed) {
  ClassifierResult result;
  const int classes = static_cast<int>(clf.class_count());
  const Matrix onehot = one_hot(y, classes);
  const Matrix val_onehot = one_hot(val_y, classes);
  const bool has_val = val_x.rows() > 0;

  AdamState clf_opt(cfg.adam());
  AdamState enc_opt(cfg.adam());
  std::mt19937_64 rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  Plateau plateau(cfg.patience, cfg.min_delta, 1);

  auto forward_features = [&](const Matrix& in) -> Matrix {
    return encoder != nullptr ? encode_values(*encoder, in) : in;
  };

  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> losses;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Matrix bx(static_cast<Index>(end - start), x.cols());
      Matrix by(static_cast<Index>(end - start), classes);
      for (std::size_t i = start; i < end; ++i) {
        bx.row(static_cast<Index>(i - start)) = x.row(order[i]);
        by.row(static_cast<Index>(i - start)) = onehot.row(order[i]);
      }
      Tape tape;
      {
        TapeScope scope(tape);
        Tensor h(bx);
        if (encoder != nullptr) h = run_layers(*encoder, h);
        const Tensor loss = classifier_ce(Tensor(by), classify(clf, h));
        tape.backward(loss);
        losses.push_back(loss.item());
      }
      auto cp = parameters(clf.layers);
      adam_step(cp, clf_opt, freeze_mask(clf.layers));
      if (encoder != nullptr) {
        auto ep = parameters(*encoder);
        adam_step(ep, enc_opt, freeze_mask(*encoder));
      }
    }
    ClassifierLog log;
    log.epoch = epoch + 1;
    log.train_loss = mean_of(losses);
    if (has_val) log.val_loss = ce_value(clf, forward_features(val_x), val_onehot);
    result.history.push_back(log);
    ++result.epochs;
    if (plateau.update({has_val ? log.val_loss : log.train_loss})) break;
  }
  return result;
}

// Stratified hold-out split: round(fraction * n_k) rows of each class with at
// least two rows go to validation.
void holdout_split(const LabeledDataset& d, double fraction, std::uint64_t seed,
                   std::vector<Index>& train, std::vector<Index>& val) {
  std::mt19937_64 rng(seed);
  for (auto rows : rows_per_class(d)) {
    std::shuffle(rows.begin(), rows.end(), rng);
    Index nv = 0;
    if (rows.size() >= 2) {
      nv = static_cast<Index>(std::llround(fraction * static_cast<double>(rows.size())));
      nv = std::min<Index>(nv, static_cast<Index>(rows.size()) - 1);
    }
    val.insert(val.end(), rows.begin(), rows.begin() + nv);
    train.insert(train.end(), rows.begin() + nv, rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
}

}  // namespace

ClassifierResult train_stage2_source_classifier(const AutoEncoder& source_ae, Classifier& clf,
                                                const LabeledDataset& ds,
                                                const TrainConfig& cfg) {
  cfg.validate(0);
  clf.validate();
  if (clf.input_dim() != source_ae.bottleneck()) {
    throw DimensionError("classifier input width differs from source bottleneck");
  }
  std::vector<Index> train_rows;
  std::vector<Index> val_rows;
  holdout_split(ds, cfg.validation_fraction, derive_seed(cfg.seed, kTagStage2), train_rows,
                val_rows);
  const LabeledDataset train = ds.subset(train_rows);
  const LabeledDataset val = ds.subset(val_rows);
  const Matrix features = encode_values(source_ae.encoder, train.samples);
  const Matrix val_features = val.size() > 0 ? encode_values(source_ae.encoder, val.samples)
                                             : Matrix(0, source_ae.bottleneck());
  return fit_classifier(nullptr, clf, features, train.labels, val_features, val.labels,
                        cfg.max_epochs_stage2, cfg, derive_seed(cfg.seed, kTagStage2 + 100));
}

TargetModel train_stage3_target_finetune(const AutoEncoder& target_ae, Classifier& clf,
                                         const LabeledDataset& dl, const TrainConfig& cfg,
                                         ClassifierResult* log) {
  cfg.validate(0);
  if (dl.size() == 0) throw ConfigError("fine-tuning needs at least one labeled target sample");
  clf.validate();
  const Matrix features = encode_values(target_ae.encoder, dl.samples);
  ClassifierResult r = fit_classifier(nullptr, clf, features, dl.labels, Matrix(0, features.cols()),
                                      {}, cfg.max_epochs_stage3, cfg,
                                      derive_seed(cfg.seed, kTagStage3));
  if (log != nullptr) *log = std::move(r);
  TargetModel model;
  model.encoder = clone_layers(target_ae.encoder);
  set_trainable(model.encoder, false);
  model.classifier = clf.clone();
  return model;
}

Predictions predict_labels(const Matrix& probabilities) {
  Predictions out;
  out.labels.reserve(static_cast<std::size_t>(probabilities.rows()));
  out.confidence.reserve(static_cast<std::size_t>(probabilities.rows()));
  for (Index r = 0; r < probabilities.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < probabilities.cols(); ++c) {
      if (probabilities(r, c) > probabilities(r, best)) best = c;
    }
    out.labels.push_back(static_cast<int>(best));
    out.confidence.push_back(probabilities(r, best));
  }
  return out;
}

Predictions predict(const TargetModel& model, const Matrix& x) {
  NoGradScope no_grad;
  return predict_labels(predict_proba(model, Tensor(x)).value());
}

Predictions predict_unlabeled(const TargetModel& model, const UnlabeledSet& du) {
  return predict(model, du.samples());
}

// ---------------------------------------------------------------------------

SsdaResult train_ssda(const LabeledDataset& ds, const LabeledDataset& dl, const UnlabeledSet& du,
                      const TrainConfig& cfg, const EpochMonitor& monitor) {
  cfg.validate(ds.class_count);
  if (dl.size() == 0) throw ConfigError("labeled target set is empty (k >= 1 required)");
  auto [ds_matched, dl_matched] = with_stage("class matching", [&] {
    return class_matched_resample(ds, dl, derive_seed(cfg.seed, kTagResample));
  });

  SsdaResult r;
  r.graph = CoupledGraph::create(ds.dim(), cfg);
  with_stage("stage 1", [&] {
    r.mmd_before = bottleneck_classwise_mmd(r.graph, ds_matched, dl_matched);
    r.stage1 = train_stage1(r.graph, ds_matched, dl_matched, &du, cfg, monitor);
    r.mmd_after = bottleneck_classwise_mmd(r.graph, ds_matched, dl_matched);
  });

  Classifier clf = make_classifier(cfg.bottleneck, ds.class_count,
                                   derive_seed(cfg.seed, kTagClassifierInit), cfg.classifier_hidden);
  with_stage("stage 2", [&] {
    r.stage2 = train_stage2_source_classifier(r.graph.source_ae, clf, ds, cfg);
    r.source_classifier = clf.clone();
  });
  with_stage("stage 3", [&] {
    r.model = train_stage3_target_finetune(r.graph.target_ae, clf, dl, cfg, &r.stage3);
  });
  return r;
}

TargetModel train_source_plus_target(const LabeledDataset& ds, const LabeledDataset& dl,
                                     const TrainConfig& cfg, ClassifierResult* log) {
  cfg.validate(ds.class_count);
  if (ds.dim() != dl.dim()) throw DimensionError("source and target widths differ");
  AutoEncoderSpec spec{ds.dim(), cfg.hidden, cfg.bottleneck};
  const std::uint64_t init = derive_seed(cfg.seed, kTagBaselineInit);
  TargetModel model;
  model.encoder = make_autoencoder(spec, init).encoder;
  model.classifier = make_classifier(cfg.bottleneck, ds.class_count, derive_seed(init, 1),
                                     cfg.classifier_hidden);

  // Validation rows are held out of the source part only; every labeled
  // target sample is used for training.
  std::vector<Index> train_rows;
  std::vector<Index> val_rows;
  holdout_split(ds, cfg.validation_fraction, derive_seed(cfg.seed, kTagBaseline), train_rows,
                val_rows);
  const LabeledDataset train_s = ds.subset(train_rows);
  const LabeledDataset val = ds.subset(val_rows);
  Matrix x(train_s.size() + dl.size(), ds.dim());
  x.topRows(train_s.size()) = train_s.samples;
  x.bottomRows(dl.size()) = dl.samples;
  std::vector<int> y = train_s.labels;
  y.insert(y.end(), dl.labels.begin(), dl.labels.end());

  ClassifierResult r = fit_classifier(&model.encoder, model.classifier, x, y, val.samples,
                                      val.labels, cfg.max_epochs_stage2, cfg,
                                      derive_seed(cfg.seed, kTagBaseline + 100));
  if (log != nullptr) *log = std::move(r);
  return model;
}

}  // namespace ssda
