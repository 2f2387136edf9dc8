#include "oracles.hpp"

#include "ssda/errors.hpp"
#include "ssda/trainer.hpp"

#include <doctest.h>

#include <cstring>
#include <random>
#include <set>

using namespace ssda;

namespace {

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same_params(std::span<const DenseLayer> a, std::span<const DenseLayer> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a[i].weights.value(), b[i].weights.value()) ||
        !bitwise_equal(a[i].bias.value(), b[i].bias.value())) {
      return false;
    }
  }
  return true;
}

// Two Gaussian blobs per class in [0,1]^d, class k centred near k/(C+1).
LabeledDataset blobs(int classes, int per_class, Index d, std::uint64_t seed, double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.04);
  LabeledDataset ds;
  ds.class_count = classes;
  ds.samples.resize(classes * per_class, d);
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      const Index r = k * per_class + i;
      for (Index j = 0; j < d; ++j) {
        const double centre = (j % classes == k ? 0.7 : 0.3) + shift;
        ds.samples(r, j) = std::clamp(centre + noise(rng), 0.0, 1.0);
      }
      ds.labels.push_back(k);
    }
  }
  return ds;
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = {8};
  c.bottleneck = 4;
  c.batch_size = 12;
  c.max_epochs_stage1 = 6;
  c.max_epochs_stage2 = 6;
  c.max_epochs_stage3 = 6;
  c.seed = 3;
  return c;
}

BatchPair make_pair(const LabeledDataset& s, const LabeledDataset& t) {
  return BatchPair{{s.samples, s.labels}, {t.samples, t.labels}, std::nullopt};
}

std::vector<Matrix> grads(const AutoEncoder& ae) {
  std::vector<Matrix> out;
  for (const auto& p : parameters(ae)) out.push_back(p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols()));
  return out;
}

double max_gap(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double g = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) g = std::max(g, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return g;
}

void zero(const AutoEncoder& ae) {
  for (auto p : parameters(ae)) p.zero_grad();
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  c.validate(4);
  c.batch_size = 3;
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c = TrainConfig{};
  c.beta = -1.0;
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(4), ConfigError);

  const nlohmann::json j = small_config();
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(TrainConfig{}.beta == 0.25);
  CHECK(TrainConfig{}.learning_rate == 1e-3);
  CHECK(TrainConfig{}.bottleneck == 100);
  CHECK_FALSE(TrainConfig{}.use_unlabeled_recon);
}

TEST_CASE("class-matched resampling equalizes per-class counts") {
  const LabeledDataset ds = blobs(3, 10, 4, 1);
  LabeledDataset dl = blobs(3, 2, 4, 2);
  const auto [s, t] = class_matched_resample(ds, dl, 9);
  CHECK(s.class_counts() == t.class_counts());
  for (Index c : t.class_counts()) CHECK(c == 10);
  CHECK(s.labels == t.labels);
  CHECK(std::is_sorted(t.labels.begin(), t.labels.end()));

  // Every labeled target row survives at least once.
  std::set<std::vector<double>> kept;
  for (Index r = 0; r < t.size(); ++r) kept.insert({t.samples.row(r).begin(), t.samples.row(r).end()});
  for (Index r = 0; r < dl.size(); ++r) CHECK(kept.count({dl.samples.row(r).begin(), dl.samples.row(r).end()}) == 1);

  const auto [s2, t2] = class_matched_resample(ds, dl, 9);
  CHECK(t2.samples == t.samples);

  dl = dl.subset(std::vector<Index>{0, 1, 2, 3});  // class 2 gone
  CHECK_THROWS_AS(class_matched_resample(ds, dl, 1), MissingClassError);
}

TEST_CASE("stratified batches carry the same class quota on both sides") {
  const auto [s, t] = class_matched_resample(blobs(4, 10, 3, 1), blobs(4, 3, 3, 2), 1);
  StratifiedBatcher batcher(s, t, 10, 5);
  CHECK(batcher.quota() == 2);
  CHECK(batcher.steps_per_epoch() == 5);
  for (const BatchPair& b : batcher.next_epoch()) {
    b.validate();
    CHECK(b.src.labels == b.tgt.labels);
    CHECK(b.src.labels == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});
  }
  CHECK_THROWS_AS(StratifiedBatcher(s, t, 3, 1), ConfigError);
  CHECK_THROWS_AS(StratifiedBatcher(blobs(4, 10, 3, 1), blobs(4, 3, 3, 2), 8, 1), ContractError);
}

TEST_CASE("batch pair validation") {
  BatchPair b = make_pair(blobs(2, 2, 3, 1), blobs(2, 2, 3, 2));
  b.validate();
  b.tgt.labels = {0, 0, 0, 0};
  CHECK_THROWS_AS(b.validate(), MissingClassError);
  b = make_pair(blobs(2, 2, 3, 1), blobs(2, 2, 3, 2).subset(std::vector<Index>{0, 1, 2}));
  CHECK_THROWS_AS(b.validate(), ContractError);
}

TEST_CASE("dummy layer leaves losses and gradients unchanged") {
  const TrainConfig cfg = small_config();
  const CoupledGraph g = CoupledGraph::create(6, cfg);
  const BatchPair batch = make_pair(blobs(3, 4, 6, 1), blobs(3, 4, 6, 2, 0.1));

  for (bool disable : {false, true}) {
    CAPTURE(disable);
    StepOptions opt{0.5, disable, false, true};
    double coupled_total = 0.0;
    {
      Tape tape;
      TapeScope scope(tape);
      const CoupledLoss l = coupled_forward(g, batch, opt);
      coupled_total = l.total.item();
      tape.backward(l.total);
    }
    const auto gs = grads(g.source_ae), gt = grads(g.target_ae);
    zero(g.source_ae);
    zero(g.target_ae);

    opt.couple = false;
    double separate_total = 0.0;
    {
      Tape tape;
      TapeScope scope(tape);
      const CoupledLoss l = coupled_forward(g, batch, opt);
      separate_total = l.total.item();
      tape.backward(l.total);
    }
    CHECK(std::abs(coupled_total - separate_total) <= 1e-12);
    CHECK(max_gap(gs, grads(g.source_ae)) <= 1e-12);
    CHECK(max_gap(gt, grads(g.target_ae)) <= 1e-12);
    zero(g.source_ae);
    zero(g.target_ae);
  }

  // Without the MMD term, the coupled graph equals two independent auto-encoders.
  {
    Tape tape;
    TapeScope scope(tape);
    const CoupledLoss l = coupled_forward(g, batch, StepOptions{0.5, true, false, true});
    tape.backward(l.total);
  }
  const auto gs = grads(g.source_ae), gt = grads(g.target_ae);
  zero(g.source_ae);
  zero(g.target_ae);
  for (const auto* side : {&batch.src, &batch.tgt}) {
    const AutoEncoder& ae = side == &batch.src ? g.source_ae : g.target_ae;
    Tape tape;
    TapeScope scope(tape);
    const Tensor x(side->x);
    tape.backward(recon_bce(x, reconstruct(ae, x)));
  }
  CHECK(max_gap(gs, grads(g.source_ae)) <= 1e-12);
  CHECK(max_gap(gt, grads(g.target_ae)) <= 1e-12);
}

TEST_CASE("the MMD term reaches both encoders") {
  const CoupledGraph g = CoupledGraph::create(6, small_config());
  const BatchPair batch = make_pair(blobs(3, 4, 6, 1), blobs(3, 4, 6, 2, 0.1));
  auto source_grad = [&](double beta, bool freeze) {
    Tape tape;
    TapeScope scope(tape);
    const CoupledLoss l = coupled_forward(g, batch, StepOptions{beta, false, freeze, true});
    tape.backward(l.total);
    const auto out = grads(g.source_ae);
    zero(g.source_ae);
    zero(g.target_ae);
    return out;
  };
  CHECK(max_gap(source_grad(0.0, false), source_grad(2.0, false)) > 1e-6);
  CHECK(max_gap(source_grad(2.0, true), std::vector<Matrix>(source_grad(0.0, true))) == 0.0);
  for (const auto& m : source_grad(2.0, true)) CHECK(m.isZero(0.0));
}

TEST_CASE("symmetric setup gives equal source and target trajectories at beta 0") {
  TrainConfig cfg = small_config();
  cfg.beta = 0.0;
  CoupledGraph g = CoupledGraph::create(6, cfg);
  g.target_ae = g.source_ae.clone();
  const LabeledDataset data = blobs(3, 6, 6, 4);
  const BatchPair batch = make_pair(data, data);
  CoupledOptimizers opt(cfg.adam());
  for (int step = 0; step < 5; ++step) {
    const StepLosses l = simultaneous_step(g, batch, opt, StepOptions{0.0, false, false, true});
    CHECK(std::abs(l.source - l.target) <= 1e-9);
  }
  CHECK(same_params(g.source_ae.encoder, g.target_ae.encoder));
}

TEST_CASE("freeze_source keeps the source auto-encoder bitwise fixed") {
  CoupledGraph g = CoupledGraph::create(6, small_config());
  const AutoEncoder before = g.source_ae.clone();
  const AutoEncoder target_before = g.target_ae.clone();
  const BatchPair batch = make_pair(blobs(3, 4, 6, 1), blobs(3, 4, 6, 2, 0.1));
  CoupledOptimizers opt;
  const StepLosses l = simultaneous_step(g, batch, opt, StepOptions{0.25, false, true, true});
  CHECK(std::isnan(l.source));
  CHECK(same_params(g.source_ae.encoder, before.encoder));
  CHECK(same_params(g.source_ae.decoder, before.decoder));
  CHECK_FALSE(same_params(g.target_ae.encoder, target_before.encoder));
}

TEST_CASE("stage 2 and stage 3 freeze contracts") {
  const TrainConfig cfg = small_config();
  const LabeledDataset ds = blobs(3, 20, 6, 1);
  const LabeledDataset dl = blobs(3, 2, 6, 2, 0.1);
  CoupledGraph g = CoupledGraph::create(6, cfg);
  const AutoEncoder source_before = g.source_ae.clone();
  const AutoEncoder target_before = g.target_ae.clone();

  Classifier clf = make_classifier(cfg.bottleneck, 3, 1);
  const Classifier clf_before = clf.clone();
  train_stage2_source_classifier(g.source_ae, clf, ds, cfg);
  CHECK(same_params(g.source_ae.encoder, source_before.encoder));
  CHECK_FALSE(same_params(clf.layers, clf_before.layers));

  const Classifier after_stage2 = clf.clone();
  const TargetModel model = train_stage3_target_finetune(g.target_ae, clf, dl, cfg);
  CHECK(same_params(g.target_ae.encoder, target_before.encoder));
  CHECK(same_params(model.encoder, target_before.encoder));
  for (const auto& layer : model.encoder) CHECK_FALSE(layer.trainable);
  CHECK_FALSE(same_params(model.classifier.layers, after_stage2.layers));

  CHECK_THROWS_AS(train_stage3_target_finetune(g.target_ae, clf, dl.subset(std::vector<Index>{}), cfg),
                  ConfigError);
}

TEST_CASE("predictions break ties toward the lower class") {
  const Predictions p = predict_labels(Tensor::from_rows({{0.4, 0.4, 0.2}, {0.1, 0.3, 0.6}}).value());
  CHECK(p.labels == std::vector<int>{0, 2});
  CHECK(p.confidence[1] == 0.6);
}

TEST_CASE("end-to-end training is deterministic and stage-labeled") {
  const TrainConfig cfg = small_config();
  const LabeledDataset ds = blobs(3, 20, 6, 1);
  const LabeledDataset target = blobs(3, 10, 6, 2, 0.1);
  const KShotSplit split = make_kshot_split(target, 2, 4);

  const SsdaResult a = train_ssda(ds, split.labeled, split.unlabeled, cfg);
  const SsdaResult b = train_ssda(ds, split.labeled, split.unlabeled, cfg);
  CHECK(parameter_hash(a.model.encoder) == parameter_hash(b.model.encoder));
  CHECK(parameter_hash(a.model.classifier.layers) == parameter_hash(b.model.classifier.layers));
  CHECK(predict_unlabeled(a.model, split.unlabeled).labels ==
        predict_unlabeled(b.model, split.unlabeled).labels);
  CHECK(a.stage1.history.size() == static_cast<std::size_t>(a.stage1.epochs));
  CHECK(a.mmd_before > 0.0);

  TrainConfig other = cfg;
  other.seed = 4;
  CHECK(parameter_hash(train_ssda(ds, split.labeled, split.unlabeled, other).model.encoder) !=
        parameter_hash(a.model.encoder));

  const LabeledDataset missing = split.labeled.subset(std::vector<Index>{0, 1, 2, 3});
  try {
    train_ssda(ds, missing, split.unlabeled, cfg);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "class matching");
  }
  CHECK_THROWS_AS(train_ssda(ds, split.labeled.subset(std::vector<Index>{}), split.unlabeled, cfg),
                  ConfigError);
}

TEST_CASE("plateau stopping ends stage 1 before the epoch cap") {
  TrainConfig cfg = small_config();
  cfg.max_epochs_stage1 = 400;
  cfg.patience = 3;
  cfg.min_delta = 1e-2;
  const auto [s, t] = class_matched_resample(blobs(2, 10, 4, 1), blobs(2, 2, 4, 2), 1);
  CoupledGraph g = CoupledGraph::create(4, cfg);
  const Stage1Result r = train_stage1(g, s, t, nullptr, cfg);
  CHECK(r.converged);
  CHECK(r.epochs < 400);
}

TEST_CASE("sequential ablation trains the source first, then the target alone") {
  TrainConfig cfg = small_config();
  cfg.sequential_learning = true;
  const auto [s, t] = class_matched_resample(blobs(2, 10, 4, 1), blobs(2, 2, 4, 2), 1);
  CoupledGraph g = CoupledGraph::create(4, cfg);
  const Stage1Result r = train_stage1(g, s, t, nullptr, cfg);
  REQUIRE(r.history.size() >= 2);
  CHECK(std::isnan(r.history.front().target_loss));
  CHECK_FALSE(std::isnan(r.history.front().source_loss));
  CHECK(std::isnan(r.history.back().source_loss));
  CHECK_FALSE(std::isnan(r.history.back().target_loss));
}

TEST_CASE("S+T baseline trains on labeled data only") {
  const TrainConfig cfg = small_config();
  const LabeledDataset ds = blobs(3, 20, 6, 1);
  const LabeledDataset dl = blobs(3, 2, 6, 2, 0.1);
  ClassifierResult log;
  const TargetModel m = train_source_plus_target(ds, dl, cfg, &log);
  CHECK(log.epochs > 0);
  CHECK(m.encoder.back().out_dim() == cfg.bottleneck);
  NoGradScope no_grad;
  CHECK(predict(m, dl.samples).labels.size() == 6);
}
