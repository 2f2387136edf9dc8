#include "oracles.hpp"

#include "ssda/errors.hpp"
#include "ssda/losses.hpp"
#include "ssda/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

using namespace ssda;

namespace {

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("glorot uniform respects its bound and is seeded") {
  const Matrix w = init_weights(30, 20, 5);
  const double bound = std::sqrt(6.0 / 50.0);
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(std::abs(w.mean()) < 0.05);
  CHECK(bitwise_equal(w, init_weights(30, 20, 5)));
  CHECK_FALSE(bitwise_equal(w, init_weights(30, 20, 6)));
  CHECK_THROWS_AS(init_weights(0, 3, 1), DimensionError);
}

TEST_CASE("activation names round-trip") {
  for (auto a : {Activation::kLinear, Activation::kRelu, Activation::kSigmoid, Activation::kSoftmax}) {
    CHECK(activation_from_string(to_string(a)) == a);
  }
  CHECK_THROWS_AS(activation_from_string("tanh"), ConfigError);
}

TEST_CASE("dense layers match the scalar oracle") {
  std::mt19937_64 rng(3);
  for (auto act : {Activation::kLinear, Activation::kRelu, Activation::kSigmoid, Activation::kSoftmax}) {
    const DenseLayer layer = DenseLayer::create(7, 4, act, rng);
    layer.bias.value();
    const Matrix x = oracle::uniform(5, 7, rng);
    NoGradScope no_grad;
    const Matrix got = layer.forward(Tensor(x)).value();
    const Matrix want = oracle::dense(x, layer.weights.value(), layer.bias.value(), to_string(act).c_str());
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("auto-encoder layout") {
  const AutoEncoder ae = make_autoencoder({784, {256}, 100}, 1);
  REQUIRE(ae.encoder.size() == 2);
  REQUIRE(ae.decoder.size() == 2);
  CHECK(ae.encoder[0].activation == Activation::kRelu);
  CHECK(ae.encoder[1].activation == Activation::kLinear);
  CHECK(ae.decoder[1].activation == Activation::kSigmoid);
  CHECK(ae.input_dim() == 784);
  CHECK(ae.bottleneck() == 100);
  ae.validate();

  NoGradScope no_grad;
  std::mt19937_64 rng(1);
  const Matrix x = oracle::uniform(3, 784, rng, 0.0, 1.0);
  CHECK(encode(ae, Tensor(x)).shape() == Shape{3, 100});
  const Matrix r = reconstruct(ae, Tensor(x)).value();
  CHECK(r.minCoeff() > 0.0);
  CHECK(r.maxCoeff() < 1.0);
  CHECK_THROWS_AS(encode(ae, Tensor(Matrix::Ones(2, 10))), DimensionError);
  CHECK_THROWS_AS(make_autoencoder({0, {}, 4}, 1), ConfigError);
}

TEST_CASE("classifier outputs probability rows") {
  const Classifier clf = make_classifier(16, 4, 9, {8});
  clf.validate();
  CHECK(clf.class_count() == 4);
  NoGradScope no_grad;
  std::mt19937_64 rng(2);
  const Matrix p = classify(clf, Tensor(oracle::uniform(6, 16, rng))).value();
  for (Index i = 0; i < p.rows(); ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clones are deep and hashes track parameters") {
  AutoEncoder ae = make_autoencoder({6, {5}, 3}, 4);
  const AutoEncoder copy = ae.clone();
  CHECK(parameter_hash(ae.encoder) == parameter_hash(copy.encoder));
  ae.encoder[0].weights.mutable_value()(0, 0) += 1.0;
  CHECK(parameter_hash(ae.encoder) != parameter_hash(copy.encoder));
  CHECK(copy.encoder[0].weights.value()(0, 0) != ae.encoder[0].weights.value()(0, 0));
}

TEST_CASE("adam matches a hand-rolled reference") {
  std::mt19937_64 rng(8);
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  Tensor p(oracle::uniform(3, 2, rng), true);
  Matrix ref = p.value();
  Matrix m = Matrix::Zero(3, 2), v = Matrix::Zero(3, 2);
  AdamState state(cfg);
  std::vector<Tensor> params{p};
  for (int t = 1; t <= 5; ++t) {
    const Matrix g = oracle::uniform(3, 2, rng);
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum_all(mul(p, Tensor(g))));
    }
    adam_step(params, state, FreezeMask{{true}});
    for (Index i = 0; i < g.size(); ++i) {
      m.data()[i] = 0.9 * m.data()[i] + 0.1 * g.data()[i];
      v.data()[i] = 0.999 * v.data()[i] + 0.001 * g.data()[i] * g.data()[i];
      const double mh = m.data()[i] / (1 - std::pow(0.9, t));
      const double vh = v.data()[i] / (1 - std::pow(0.999, t));
      ref.data()[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK((p.value() - ref).cwiseAbs().maxCoeff() < 1e-14);
    CHECK_FALSE(p.has_grad());
  }
}

TEST_CASE("adam leaves frozen parameters bitwise unchanged") {
  AutoEncoder ae = make_autoencoder({5, {4}, 2}, 1);
  set_trainable(ae.encoder, false);
  const Matrix before_enc = ae.encoder[0].weights.value();
  const Matrix before_dec = ae.decoder[0].weights.value();
  std::vector<Tensor> params = parameters(ae);
  AdamState state;
  for (int step = 0; step < 3; ++step) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x(Matrix::Constant(2, 5, 0.3));
    tape.backward(recon_bce(x, reconstruct(ae, x)));
    adam_step(params, state, freeze_mask(ae));
  }
  CHECK(bitwise_equal(ae.encoder[0].weights.value(), before_enc));
  CHECK_FALSE(bitwise_equal(ae.decoder[0].weights.value(), before_dec));
  CHECK_FALSE(ae.encoder[0].weights.has_grad());
}

TEST_CASE("adam contracts") {
  Tensor p(Matrix::Ones(2, 2), true);
  std::vector<Tensor> params{p};
  AdamState state;
  CHECK_THROWS_AS(adam_step(params, state, FreezeMask{{true, true}}), ContractError);

  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(mul(p, Tensor(Matrix::Constant(2, 2, std::nan(""))))));
  }
  const Matrix before = p.value();
  CHECK_THROWS_AS(adam_step(params, state, FreezeMask{{true}}), NumericError);
  CHECK(bitwise_equal(p.value(), before));
}
