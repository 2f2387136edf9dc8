#include "oracles.hpp"

#include "ssda/errors.hpp"
#include "ssda/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ssda;

namespace {

// sum(op(x) .* w) gives a scalar whose gradient exercises every output entry.
Tensor weighted_sum(const Tensor& y, const Matrix& w) { return sum_all(mul(y, Tensor(w))); }

void check_grad(const ScalarFn& f, const Matrix& x) {
  const GradCheckReport r = grad_check(f, x);
  INFO(r.diagnostic);
  CHECK(r.finite);
  CHECK(r.passed);
}

}  // namespace

TEST_CASE("forward values on hand examples") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
  CHECK(matmul(a, b).value() == Tensor::from_rows({{19, 22}, {43, 50}}).value());
  CHECK((a + Tensor::from_rows({{10, 20}})).value() == Tensor::from_rows({{11, 22}, {13, 24}}).value());
  CHECK((Tensor::from_rows({{10, 20}}) - a).value() == Tensor::from_rows({{9, 18}, {7, 16}}).value());
  CHECK((a * b).value() == Tensor::from_rows({{5, 12}, {21, 32}}).value());
  CHECK(mean_rows(a).value() == Tensor::from_rows({{2, 3}}).value());
  CHECK(sum_all(a).item() == 10.0);
  CHECK(square(a).value() == Tensor::from_rows({{1, 4}, {9, 16}}).value());
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor::from_rows({{-1, 0, 2}})).value() == Tensor::from_rows({{0, 0, 2}}).value());
  CHECK(log_clamped(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(1e-12)));
  CHECK(affine(a, 2.0, 1.0).value() == Tensor::from_rows({{3, 5}, {7, 9}}).value());
  CHECK(slice_rows(a, 1, 1).value() == Tensor::from_rows({{3, 4}}).value());
  CHECK(concat_rows(a, b).rows() == 4);

  const Matrix s = softmax_rows(Tensor::from_rows({{1, 2, 3}, {1000, 1000, 1000}})).value();
  CHECK(s.row(0).sum() == doctest::Approx(1.0));
  CHECK(s(1, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(s.allFinite());
}

TEST_CASE("shape errors are DimensionError") {
  const Tensor a(Matrix::Ones(2, 3));
  const Tensor b(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(mul(a, Tensor(Matrix::Ones(1, 2))), DimensionError);
  CHECK_THROWS_AS(slice_rows(a, 1, 2), DimensionError);
  CHECK_THROWS_AS(concat_rows(a, b), DimensionError);
  CHECK_THROWS_AS(dummy_join(a, b, 0), DimensionError);
  CHECK_THROWS_AS(Tensor(Matrix(0, 3)), DimensionError);
}

TEST_CASE("forward_op dispatch checks arity") {
  const Tensor a(Matrix::Ones(2, 2));
  const std::vector<Tensor> one{a};
  CHECK_THROWS_AS(forward_op(OpKind::kMatmul, one), ContractError);
  CHECK(forward_op(OpKind::kSumAll, one).item() == 4.0);
  CHECK(to_string(OpKind::kMul) == "elementwise_mul");
}

TEST_CASE("tape contracts") {
  SUBCASE("backward twice without reset") {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x(Matrix::Ones(2, 2), true);
    const Tensor loss = sum_all(square(x));
    tape.backward(loss);
    CHECK(x.grad()(0, 0) == 2.0);
    CHECK_THROWS_AS(tape.backward(loss), ContractError);
    tape.reset();
    CHECK(tape.size() == 0);
  }
  SUBCASE("loss from another tape") {
    Tape a, b;
    const Tensor x(Matrix::Ones(1, 1), true);
    Tensor loss;
    {
      TapeScope scope(a);
      loss = square(x);
    }
    CHECK_THROWS_AS(b.backward(loss), ContractError);
  }
  SUBCASE("differentiable op without a tape") {
    const Tensor x(Matrix::Ones(1, 1), true);
    CHECK_THROWS_AS(square(x), ContractError);
  }
  SUBCASE("no-grad scope records nothing") {
    Tape tape;
    TapeScope scope(tape);
    NoGradScope no_grad;
    const Tensor x(Matrix::Ones(2, 2), true);
    const Tensor y = sum_all(square(x));
    CHECK(tape.size() == 0);
    CHECK_FALSE(y.requires_grad());
  }
  SUBCASE("shared subexpression accumulates") {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = Tensor::scalar(3.0, true);
    const Tensor y = square(x);
    tape.backward(add(y, y));  // d/dx 2x^2 = 4x
    CHECK(x.grad()(0, 0) == 12.0);
  }
}

TEST_CASE("dummy_join is numerically inert") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor a(Matrix::Constant(3, 4, 2.0), true);
  const Tensor b(Matrix::Constant(5, 4, -1.0), true);
  const Tensor d = dummy_join(a, b, 4);
  CHECK(d.shape() == Shape{1, 4});
  CHECK(d.value().isZero(0.0));
  tape.backward(add(sum_all(a), sum_all(d)));
  CHECK(a.grad().isOnes(0.0));
  CHECK(b.grad().isZero(0.0));
}

TEST_CASE("grad_check flags a wrong backward") {
  const ScalarFn bad = [](const Tensor& x) {
    Tape* tape = Tape::active();
    if (tape == nullptr || NoGradScope::enabled()) return sum_all(square(x));
    // Claims d(x^2)/dx = x instead of 2x.
    Tensor y = tape->record(x.value().array().square().matrix(), {x},
                            [x](const Matrix& g) { Tape::accumulate(x, g.cwiseProduct(x.value())); });
    return sum_all(y);
  };
  const GradCheckReport r = grad_check(bad, Matrix::Constant(2, 2, 1.5));
  CHECK_FALSE(r.passed);
  CHECK(r.max_deviation > 0.1);
}

TEST_CASE("every op passes grad_check on 20 random instances") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    CAPTURE(trial);
    std::uniform_int_distribution<Index> dim(1, 5);
    const Index n = dim(rng), m = dim(rng), k = dim(rng);
    const Matrix w = oracle::uniform(n, m, rng);
    const Matrix other = oracle::uniform(n, m, rng);
    const Matrix row = oracle::uniform(1, m, rng);
    const Matrix right = oracle::uniform(m, k, rng);
    const Matrix wk = oracle::uniform(n, k, rng);
    const Matrix x = oracle::uniform_off_zero(n, m, rng);
    const Matrix positive = oracle::uniform(n, m, rng, 0.2, 2.0);

    check_grad([&](const Tensor& t) { return weighted_sum(matmul(t, Tensor(right)), wk); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(matmul(Tensor(other), t), wk); },
               oracle::uniform(m, k, rng));
    check_grad([&](const Tensor& t) { return weighted_sum(add(t, Tensor(other)), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(add(Tensor(other), t), w); }, row);
    check_grad([&](const Tensor& t) { return weighted_sum(sub(t, Tensor(row)), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(sub(Tensor(other), t), w); }, row);
    check_grad([&](const Tensor& t) { return weighted_sum(mul(t, Tensor(other)), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(mul(t, t), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(mul(Tensor(other), t), w); }, row);
    check_grad([&](const Tensor& t) { return weighted_sum(sigmoid(t), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(relu(t), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(softmax_rows(t), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(mean_rows(t), row); }, x);
    check_grad([&](const Tensor& t) { return sum_all(t); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(square(t), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(log_clamped(t), w); }, positive);
    check_grad([&](const Tensor& t) { return weighted_sum(affine(t, -1.5, 0.25), w); }, x);
    check_grad([&](const Tensor& t) { return weighted_sum(slice_rows(t, n - 1, 1), row); }, x);
    check_grad(
        [&](const Tensor& t) {
          return weighted_sum(concat_rows(t, Tensor(other)), Matrix::Ones(2 * n, m));
        },
        x);
    check_grad([&](const Tensor& t) { return add(sum_all(t), sum_all(dummy_join(t, t, 3))); }, x);
  }
}

TEST_CASE("finite checking on the tape") {
  Tape tape;
  tape.set_check_finite(true);
  TapeScope scope(tape);
  const Tensor x(Matrix::Constant(1, 1, std::numeric_limits<double>::infinity()), true);
  CHECK_THROWS_AS(square(x), NumericError);
}
