#include "ssda/errors.hpp"
#include "ssda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ssda {

namespace {

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined input");
}

Tensor finish(Matrix value, std::vector<Tensor> inputs, Tape::BackwardFn backward) {
  bool track = !NoGradScope::enabled();
  if (track) {
    track = std::any_of(inputs.begin(), inputs.end(),
                        [](const Tensor& t) { return t.requires_grad(); });
  }
  if (!track) return Tensor(std::move(value), false);
  Tape* tape = Tape::active();
  if (tape == nullptr) {
    throw ContractError("differentiable op evaluated without an active tape");
  }
  return tape->record(std::move(value), std::move(inputs), std::move(backward));
}

// Row broadcasting for elementwise binaries.
enum class Broadcast { kNone, kRightRow, kLeftRow };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa == sb) return Broadcast::kNone;
  if (sb.rows == 1 && sb.cols == sa.cols) return Broadcast::kRightRow;
  if (sa.rows == 1 && sa.cols == sb.cols) return Broadcast::kLeftRow;
  throw DimensionError(std::string(op) + ": shapes " + to_string(sa) + " and " + to_string(sb) +
                       " do not broadcast over the batch dimension");
}

// Expand both operands to the output shape.
std::pair<Matrix, Matrix> expand(const Tensor& a, const Tensor& b, Broadcast kind) {
  switch (kind) {
    case Broadcast::kRightRow:
      return {a.value(), b.value().replicate(a.rows(), 1)};
    case Broadcast::kLeftRow:
      return {a.value().replicate(b.rows(), 1), b.value()};
    case Broadcast::kNone:
      break;
  }
  return {a.value(), b.value()};
}

// Reduce an output-shaped gradient back onto an operand that may have been
// broadcast along rows.
Matrix reduce_to(const Matrix& g, const Tensor& target) {
  if (g.rows() == target.rows()) return g;
  return g.colwise().sum();
}

}  // namespace

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "elementwise_mul";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kSumAll: return "sum_all";
    case OpKind::kSquare: return "square";
    case OpKind::kLogClamped: return "log_clamped";
  }
  return "unknown";
}

int arity(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul:
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
      return 2;
    default:
      return 1;
  }
}

Tensor forward_op(OpKind kind, std::span<const Tensor> inputs) {
  if (static_cast<int>(inputs.size()) != arity(kind)) {
    throw ContractError(to_string(kind) + " expects " + std::to_string(arity(kind)) +
                        " inputs, got " + std::to_string(inputs.size()));
  }
  switch (kind) {
    case OpKind::kMatmul: return matmul(inputs[0], inputs[1]);
    case OpKind::kAdd: return add(inputs[0], inputs[1]);
    case OpKind::kSub: return sub(inputs[0], inputs[1]);
    case OpKind::kMul: return mul(inputs[0], inputs[1]);
    case OpKind::kSigmoid: return sigmoid(inputs[0]);
    case OpKind::kRelu: return relu(inputs[0]);
    case OpKind::kSoftmaxRows: return softmax_rows(inputs[0]);
    case OpKind::kMeanRows: return mean_rows(inputs[0]);
    case OpKind::kSumAll: return sum_all(inputs[0]);
    case OpKind::kSquare: return square(inputs[0]);
    case OpKind::kLogClamped: return log_clamped(inputs[0]);
  }
  throw ContractError("unknown op kind");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Matrix out = a.value() * b.value();
  return finish(std::move(out), {a, b}, [a, b](const Matrix& g) {
    if (a.requires_grad()) Tape::accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) Tape::accumulate(b, a.value().transpose() * g);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  const auto kind = broadcast_kind(a, b, "add");
  auto [ea, eb] = expand(a, b, kind);
  Matrix out = ea + eb;
  return finish(std::move(out), {a, b}, [a, b](const Matrix& g) {
    Tape::accumulate(a, reduce_to(g, a));
    Tape::accumulate(b, reduce_to(g, b));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  const auto kind = broadcast_kind(a, b, "sub");
  auto [ea, eb] = expand(a, b, kind);
  Matrix out = ea - eb;
  return finish(std::move(out), {a, b}, [a, b](const Matrix& g) {
    Tape::accumulate(a, reduce_to(g, a));
    if (b.requires_grad()) Tape::accumulate(b, reduce_to(-g, b));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "elementwise_mul");
  require_defined(b, "elementwise_mul");
  const auto kind = broadcast_kind(a, b, "elementwise_mul");
  auto [ea, eb] = expand(a, b, kind);
  Matrix out = ea.cwiseProduct(eb);
  return finish(std::move(out), {a, b},
                [a, b, ea = std::move(ea), eb = std::move(eb)](const Matrix& g) {
                  if (a.requires_grad()) Tape::accumulate(a, reduce_to(g.cwiseProduct(eb), a));
                  if (b.requires_grad()) Tape::accumulate(b, reduce_to(g.cwiseProduct(ea), b));
                });
}

Tensor sigmoid(const Tensor& x) {
  require_defined(x, "sigmoid");
  Matrix y = x.value().unaryExpr([](double v) {
    // Split by sign so exp() never overflows.
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  Matrix saved = y;
  return finish(std::move(y), {x}, [x, y = std::move(saved)](const Matrix& g) {
    Tape::accumulate(x, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  Matrix y = x.value().cwiseMax(0.0);
  return finish(std::move(y), {x}, [x](const Matrix& g) {
    Matrix mask = (x.value().array() > 0.0).cast<double>().matrix();
    Tape::accumulate(x, g.cwiseProduct(mask));
  });
}

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  Matrix y = x.value();
  for (Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Matrix saved = y;
  return finish(std::move(y), {x}, [x, y = std::move(saved)](const Matrix& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = y.cwiseProduct((g.colwise() - dots));
    Tape::accumulate(x, dx);
  });
}

Tensor mean_rows(const Tensor& x) {
  require_defined(x, "mean_rows");
  Matrix y = x.value().colwise().mean();
  return finish(std::move(y), {x}, [x](const Matrix& g) {
    const double inv = 1.0 / static_cast<double>(x.rows());
    Tape::accumulate(x, (g * inv).replicate(x.rows(), 1));
  });
}

Tensor sum_all(const Tensor& x) {
  require_defined(x, "sum_all");
  Matrix y(1, 1);
  y(0, 0) = x.value().sum();
  return finish(std::move(y), {x}, [x](const Matrix& g) {
    Tape::accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Tensor square(const Tensor& x) {
  require_defined(x, "square");
  Matrix y = x.value().array().square().matrix();
  return finish(std::move(y), {x}, [x](const Matrix& g) {
    Tape::accumulate(x, (2.0 * g.array() * x.value().array()).matrix());
  });
}

Tensor log_clamped(const Tensor& x) {
  require_defined(x, "log_clamped");
  Matrix y = x.value().unaryExpr([](double v) { return std::log(std::max(v, kLogClamp)); });
  return finish(std::move(y), {x}, [x](const Matrix& g) {
    Matrix dx = g;
    const Matrix& xv = x.value();
    for (Index i = 0; i < dx.size(); ++i) {
      const double v = xv.data()[i];
      dx.data()[i] = v > kLogClamp ? dx.data()[i] / v : 0.0;
    }
    Tape::accumulate(x, dx);
  });
}

Tensor affine(const Tensor& x, double a, double b) {
  require_defined(x, "affine");
  Matrix y = (a * x.value().array() + b).matrix();
  return finish(std::move(y), {x}, [x, a](const Matrix& g) { Tape::accumulate(x, a * g); });
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }

Tensor slice_rows(const Tensor& x, Index begin, Index count) {
  require_defined(x, "slice_rows");
  if (begin < 0 || count <= 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + to_string(x.shape()));
  }
  Matrix y = x.value().middleRows(begin, count);
  return finish(std::move(y), {x}, [x, begin, count](const Matrix& g) {
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    dx.middleRows(begin, count) = g;
    Tape::accumulate(x, dx);
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_rows");
  require_defined(b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: column counts differ, " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Matrix y(a.rows() + b.rows(), a.cols());
  y.topRows(a.rows()) = a.value();
  y.bottomRows(b.rows()) = b.value();
  return finish(std::move(y), {a, b}, [a, b](const Matrix& g) {
    Tape::accumulate(a, g.topRows(a.rows()));
    Tape::accumulate(b, g.bottomRows(b.rows()));
  });
}

Tensor dummy_join(const Tensor& a, const Tensor& b, Index width) {
  require_defined(a, "dummy_join");
  require_defined(b, "dummy_join");
  if (width <= 0) throw DimensionError("dummy_join: width must be positive");
  Matrix y = Matrix::Zero(1, width);
  return finish(std::move(y), {a, b}, [a, b](const Matrix&) {
    Tape::accumulate(a, Matrix::Zero(a.rows(), a.cols()));
    Tape::accumulate(b, Matrix::Zero(b.rows(), b.cols()));
  });
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const ScalarFn& f, const Matrix& x, double h, double tol) {
  GradCheckReport report;

  Tensor input(x, true);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(input);
    if (loss.size() != 1) throw ContractError("grad_check: f must be scalar-valued");
    if (loss.requires_grad()) tape.backward(loss);
  }
  report.analytic = input.has_grad() ? input.grad() : Matrix::Zero(x.rows(), x.cols());

  report.numeric.resize(x.rows(), x.cols());
  {
    NoGradScope no_grad;
    Matrix probe = x;
    for (Index i = 0; i < probe.size(); ++i) {
      const double orig = probe.data()[i];
      probe.data()[i] = orig + h;
      const double up = f(Tensor(probe)).item();
      probe.data()[i] = orig - h;
      const double down = f(Tensor(probe)).item();
      probe.data()[i] = orig;
      report.numeric.data()[i] = (up - down) / (2.0 * h);
    }
  }

  report.finite = report.analytic.allFinite() && report.numeric.allFinite();
  report.deviation.resize(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double a = report.analytic.data()[i];
    const double n = report.numeric.data()[i];
    const double denom = std::max({1.0, std::abs(a), std::abs(n)});
    const double dev = std::abs(a - n) / denom;
    report.deviation.data()[i] = dev;
    if (!(dev <= report.max_deviation)) {
      report.max_deviation = dev;
      report.worst_index = i;
    }
  }

  if (!report.finite) {
    report.passed = false;
    report.diagnostic = "non-finite gradient encountered";
  } else {
    report.passed = report.max_deviation <= tol;
    report.diagnostic = "max deviation " + std::to_string(report.max_deviation) + " at element " +
                        std::to_string(report.worst_index) + " (analytic " +
                        std::to_string(report.analytic.data()[report.worst_index]) +
                        ", numeric " + std::to_string(report.numeric.data()[report.worst_index]) +
                        ")";
  }
  return report;
}

}  // namespace ssda
