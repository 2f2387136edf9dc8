#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tensor is a shared handle: copies alias the same value and gradient slot,
// which is what lets parameters collect gradients from every use on a tape.
// All tensors are rank 2; scalars are 1x1 and vectors are 1xn rows.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ssda {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

class Tape;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Matrix& value() const;
  /// In-place access for optimizers. Never call while a tape holds this tensor.
  Matrix& mutable_value();

  Shape shape() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  const Matrix& grad() const;
  void zero_grad();

  /// Copy of the current value with no gradient tracking.
  Tensor detach() const;

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Matrix value;
    std::optional<Matrix> grad;
    bool requires_grad = false;
    std::uint64_t tape_id = 0;
    std::size_t node = 0;
  };

  std::shared_ptr<Impl> impl_;

  friend class Tape;
};

/// Ordered record of differentiable operations for one forward/backward cycle.
///
/// Ops record onto the thread's active tape (see TapeScope). Nodes are appended
/// in execution order, so every node's inputs precede it.
class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& grad_output)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// Record a node producing `value` from `inputs`. `backward` receives the
  /// gradient with respect to the output and must call accumulate() for inputs.
  Tensor record(Matrix value, std::vector<Tensor> inputs, BackwardFn backward);

  /// Populate grads of every requires_grad tensor reachable from `loss`.
  void backward(const Tensor& loss);

  /// Drop all nodes so the tape can be reused for another pass.
  void reset();

  std::size_t size() const { return nodes_.size(); }

  /// Reject non-finite op outputs with NumericError while enabled.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

  static Tape* active();

  /// Add `g` into t's gradient slot. No-op for tensors without requires_grad.
  static void accumulate(const Tensor& t, const Matrix& g);

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::uint64_t id_;
  bool consumed_ = false;
  bool check_finite_ = false;

  friend class TapeScope;
};

/// Makes a tape the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

/// Disables recording on the current thread: ops produce constants.
class NoGradScope {
 public:
  NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
  ~NoGradScope();

  static bool enabled();

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Operations

enum class OpKind {
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kSigmoid,
  kRelu,
  kSoftmaxRows,
  kMeanRows,
  kSumAll,
  kSquare,
  kLogClamped,
};

inline constexpr double kLogClamp = 1e-12;

std::string to_string(OpKind kind);
int arity(OpKind kind);

/// Dispatch form of the free functions below.
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs);

Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise binary ops accept equal shapes, or a 1xn row on either side
/// broadcast over the other operand's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
/// Column-wise mean over rows: [n x d] -> [1 x d].
Tensor mean_rows(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor square(const Tensor& x);
/// log(max(x, kLogClamp)).
Tensor log_clamped(const Tensor& x);

/// a * x + b, elementwise with scalar coefficients.
Tensor affine(const Tensor& x, double a, double b = 0.0);
Tensor scale(const Tensor& x, double s);
Tensor slice_rows(const Tensor& x, Index begin, Index count);
/// Stacks a on top of b. Column counts must match.
Tensor concat_rows(const Tensor& a, const Tensor& b);

/// Zero-valued [1 x width] join of two tensors. Its backward contributes
/// exactly zero gradient, so it links both operands into one graph without
/// passing information between them.
Tensor dummy_join(const Tensor& a, const Tensor& b, Index width);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckReport {
  Matrix analytic;
  Matrix numeric;
  /// Per-element |analytic - numeric| / max(1, |analytic|, |numeric|).
  Matrix deviation;
  double max_deviation = 0.0;
  Index worst_index = 0;
  bool finite = true;
  bool passed = false;
  std::string diagnostic;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares tape gradients of scalar-valued `f` at `x` against central
/// differences (f(x + h e_i) - f(x - h e_i)) / 2h.
GradCheckReport grad_check(const ScalarFn& f, const Matrix& x, double h = 1e-5,
                           double tol = 1e-5);

}  // namespace ssda
