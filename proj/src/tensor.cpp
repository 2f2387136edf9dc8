#include "ssda/tensor.hpp"

#include "ssda/errors.hpp"

#include <atomic>
#include <utility>

namespace ssda {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local bool g_no_grad = false;
std::atomic<std::uint64_t> g_next_tape_id{1};

}  // namespace

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + " x " + std::to_string(s.cols) + "]";
}

Tensor::Tensor(Matrix value, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  if (value.rows() <= 0 || value.cols() <= 0) {
    throw DimensionError("tensor extents must be positive, got " +
                         to_string(Shape{value.rows(), value.cols()}));
  }
  impl_->value = std::move(value);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad) {
  const auto n = static_cast<Index>(rows.size());
  const auto d = n > 0 ? static_cast<Index>(rows.begin()->size()) : 0;
  Matrix m(n, d);
  Index r = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != d) throw DimensionError("ragged row list");
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return Tensor(std::move(m), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), requires_grad);
}

const Matrix& Tensor::value() const {
  if (!impl_) throw ContractError("access to undefined tensor");
  return impl_->value;
}

Matrix& Tensor::mutable_value() {
  if (!impl_) throw ContractError("access to undefined tensor");
  return impl_->value;
}

Shape Tensor::shape() const { return Shape{rows(), cols()}; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + to_string(shape()));
  return value()(0, 0);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && impl_->grad.has_value(); }

const Matrix& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return *impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.reset();
}

Tensor Tensor::detach() const { return Tensor(value(), false); }

// ---------------------------------------------------------------------------

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() { return g_no_grad ? nullptr : g_active_tape; }

Tensor Tape::record(Matrix value, std::vector<Tensor> inputs, BackwardFn backward) {
  if (consumed_) throw ContractError("recording on a consumed tape; call reset() first");
  if (check_finite_ && !value.allFinite()) {
    throw NumericError("non-finite value produced at tape node " + std::to_string(nodes_.size()));
  }
  Tensor out(std::move(value), true);
  out.impl_->tape_id = id_;
  out.impl_->node = nodes_.size();
  nodes_.push_back(Node{std::move(inputs), out, std::move(backward)});
  return out;
}

void Tape::accumulate(const Tensor& t, const Matrix& g) {
  if (!t.requires_grad()) return;
  auto& impl = *t.impl_;
  if (g.rows() != impl.value.rows() || g.cols() != impl.value.cols()) {
    throw ContractError("gradient shape " + to_string(Shape{g.rows(), g.cols()}) +
                        " does not match tensor " + to_string(t.shape()));
  }
  if (impl.grad) {
    *impl.grad += g;
  } else {
    impl.grad = g;
  }
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  if (consumed_) throw ContractError("backward() called twice without reset()");
  if (loss.impl_->tape_id != id_) {
    throw ContractError("loss was not produced on this tape");
  }
  consumed_ = true;
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = loss.impl_->node + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.output.has_grad()) continue;
    node.backward(node.output.grad());
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
  id_ = g_next_tape_id.fetch_add(1);
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_no_grad) { g_no_grad = true; }

NoGradScope::~NoGradScope() { g_no_grad = previous_; }

bool NoGradScope::enabled() { return g_no_grad; }

}  // namespace ssda
