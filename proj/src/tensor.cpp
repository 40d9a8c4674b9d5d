#include "master/tensor.hpp"

#include <cmath>
#include <sstream>

namespace master {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

namespace {
void validate_shape(const Shape& s) {
  for (auto e : s) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
  }
}
}  // namespace

Tensor::Tensor(Shape shape) : storage_(std::make_shared<detail::TensorStorage>()) {
  validate_shape(shape);
  storage_->values.assign(static_cast<std::size_t>(numel(shape)), 0.0);
  storage_->shape = std::move(shape);
}

Tensor Tensor::uninitialized(Shape shape) {
  Tensor t;
  t.storage_ = std::make_shared<detail::TensorStorage>();
  validate_shape(shape);
  t.storage_->values.resize(static_cast<std::size_t>(numel(shape)));
  t.storage_->shape = std::move(shape);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : storage_(std::make_shared<detail::TensorStorage>()) {
  validate_shape(shape);
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  storage_->shape = std::move(shape);
  storage_->values.assign(values.begin(), values.end());
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.storage_->values.begin(), t.storage_->values.end(), v);
  return t;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return storage_->values[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  storage_->requires_grad = v;
  return *this;
}

double* Tensor::grad_data() {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->values.size(), 0.0);
  return storage_->grad.data();
}

void Tensor::zero_grad() {
  if (!storage_->grad.empty()) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : storage_->values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(const std::string& what) const {
  if (!all_finite()) throw ContractError(what + " contains non-finite values");
}

void GradTape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() expects a scalar loss, got " + shape_str(loss.shape()));
  }
  loss.storage()->grad.assign(1, 1.0);
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

}  // namespace master
