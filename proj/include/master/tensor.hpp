#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace master {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t numel(const Shape& s);

// Error taxonomy shared across the library. The CLI maps these onto exit codes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// 64-byte-aligned buffers keep vectorized reduction order independent of
// heap layout, which keeps training runs bitwise reproducible. Sized
// construction default-initializes (no zero fill); writers that need zeros
// use assign().
template <class T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  bool operator==(const AlignedAlloc&) const { return true; }
  bool operator!=(const AlignedAlloc&) const { return false; }
};

using AlignedBuffer = std::vector<double, AlignedAlloc<double>>;

struct TensorStorage {
  Shape shape;
  AlignedBuffer values;
  bool requires_grad = false;
  AlignedBuffer grad;  // empty until first accumulation
};

}  // namespace detail

/// Dense n-dimensional f64 array, row-major. Copying a Tensor copies the
/// handle; the storage is shared. Values are written once by the op that
/// creates them; only the grad buffer accumulates afterwards.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);                             // zero-filled
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  /// Allocated but unwritten; for op outputs that overwrite every element.
  static Tensor uninitialized(Shape shape);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  int rank() const { return static_cast<int>(storage_->shape.size()); }
  std::int64_t extent(int axis) const { return storage_->shape[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(storage_->values.size()); }

  double* data() { return storage_->values.data(); }
  const double* data() const { return storage_->values.data(); }
  double operator[](std::int64_t i) const { return storage_->values[static_cast<std::size_t>(i)]; }
  double& operator[](std::int64_t i) { return storage_->values[static_cast<std::size_t>(i)]; }

  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return !storage_->grad.empty(); }
  /// Grad buffer, allocated (zeroed) on first access. Same shape as data.
  double* grad_data();
  const detail::AlignedBuffer& grad() const { return storage_->grad; }
  void zero_grad();

  bool all_finite() const;
  /// Throws ContractError naming `what` if any value is NaN/Inf.
  void check_finite(const std::string& what) const;

  std::shared_ptr<detail::TensorStorage> storage() const { return storage_; }

 private:
  std::shared_ptr<detail::TensorStorage> storage_;
};

/// Reverse-mode tape. Ops append backward rules in execution order;
/// backward() replays them exactly once, last-recorded first.
class GradTape {
 public:
  void record(std::function<void()> rule) { rules_.push_back(std::move(rule)); }
  std::size_t size() const { return rules_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  void backward(const Tensor& loss);
  void clear() { rules_.clear(); }

 private:
  std::vector<std::function<void()>> rules_;
};

GradTape* active_tape();

/// Activates a tape for the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

/// Suspends recording (finite-difference probes, metrics, inference).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* previous_;
};

}  // namespace master
