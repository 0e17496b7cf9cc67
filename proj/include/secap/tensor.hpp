#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "secap/errors.hpp"

namespace secap {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::uint64_t tape_epoch = 0;  // generation of the tape that produced this value
  std::ptrdiff_t node = -1;      // index on that tape; -1 for leaves
};

// Row-major dense tensor. Copies are shallow handles to the same storage, the
// way parameters are shared between a module and the optimizer.
template <class T>
class Tensor {
 public:
  using Impl = TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  // Negative axes count from the end.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();  // allocates zeros on first use
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  // New leaf with a private copy of the values.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  Impl& impl() const { return *impl_; }
  const std::shared_ptr<Impl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

template <class U, class T>
Tensor<U> cast(const Tensor<T>& x) {
  std::vector<U> out(x.data().begin(), x.data().end());
  return Tensor<U>(x.shape(), std::move(out));
}

// Reverse-mode tape. One per thread and scalar type; rebuilt every forward
// pass and consumed by backward().
template <class T>
class Tape {
 public:
  using Impl = TensorImpl<T>;
  using ImplPtr = std::shared_ptr<Impl>;

  struct Node {
    std::string_view op;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    std::function<void()> backward;
  };

  static Tape& current();

  bool tracks(const Impl& x) const { return x.node >= 0 && x.tape_epoch == epoch_; }
  bool needs_grad(const Impl& x) const { return x.requires_grad || tracks(x); }
  bool recording() const;

  // True when at least one input carries gradient and recording is on.
  bool should_record(std::initializer_list<const Impl*> inputs) const;

  void record(std::string_view op, std::vector<ImplPtr> inputs, const ImplPtr& output,
              std::function<void()> backward);

  void backward(const Tensor<T>& loss);
  void clear();

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t epoch() const { return epoch_; }

 private:
  std::vector<Node> nodes_;
  std::uint64_t epoch_ = 1;
};

template <class T>
void backward(const Tensor<T>& loss) {
  Tape<T>::current().backward(loss);
}

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Debug scan: every forward op checks its output for NaN/Inf and throws
// NumericError naming the op.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// Test fixture: multiplies the input-gradient contribution of every node
// whose op name equals `op` by `factor`. Empty op disables it.
void set_backward_fault(std::string op, double factor);

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

// Ordered, name-unique registry of trainable tensors.
template <class T>
class ParameterStore {
 public:
  Tensor<T> add(std::string name, Tensor<T> tensor);
  const std::vector<Parameter<T>>& list() const { return params_; }
  std::vector<Parameter<T>>& list() { return params_; }
  const Parameter<T>* find(std::string_view name) const;
  std::size_t scalar_count() const;
  void clear_grads();

 private:
  std::vector<Parameter<T>> params_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace secap
