#include "secap/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

namespace secap {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {

thread_local bool t_grad_enabled = true;
bool g_finite_checks = false;
std::string g_fault_op;
double g_fault_factor = 1.0;

void check_shape(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void set_backward_fault(std::string op, double factor) {
  g_fault_op = std::move(op);
  g_fault_factor = factor;
}

// ---------------------------------------------------------------------------
// Tensor

template <class T>
Tensor<T>::Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  impl_->data.assign(shape_numel(shape), T{0});
  impl_->shape = std::move(shape);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <class T>
std::size_t Tensor<T>::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

template <class T>
std::span<T> Tensor<T>::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T{0});
  return impl_->grad;
}

template <class T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T{0});
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
Tape<T>& Tape<T>::current() {
  thread_local Tape tape;
  return tape;
}

template <class T>
bool Tape<T>::recording() const {
  return t_grad_enabled;
}

template <class T>
bool Tape<T>::should_record(std::initializer_list<const Impl*> inputs) const {
  if (!t_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [&](const Impl* x) { return needs_grad(*x); });
}

template <class T>
void Tape<T>::record(std::string_view op, std::vector<ImplPtr> inputs, const ImplPtr& output,
                     std::function<void()> backward) {
  output->tape_epoch = epoch_;
  output->node = static_cast<std::ptrdiff_t>(nodes_.size());
  nodes_.push_back(Node{op, std::move(inputs), output, std::move(backward)});
}

template <class T>
void Tape<T>::clear() {
  nodes_.clear();
  ++epoch_;
}

template <class T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!tracks(loss.impl()))
    throw ContractError("loss is not recorded on the active tape (tape already consumed?)");

  auto& seed = loss.impl().grad;
  seed.assign(1, T{1});

  const bool faulty = !g_fault_op.empty();
  for (auto i = loss.impl().node; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.output->grad.empty()) continue;
    if (faulty && node.op == g_fault_op) {
      std::vector<Impl*> unique;
      std::vector<std::vector<T>> before;
      for (auto& in : node.inputs) {
        if (std::find(unique.begin(), unique.end(), in.get()) != unique.end()) continue;
        unique.push_back(in.get());
        before.push_back(in->grad);
      }
      node.backward();
      for (std::size_t u = 0; u < unique.size(); ++u) {
        auto& g = unique[u]->grad;
        for (std::size_t j = 0; j < g.size(); ++j) {
          const T prev = before[u].empty() ? T{0} : before[u][j];
          g[j] = prev + static_cast<T>(g_fault_factor) * (g[j] - prev);
        }
      }
    } else {
      node.backward();
    }
  }
  clear();
}

// ---------------------------------------------------------------------------
// ParameterStore

template <class T>
Tensor<T> ParameterStore<T>::add(std::string name, Tensor<T> tensor) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  params_.push_back(Parameter<T>{std::move(name), tensor});
  return tensor;
}

template <class T>
const Parameter<T>* ParameterStore<T>::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <class T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <class T>
void ParameterStore<T>::clear_grads() {
  for (auto& p : params_) p.tensor.clear_grad();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace secap
