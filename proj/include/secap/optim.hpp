#pragma once

#include <vector>

#include "secap/tensor.hpp"

namespace secap {

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Heavy-ball SGD: v <- momentum * v + (grad + wd * p); p <- p - lr * v.
// Gradients are released after every step, so a parameter that the next
// loss never reaches is reported instead of silently reusing stale values.
template <class T>
class Sgd {
 public:
  Sgd(ParameterStore<T>& params, SgdOptions options);

  void step(double lr);

  const SgdOptions& options() const { return options_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  ParameterStore<T>* params_;
  SgdOptions options_;
  std::vector<std::vector<T>> velocity_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace secap
