#include "secap/optim.hpp"

namespace secap {

template <class T>
Sgd<T>::Sgd(ParameterStore<T>& params, SgdOptions options) : params_(&params), options_(options) {
  for (const auto& p : params_->list()) velocity_.emplace_back(p.tensor.numel(), T{0});
}

template <class T>
void Sgd<T>::step(double lr) {
  auto& list = params_->list();
  for (const auto& p : list)
    if (!p.tensor.has_grad())
      throw ContractError("parameter '" + p.name + "' has no gradient at optimizer step");
  const T mom = static_cast<T>(options_.momentum);
  const T wd = static_cast<T>(options_.weight_decay);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto w = list[i].tensor.data();
    const auto g = list[i].tensor.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = mom * v[j] + (g[j] + wd * w[j]);
      w[j] -= rate * v[j];
    }
    list[i].tensor.clear_grad();
  }
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace secap
