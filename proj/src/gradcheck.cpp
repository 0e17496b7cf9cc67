#include "secap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "secap/random.hpp"

namespace secap {

namespace {

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

double scalar_of(const Tensor<double>& y) {
  if (y.numel() != 1)
    throw ContractError("finite_diff_check needs a scalar function, got " + shape_str(y.shape()));
  return y.item();
}

}  // namespace

double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double eps) {
  Tensor<double> leaf = x.detach();
  leaf.set_requires_grad(true);
  Tape<double>::current().clear();
  const Tensor<double> y = f(leaf);
  scalar_of(y);
  backward(y);
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  auto data = leaf.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + eps;
    const double up = scalar_of(f(leaf));
    data[i] = orig - eps;
    const double down = scalar_of(f(leaf));
    data[i] = orig;
    worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

ParamCheckResult check_parameter_gradients(const std::function<Tensor<double>()>& loss,
                                           ParameterStore<double>& params,
                                           const ParamCheckOptions& options) {
  params.clear_grads();
  Tape<double>::current().clear();
  const Tensor<double> y = loss();
  scalar_of(y);
  backward(y);

  ParamCheckResult result;
  Rng rng(options.seed);
  NoGradGuard no_grad;
  for (auto& p : params.list()) {
    auto data = p.tensor.data();
    std::vector<double> analytic(data.size(), 0.0);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coords_per_param > 0 && coords.size() > options.coords_per_param) {
      for (std::size_t i = 0; i < options.coords_per_param; ++i)
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      coords.resize(options.coords_per_param);
    }
    for (auto i : coords) {
      const double orig = data[i];
      data[i] = orig + options.eps;
      const double up = scalar_of(loss());
      data[i] = orig - options.eps;
      const double down = scalar_of(loss());
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double err = rel_error(analytic[i], numeric);
      ++result.coords_checked;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        if (err >= result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_param = p.name;
          result.worst_index = i;
          result.worst_analytic = analytic[i];
          result.worst_numeric = numeric;
        }
      }
    }
  }
  params.clear_grads();
  return result;
}

}  // namespace secap
