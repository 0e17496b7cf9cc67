#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "secap/tensor.hpp"

namespace secap {

// Max over coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-12),
// numeric from central differences. Runs in double precision only.
double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double eps = 1e-5);

struct ParamCheckOptions {
  double eps = 1e-5;
  // Coordinates sampled per parameter tensor; 0 checks every coordinate.
  std::size_t coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct ParamCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Same measure over the registered parameters of a model; `loss` must rebuild
// the graph on every call.
ParamCheckResult check_parameter_gradients(const std::function<Tensor<double>()>& loss,
                                           ParameterStore<double>& params,
                                           const ParamCheckOptions& options = {});

}  // namespace secap
