#pragma once

#include <cstdint>

#include "secap/gradcheck.hpp"
#include "secap/model.hpp"

namespace secap {

struct ModelCheckOptions {
  PrmVariant variant = PrmVariant::Attn;
  bool olp = false;
  Ablation ablation;
  std::uint64_t seed = 7;
  // 0 checks every coordinate (slow on the toy config).
  std::size_t coords_per_param = 4;
  double eps = 1e-5;
};

// Toy encoder (d=64, depth 2, 4 heads, 64x32 images), L=8, two identities.
ModelConfig micro_config(const ModelCheckOptions& options);

// Central-difference check of the full training loss in double precision on
// four random images: two identities, each seen once per view. Parameters
// are redrawn at fan-in scale first so gradients clear the difference noise.
ParamCheckResult model_grad_check(const ModelCheckOptions& options);

}  // namespace secap
