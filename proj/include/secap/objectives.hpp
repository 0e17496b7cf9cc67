#pragma once

#include <cstdint>
#include <span>

#include "secap/nn.hpp"

namespace secap {

struct LossWeights {
  double alpha = 1.0;     // global ID + triplet
  double beta = 1.0;      // local ID + triplet
  double lambda = 0.001;  // view classification + orthogonality
};

// Scalar loss terms; undefined tensors are terms an ablation removes.
template <class T>
struct LossParts {
  Tensor<T> id_global, tri_global;
  Tensor<T> id_local, tri_local;
  Tensor<T> view, orth;
};

template <class T>
Tensor<T> id_ce_loss(const Tensor<T>& features, std::span<const std::int64_t> labels,
                     const nn::Linear<T>& classifier);

template <class T>
Tensor<T> view_ce_loss(const Tensor<T>& view_feat, std::span<const std::int64_t> view_labels,
                       const nn::Linear<T>& view_classifier);

// Batch-hard soft-margin triplet on Euclidean distances: per anchor the
// farthest same-identity sample and the nearest other-identity sample,
// loss = mean ln(1 + exp(d_ap - d_an)). Ties go to the lower batch index.
template <class T>
Tensor<T> soft_triplet_loss(const Tensor<T>& features, std::span<const std::int64_t> labels);

// Mean over the batch of sum_i |inv_i * v_i|.
template <class T>
Tensor<T> orthogonality_loss(const Tensor<T>& x_inv, const Tensor<T>& view_feat);

// alpha (ID_g + Tri_g) + beta (ID_l + Tri_l) + lambda (L_view + L_orth)
template <class T>
Tensor<T> total_loss(const LossParts<T>& parts, const LossWeights& w);

}  // namespace secap
