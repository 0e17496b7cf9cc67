#include "secap/objectives.hpp"

#include <limits>
#include <vector>

namespace secap {

template <class T>
Tensor<T> id_ce_loss(const Tensor<T>& features, std::span<const std::int64_t> labels,
                     const nn::Linear<T>& classifier) {
  return cross_entropy(classifier(features), labels);
}

template <class T>
Tensor<T> view_ce_loss(const Tensor<T>& view_feat, std::span<const std::int64_t> view_labels,
                       const nn::Linear<T>& view_classifier) {
  return cross_entropy(view_classifier(view_feat), view_labels);
}

template <class T>
Tensor<T> soft_triplet_loss(const Tensor<T>& features, std::span<const std::int64_t> labels) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw DimensionError("triplet loss expects [B, d] features with B labels, got " +
                         shape_str(features.shape()));
  const std::size_t b = features.dim(0), d = features.dim(1);
  const T* x = features.data().data();
  const auto sq_dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = static_cast<double>(x[i * d + c]) - static_cast<double>(x[j * d + c]);
      s += diff * diff;
    }
    return s;
  };

  std::vector<std::size_t> pos(b), neg(b);
  for (std::size_t a = 0; a < b; ++a) {
    double far = -1.0, near = std::numeric_limits<double>::infinity();
    bool has_pos = false, has_neg = false;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      const double dist = sq_dist(a, j);
      if (labels[j] == labels[a]) {
        if (!has_pos || dist > far) {
          far = dist;
          pos[a] = j;
          has_pos = true;
        }
      } else if (!has_neg || dist < near) {
        near = dist;
        neg[a] = j;
        has_neg = true;
      }
    }
    if (!has_neg) throw ContractError("triplet loss needs at least two identities in the batch");
    if (!has_pos)
      throw ContractError("identity " + std::to_string(labels[a]) +
                          " has a single sample in the batch; triplet mining needs two");
  }

  const auto dist = [&](const std::vector<std::size_t>& other) {
    const auto diff = sub(features, index_select<T>(features, other));
    return sqrt_clamped(sum_lastdim(mul(diff, diff)), static_cast<T>(1e-12));
  };
  return mean(softplus(sub(dist(pos), dist(neg))));
}

template <class T>
Tensor<T> orthogonality_loss(const Tensor<T>& x_inv, const Tensor<T>& view_feat) {
  if (x_inv.shape() != view_feat.shape() || x_inv.rank() != 2)
    throw DimensionError("orthogonality loss needs equal [B, d] shapes, got " +
                         shape_str(x_inv.shape()) + " and " + shape_str(view_feat.shape()));
  return scale(sum(abs(mul(x_inv, view_feat))), T{1} / static_cast<T>(x_inv.dim(0)));
}

template <class T>
Tensor<T> total_loss(const LossParts<T>& parts, const LossWeights& w) {
  Tensor<T> total;
  const auto accumulate = [&](const Tensor<T>& term, double weight) {
    if (!term.defined()) return;
    auto weighted = scale(term, static_cast<T>(weight));
    total = total.defined() ? add(total, weighted) : weighted;
  };
  accumulate(parts.id_global, w.alpha);
  accumulate(parts.tri_global, w.alpha);
  accumulate(parts.id_local, w.beta);
  accumulate(parts.tri_local, w.beta);
  accumulate(parts.view, w.lambda);
  accumulate(parts.orth, w.lambda);
  if (!total.defined()) throw ContractError("total_loss over zero terms");
  return total;
}

#define SECAP_INSTANTIATE_OBJECTIVES(T)                                                          \
  template Tensor<T> id_ce_loss<T>(const Tensor<T>&, std::span<const std::int64_t>,              \
                                   const nn::Linear<T>&);                                        \
  template Tensor<T> view_ce_loss<T>(const Tensor<T>&, std::span<const std::int64_t>,            \
                                     const nn::Linear<T>&);                                      \
  template Tensor<T> soft_triplet_loss<T>(const Tensor<T>&, std::span<const std::int64_t>);      \
  template Tensor<T> orthogonality_loss<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> total_loss<T>(const LossParts<T>&, const LossWeights&);

SECAP_INSTANTIATE_OBJECTIVES(float)
SECAP_INSTANTIATE_OBJECTIVES(double)

}  // namespace secap
