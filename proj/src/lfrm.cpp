#include "secap/lfrm.hpp"

namespace secap {

template <class T>
TwoWayBlock<T>::TwoWayBlock(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                            std::size_t heads, std::size_t ffn_mult, Rng& rng)
    : prompt_self(store, name + ".prompt_self", dim, heads, rng),
      prompt_to_image(store, name + ".prompt_to_image", dim, heads, rng),
      prompt_ffn(store, name + ".prompt_ffn", dim, ffn_mult, rng),
      image_to_prompt(store, name + ".image_to_prompt", dim, heads, rng) {}

template <class T>
std::pair<Tensor<T>, Tensor<T>> TwoWayBlock<T>::operator()(const Tensor<T>& f_p,
                                                           const Tensor<T>& f_local) const {
  if (f_p.rank() != 3 || f_local.rank() != 3 || f_p.dim(0) != f_local.dim(0) ||
      f_p.dim(2) != f_local.dim(2))
    throw DimensionError("two-way block expects [B,L,d] and [B,P,d], got " + shape_str(f_p.shape()) +
                         " and " + shape_str(f_local.shape()));
  auto p_next = add(prompt_ffn(prompt_to_image.residual(prompt_self.residual(f_p), f_local)), f_p);
  auto i_next = add(image_to_prompt(f_local, p_next), f_local);
  return {std::move(p_next), std::move(i_next)};
}

template <class T>
void TwoWayBlock<T>::zero_outputs() {
  prompt_self.zero_output();
  prompt_to_image.zero_output();
  prompt_ffn.zero_output();
  image_to_prompt.zero_output();
}

template <class T>
FeatureFusion<T>::FeatureFusion(ParameterStore<T>& store, const std::string& name,
                                std::size_t dim, std::size_t heads, std::size_t ffn_mult, Rng& rng)
    : ca(store, name + ".ca", dim, heads, rng),
      sa(store, name + ".sa", dim, heads, rng),
      ffn(store, name + ".ffn", dim, ffn_mult, rng) {}

template <class T>
Tensor<T> FeatureFusion<T>::operator()(const Tensor<T>& out_token, const Tensor<T>& f_p,
                                       const Tensor<T>& f_i) const {
  if (f_p.rank() != 3 || f_i.rank() != 3 || f_p.dim(0) != f_i.dim(0) || f_p.dim(2) != f_i.dim(2) ||
      out_token.numel() != f_p.dim(2))
    throw DimensionError("fusion expects [1,d], [B,L,d], [B,P,d], got " + shape_str(out_token.shape()) +
                         ", " + shape_str(f_p.shape()) + ", " + shape_str(f_i.shape()));
  const std::size_t b = f_p.dim(0), d = f_p.dim(2);
  const auto out = broadcast_to(reshape(out_token, {1, 1, d}), {b, 1, d});
  const auto seq = concat<T>({out, f_p}, 1);
  const auto fused = ffn(sa.residual(ca.residual(seq, f_i)));
  return reshape(slice(fused, 1, 0, 1), {b, d});
}

template <class T>
LocalRefinement<T>::LocalRefinement(ParameterStore<T>& store, std::size_t dim, std::size_t heads,
                                    std::size_t ffn_mult, Rng& rng) {
  out_token_ = store.add("lfrm.out_token", nn::trunc_normal<T>({1, dim}, 0.02, rng));
  for (std::size_t i = 0; i < kBlocks; ++i)
    blocks_[i] = TwoWayBlock<T>(store, "lfrm.blocks." + std::to_string(i), dim, heads, ffn_mult, rng);
  fusion_ = FeatureFusion<T>(store, "lfrm.fusion", dim, heads, ffn_mult, rng);
}

template <class T>
Tensor<T> LocalRefinement<T>::operator()(const Tensor<T>& p_re, const Tensor<T>& x_local) const {
  Tensor<T> f_p = p_re, f_i = x_local;
  for (const auto& block : blocks_) std::tie(f_p, f_i) = block(f_p, f_i);
  return fusion_(out_token_, f_p, f_i);
}

template struct TwoWayBlock<float>;
template struct TwoWayBlock<double>;
template struct FeatureFusion<float>;
template struct FeatureFusion<double>;
template class LocalRefinement<float>;
template class LocalRefinement<double>;

}  // namespace secap
