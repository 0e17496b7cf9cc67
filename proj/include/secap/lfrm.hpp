#pragma once

#include <array>
#include <utility>

#include "secap/nn.hpp"

namespace secap {

// One two-way attention block:
//   f_p'     = FFN(CA(SA(f_p), f_local, f_local)) + f_p
//   f_local' = CA(f_local, f_p', f_p') + f_local
// The nested SA and CA of the first line are residual decoder sublayers.
template <class T>
struct TwoWayBlock {
  nn::SelfAttention<T> prompt_self;
  nn::CrossAttention<T> prompt_to_image;
  nn::Ffn<T> prompt_ffn;
  nn::CrossAttention<T> image_to_prompt;

  TwoWayBlock() = default;
  TwoWayBlock(ParameterStore<T>& store, const std::string& name, std::size_t dim,
              std::size_t heads, std::size_t ffn_mult, Rng& rng);

  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& f_p, const Tensor<T>& f_local) const;
  void zero_outputs();
};

// [Out, _] = FFN(SA(CA([Out; F_P], F_I, F_I))) with residual SA and CA and
// no residual around the FFN.
template <class T>
struct FeatureFusion {
  nn::CrossAttention<T> ca;
  nn::SelfAttention<T> sa;
  nn::Ffn<T> ffn;

  FeatureFusion() = default;
  FeatureFusion(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                std::size_t heads, std::size_t ffn_mult, Rng& rng);

  // out_token [1, d], f_p [B, L, d], f_i [B, P, d] -> [B, d]
  Tensor<T> operator()(const Tensor<T>& out_token, const Tensor<T>& f_p, const Tensor<T>& f_i) const;
};

template <class T>
class LocalRefinement {
 public:
  static constexpr std::size_t kBlocks = 2;

  LocalRefinement() = default;
  LocalRefinement(ParameterStore<T>& store, std::size_t dim, std::size_t heads,
                  std::size_t ffn_mult, Rng& rng);

  // p_re [B, L, d], x_local [B, P, d] -> refined local feature [B, d]
  Tensor<T> operator()(const Tensor<T>& p_re, const Tensor<T>& x_local) const;

  Tensor<T>& out_token() { return out_token_; }
  std::array<TwoWayBlock<T>, kBlocks>& blocks() { return blocks_; }
  const std::array<TwoWayBlock<T>, kBlocks>& blocks() const { return blocks_; }
  FeatureFusion<T>& fusion() { return fusion_; }
  const FeatureFusion<T>& fusion() const { return fusion_; }

 private:
  Tensor<T> out_token_;
  std::array<TwoWayBlock<T>, kBlocks> blocks_;
  FeatureFusion<T> fusion_;
};

extern template class LocalRefinement<float>;
extern template class LocalRefinement<double>;

}  // namespace secap
