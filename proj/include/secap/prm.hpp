#pragma once

#include <cstdint>
#include <string_view>

#include "secap/nn.hpp"

namespace secap {

enum class PrmVariant { Attn, Add, Cat };

std::string_view to_string(PrmVariant v);
PrmVariant parse_prm_variant(std::string_view s);

template <class T>
struct PromptBank {
  Tensor<T> prompts;  // [L, d]
  std::size_t length() const { return prompts.dim(0); }
  std::size_t dim() const { return prompts.dim(1); }
};

// Truncated normal, std 0.02, deterministic in seed.
template <class T>
PromptBank<T> init_prompts(std::size_t length, std::size_t dim, std::uint64_t seed);

// Re-calibrates the prompt bank against the view-invariant feature:
//   Attn: FFN(SA(CA(Prompt, x_inv, x_inv))) + Prompt
//   Add:  FFN(SA(Prompt + x_inv)) + Prompt
//   Cat:  FFN(SA([Prompt; x_inv])[:L]) + Prompt
// SA and CA are residual decoder sublayers; the trailing + Prompt is the
// FFN's residual. When disabled the bank is returned broadcast over the batch.
template <class T>
class PromptRecalibration {
 public:
  PromptRecalibration() = default;
  PromptRecalibration(ParameterStore<T>& store, std::size_t length, std::size_t dim,
                      std::size_t heads, std::size_t ffn_mult, PrmVariant variant, bool enabled,
                      Rng& rng);

  // x_inv [B, d] -> [B, L, d]
  Tensor<T> operator()(const Tensor<T>& x_inv) const;

  PrmVariant variant() const { return variant_; }
  bool enabled() const { return enabled_; }
  PromptBank<T>& bank() { return bank_; }
  const PromptBank<T>& bank() const { return bank_; }
  void zero_outputs();

  nn::CrossAttention<T> ca;
  nn::SelfAttention<T> sa;
  nn::Ffn<T> ffn;

 private:
  PromptBank<T> bank_;
  PrmVariant variant_ = PrmVariant::Attn;
  bool enabled_ = true;
};

extern template class PromptRecalibration<float>;
extern template class PromptRecalibration<double>;

}  // namespace secap
