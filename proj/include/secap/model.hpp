#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "secap/encoder.hpp"
#include "secap/lfrm.hpp"
#include "secap/objectives.hpp"
#include "secap/prm.hpp"

namespace secap {

// Which components are active. The baseline is a plain ViT with ID and
// triplet losses on the Cls feature.
struct Ablation {
  bool prm = true;
  bool vdt = true;
  bool lfrm = true;

  // "none", "no-prm", "no-vdt", "no-lfrm", "baseline", or a comma list.
  static Ablation parse(std::string_view text);
  std::string name() const;
  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t prompt_len = 64;
  PrmVariant variant = PrmVariant::Attn;
  Ablation ablation;
  std::size_t num_ids = 1;
  std::size_t num_views = 2;
  std::uint64_t seed = 0;

  static ModelConfig toy(std::size_t num_ids);
};

template <class T>
struct ModelOutput {
  EncoderOutput<T> encoder;
  Tensor<T> prompts;  // re-calibrated prompts [B, L, d]
  Tensor<T> local;    // refined local feature [B, d]
};

template <class T>
class SecapModel {
 public:
  explicit SecapModel(const ModelConfig& config);
  SecapModel(const SecapModel&) = delete;
  SecapModel& operator=(const SecapModel&) = delete;

  const ModelConfig& config() const { return config_; }

  ModelOutput<T> forward(const Tensor<T>& images) const;
  LossParts<T> losses(const ModelOutput<T>& out, std::span<const std::int64_t> ids,
                      std::span<const std::int64_t> views) const;
  // Retrieval feature: [x_inv, local], or x_inv alone without the LFRM.
  Tensor<T> embedding(const ModelOutput<T>& out) const;
  std::size_t feature_dim() const;

  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  VdtEncoder<T>& encoder() { return encoder_; }
  PromptRecalibration<T>& prm() { return prm_; }
  LocalRefinement<T>& lfrm() { return lfrm_; }
  nn::Linear<T>& id_head_global() { return id_global_; }
  nn::Linear<T>& id_head_local() { return id_local_; }
  nn::Linear<T>& view_head() { return view_head_; }

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  VdtEncoder<T> encoder_;
  PromptRecalibration<T> prm_;
  LocalRefinement<T> lfrm_;
  nn::Linear<T> id_global_, id_local_, view_head_;
};

// Stacks [C, H, W] images into a normalized [B, C, H, W] batch.
template <class T>
Tensor<T> make_batch(std::span<const Tensor<float>> images);

extern template class SecapModel<float>;
extern template class SecapModel<double>;

}  // namespace secap
