#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "secap/nn.hpp"

namespace secap {

struct EncoderConfig {
  std::size_t image_h = 256;
  std::size_t image_w = 128;
  std::size_t channels = 3;
  std::size_t patch = 16;
  std::size_t stride = 16;
  // Stride used instead of `stride` when overlapping patches are on.
  std::size_t olp_stride = 12;
  bool olp = false;
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  std::size_t ffn_mult = 4;

  std::size_t effective_stride() const { return olp ? olp_stride : stride; }
  // (rows, cols) of the patch grid: floor((extent - patch) / stride) + 1.
  std::pair<std::size_t, std::size_t> grid() const;
  std::size_t num_patches() const;
  std::size_t patch_dim() const { return channels * patch * patch; }
  void validate() const;

  // d=64, depth 2, 4 heads on 64x32 images.
  static EncoderConfig toy();
};

// [B, C, H, W] -> [B, P, C*patch*patch], patches in row-major raster order and
// each patch flattened channel-major.
template <class T>
Tensor<T> tokenize(const Tensor<T>& images, std::size_t patch, std::size_t stride);

// Cls <- Cls - View on a [B, T, d] token sequence laid out [Cls, View, ...].
template <class T>
Tensor<T> decouple_step(const Tensor<T>& x);

template <class T>
struct EncoderOutput {
  Tensor<T> x_inv;      // [B, d] final decoupled Cls
  Tensor<T> view_feat;  // [B, d] final View token; undefined without a View token
  Tensor<T> x_local;    // [B, P, d]
  Tensor<T> cls_raw;    // [B, d] final Cls before its last subtraction
};

template <class T>
struct EncoderBlock {
  nn::LayerNorm<T> norm1, norm2;
  nn::MultiHeadAttention<T> attn;
  nn::FeedForward<T> ffn;

  EncoderBlock() = default;
  EncoderBlock(ParameterStore<T>& store, const std::string& name, const EncoderConfig& cfg,
               Rng& rng);

  // Pre-norm: x + MHSA(LN(x)), then + FFN(LN(.)).
  Tensor<T> operator()(const Tensor<T>& x) const;
  void zero_output() {
    attn.o.zero();
    ffn.fc2.zero();
  }
};

// ViT encoder with Cls and View tokens. With view decoupling on, every block
// is followed by decouple_step; with it off, the sequence is [Cls, patches]
// and no View token exists.
template <class T>
class VdtEncoder {
 public:
  VdtEncoder() = default;
  VdtEncoder(ParameterStore<T>& store, const EncoderConfig& cfg, bool view_decoupling, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  bool view_decoupling() const { return decouple_; }
  std::size_t prefix_tokens() const { return decouple_ ? 2 : 1; }

  // [B, P, patch_dim] -> [B, P + prefix, d].
  Tensor<T> embed(const Tensor<T>& tokens) const;
  EncoderOutput<T> encode(const Tensor<T>& images) const;

  std::vector<EncoderBlock<T>>& blocks() { return blocks_; }
  const std::vector<EncoderBlock<T>>& blocks() const { return blocks_; }
  nn::Linear<T>& patch_embed() { return patch_embed_; }
  Tensor<T>& cls_token() { return cls_; }
  Tensor<T>& view_token() { return view_; }
  Tensor<T>& positions() { return pos_; }

 private:
  EncoderConfig cfg_;
  bool decouple_ = true;
  nn::Linear<T> patch_embed_;
  Tensor<T> cls_, view_, pos_;
  std::vector<EncoderBlock<T>> blocks_;
};

extern template class VdtEncoder<float>;
extern template class VdtEncoder<double>;

}  // namespace secap
