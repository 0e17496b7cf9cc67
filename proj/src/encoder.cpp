#include "secap/encoder.hpp"

namespace secap {

std::pair<std::size_t, std::size_t> EncoderConfig::grid() const {
  const std::size_t s = effective_stride();
  if (image_h < patch || image_w < patch)
    throw DimensionError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                         " is smaller than one " + std::to_string(patch) + "px patch");
  return {(image_h - patch) / s + 1, (image_w - patch) / s + 1};
}

std::size_t EncoderConfig::num_patches() const {
  const auto [rows, cols] = grid();
  return rows * cols;
}

void EncoderConfig::validate() const {
  if (patch == 0 || effective_stride() == 0 || channels == 0)
    throw ConfigError("patch, stride and channels must be positive");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  if (depth == 0 || ffn_mult == 0) throw ConfigError("depth and ffn_mult must be positive");
  grid();
}

EncoderConfig EncoderConfig::toy() {
  EncoderConfig cfg;
  cfg.image_h = 64;
  cfg.image_w = 32;
  cfg.embed_dim = 64;
  cfg.depth = 2;
  cfg.heads = 4;
  return cfg;
}

template <class T>
Tensor<T> tokenize(const Tensor<T>& images, std::size_t patch, std::size_t stride) {
  if (images.rank() != 4) throw DimensionError("tokenize expects [B,C,H,W], got " + shape_str(images.shape()));
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (h < patch || w < patch)
    throw DimensionError("image " + shape_str(images.shape()) + " is smaller than one patch of " +
                         std::to_string(patch));
  if (stride == 0) throw ConfigError("stride must be positive");
  const std::size_t rows = (h - patch) / stride + 1;
  const std::size_t cols = (w - patch) / stride + 1;
  const std::size_t pd = c * patch * patch;
  Tensor<T> out({b, rows * cols, pd});
  const T* src = images.data().data();
  T* dst = out.data().data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t q = 0; q < cols; ++q) {
        T* tok = dst + ((n * rows + r) * cols + q) * pd;
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < patch; ++y) {
            const T* line = src + ((n * c + ch) * h + r * stride + y) * w + q * stride;
            std::copy(line, line + patch, tok + (ch * patch + y) * patch);
          }
      }
  return out;
}

template <class T>
Tensor<T> decouple_step(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(1) < 2)
    throw ContractError("decouple_step needs [B, T>=2, d] with Cls and View first, got " +
                        shape_str(x.shape()));
  const std::size_t t = x.dim(1);
  const auto cls = slice(x, 1, 0, 1);
  const auto view = slice(x, 1, 1, 1);
  return concat<T>({sub(cls, view), slice(x, 1, 1, t - 1)}, 1);
}

template <class T>
EncoderBlock<T>::EncoderBlock(ParameterStore<T>& store, const std::string& name,
                              const EncoderConfig& cfg, Rng& rng)
    : norm1(store, name + ".norm1", cfg.embed_dim),
      norm2(store, name + ".norm2", cfg.embed_dim),
      attn(store, name + ".attn", cfg.embed_dim, cfg.heads, rng),
      ffn(store, name + ".ffn", cfg.embed_dim, cfg.ffn_mult, rng) {}

template <class T>
Tensor<T> EncoderBlock<T>::operator()(const Tensor<T>& x) const {
  const auto h = norm1(x);
  const auto y = add(x, attn(h, h));
  return add(y, ffn(norm2(y)));
}

template <class T>
VdtEncoder<T>::VdtEncoder(ParameterStore<T>& store, const EncoderConfig& cfg, bool view_decoupling,
                          Rng& rng)
    : cfg_(cfg), decouple_(view_decoupling) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim;
  patch_embed_ = nn::Linear<T>(store, "encoder.patch_embed", cfg_.patch_dim(), d, rng);
  cls_ = store.add("encoder.cls_token", nn::trunc_normal<T>({1, d}, 0.02, rng));
  if (decouple_) view_ = store.add("encoder.view_token", nn::trunc_normal<T>({1, d}, 0.02, rng));
  pos_ = store.add("encoder.pos_embed",
                   nn::trunc_normal<T>({cfg_.num_patches() + prefix_tokens(), d}, 0.02, rng));
  for (std::size_t i = 0; i < cfg_.depth; ++i)
    blocks_.emplace_back(store, "encoder.blocks." + std::to_string(i), cfg_, rng);
}

template <class T>
Tensor<T> VdtEncoder<T>::embed(const Tensor<T>& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(2) != cfg_.patch_dim())
    throw DimensionError("embed expects [B,P," + std::to_string(cfg_.patch_dim()) + "], got " +
                         shape_str(tokens.shape()));
  const std::size_t b = tokens.dim(0), p = tokens.dim(1), d = cfg_.embed_dim;
  const std::size_t seq = p + prefix_tokens();
  if (pos_.dim(0) != seq)
    throw ConfigError("positional table has " + std::to_string(pos_.dim(0)) + " rows but " +
                      std::to_string(p) + " patches need " + std::to_string(seq));
  std::vector<Tensor<T>> parts;
  parts.push_back(broadcast_to(reshape(cls_, {1, 1, d}), {b, 1, d}));
  if (decouple_) parts.push_back(broadcast_to(reshape(view_, {1, 1, d}), {b, 1, d}));
  parts.push_back(patch_embed_(tokens));
  return add(concat(parts, 1), reshape(pos_, {1, seq, d}));
}

template <class T>
EncoderOutput<T> VdtEncoder<T>::encode(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.channels || images.dim(2) != cfg_.image_h ||
      images.dim(3) != cfg_.image_w)
    throw DimensionError("encoder configured for [B," + std::to_string(cfg_.channels) + "," +
                         std::to_string(cfg_.image_h) + "," + std::to_string(cfg_.image_w) +
                         "] images, got " + shape_str(images.shape()));
  const std::size_t b = images.dim(0), d = cfg_.embed_dim;
  auto x = embed(tokenize(images, cfg_.patch, cfg_.effective_stride()));
  const std::size_t pre = prefix_tokens();
  const std::size_t p = x.dim(1) - pre;

  EncoderOutput<T> out;
  for (const auto& block : blocks_) {
    x = block(x);
    if (decouple_) {
      out.cls_raw = x;
      x = decouple_step(x);
    }
  }
  if (!decouple_) out.cls_raw = x;
  out.cls_raw = reshape(slice(out.cls_raw, 1, 0, 1), {b, d});
  out.x_inv = reshape(slice(x, 1, 0, 1), {b, d});
  if (decouple_) out.view_feat = reshape(slice(x, 1, 1, 1), {b, d});
  out.x_local = slice(x, 1, pre, p);
  return out;
}

template Tensor<float> tokenize<float>(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> tokenize<double>(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> decouple_step<float>(const Tensor<float>&);
template Tensor<double> decouple_step<double>(const Tensor<double>&);
template struct EncoderBlock<float>;
template struct EncoderBlock<double>;
template class VdtEncoder<float>;
template class VdtEncoder<double>;

}  // namespace secap
