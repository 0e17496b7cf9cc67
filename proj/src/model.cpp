#include "secap/model.hpp"

#include <sstream>

namespace secap {

namespace {
constexpr double kPixelMean = 0.5;
constexpr double kPixelStd = 0.25;
}  // namespace

Ablation Ablation::parse(std::string_view text) {
  Ablation a;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string_view::npos ? text.size() - start : comma - start);
    if (item == "none") {
    } else if (item == "no-prm") {
      a.prm = false;
    } else if (item == "no-vdt") {
      a.vdt = false;
    } else if (item == "no-lfrm") {
      a.lfrm = false;
    } else if (item == "baseline") {
      a = Ablation{false, false, false};
    } else {
      throw ConfigError("unknown ablation '" + std::string(item) +
                        "' (expected none|no-prm|no-vdt|no-lfrm|baseline)");
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return a;
}

std::string Ablation::name() const {
  if (prm && vdt && lfrm) return "none";
  if (!prm && !vdt && !lfrm) return "baseline";
  std::string s;
  const auto push = [&](bool on, const char* tag) {
    if (on) return;
    if (!s.empty()) s += ",";
    s += tag;
  };
  push(prm, "no-prm");
  push(vdt, "no-vdt");
  push(lfrm, "no-lfrm");
  return s;
}

ModelConfig ModelConfig::toy(std::size_t num_ids) {
  ModelConfig cfg;
  cfg.encoder = EncoderConfig::toy();
  cfg.prompt_len = 8;
  cfg.num_ids = num_ids;
  return cfg;
}

template <class T>
SecapModel<T>::SecapModel(const ModelConfig& config) : config_(config) {
  if (config_.num_ids < 1) throw ConfigError("num_ids must be >= 1");
  if (config_.num_views < 2) throw ConfigError("num_views must be >= 2");
  const auto& ec = config_.encoder;
  const std::size_t d = ec.embed_dim;
  Rng rng(config_.seed);
  encoder_ = VdtEncoder<T>(store_, ec, config_.ablation.vdt, rng);
  if (config_.ablation.lfrm) {
    prm_ = PromptRecalibration<T>(store_, config_.prompt_len, d, ec.heads, ec.ffn_mult,
                                  config_.variant, config_.ablation.prm, rng);
    lfrm_ = LocalRefinement<T>(store_, d, ec.heads, ec.ffn_mult, rng);
  }
  id_global_ = nn::Linear<T>(store_, "heads.id_global", d, config_.num_ids, rng);
  if (config_.ablation.lfrm) id_local_ = nn::Linear<T>(store_, "heads.id_local", d, config_.num_ids, rng);
  if (config_.ablation.vdt) view_head_ = nn::Linear<T>(store_, "heads.view", d, config_.num_views, rng);
}

template <class T>
ModelOutput<T> SecapModel<T>::forward(const Tensor<T>& images) const {
  ModelOutput<T> out;
  out.encoder = encoder_.encode(images);
  if (config_.ablation.lfrm) {
    out.prompts = prm_(out.encoder.x_inv);
    out.local = lfrm_(out.prompts, out.encoder.x_local);
  }
  return out;
}

template <class T>
LossParts<T> SecapModel<T>::losses(const ModelOutput<T>& out, std::span<const std::int64_t> ids,
                                   std::span<const std::int64_t> views) const {
  LossParts<T> parts;
  parts.id_global = id_ce_loss(out.encoder.x_inv, ids, id_global_);
  parts.tri_global = soft_triplet_loss(out.encoder.x_inv, ids);
  if (config_.ablation.lfrm) {
    parts.id_local = id_ce_loss(out.local, ids, id_local_);
    parts.tri_local = soft_triplet_loss(out.local, ids);
  }
  if (config_.ablation.vdt) {
    parts.view = view_ce_loss(out.encoder.view_feat, views, view_head_);
    parts.orth = orthogonality_loss(out.encoder.x_inv, out.encoder.view_feat);
  }
  return parts;
}

template <class T>
Tensor<T> SecapModel<T>::embedding(const ModelOutput<T>& out) const {
  if (!config_.ablation.lfrm) return out.encoder.x_inv;
  return concat<T>({out.encoder.x_inv, out.local}, 1);
}

template <class T>
std::size_t SecapModel<T>::feature_dim() const {
  return config_.encoder.embed_dim * (config_.ablation.lfrm ? 2 : 1);
}

template <class T>
Tensor<T> make_batch(std::span<const Tensor<float>> images) {
  if (images.empty()) throw ContractError("empty image batch");
  const Shape& s = images.front().shape();
  if (s.size() != 3) throw DimensionError("images must be [C,H,W], got " + shape_str(s));
  Shape shape{images.size(), s[0], s[1], s[2]};
  Tensor<T> batch(shape);
  const std::size_t n = shape_numel(s);
  auto dst = batch.data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s)
      throw DimensionError("image " + std::to_string(i) + " has shape " + shape_str(images[i].shape()) +
                           ", expected " + shape_str(s));
    const auto src = images[i].data();
    for (std::size_t j = 0; j < n; ++j)
      dst[i * n + j] = static_cast<T>((static_cast<double>(src[j]) - kPixelMean) / kPixelStd);
  }
  return batch;
}

template class SecapModel<float>;
template class SecapModel<double>;
template Tensor<float> make_batch<float>(std::span<const Tensor<float>>);
template Tensor<double> make_batch<double>(std::span<const Tensor<float>>);

}  // namespace secap
