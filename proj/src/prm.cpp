#include "secap/prm.hpp"

namespace secap {

std::string_view to_string(PrmVariant v) {
  switch (v) {
    case PrmVariant::Attn: return "attn";
    case PrmVariant::Add: return "add";
    case PrmVariant::Cat: return "cat";
  }
  return "attn";
}

PrmVariant parse_prm_variant(std::string_view s) {
  if (s == "attn") return PrmVariant::Attn;
  if (s == "add") return PrmVariant::Add;
  if (s == "cat") return PrmVariant::Cat;
  throw ConfigError("unknown PRM variant '" + std::string(s) + "' (expected attn|add|cat)");
}

template <class T>
PromptBank<T> init_prompts(std::size_t length, std::size_t dim, std::uint64_t seed) {
  if (length == 0 || dim == 0) throw ConfigError("prompt bank needs L >= 1 and d >= 1");
  Rng rng(seed);
  return PromptBank<T>{nn::trunc_normal<T>({length, dim}, 0.02, rng)};
}

template <class T>
PromptRecalibration<T>::PromptRecalibration(ParameterStore<T>& store, std::size_t length,
                                            std::size_t dim, std::size_t heads,
                                            std::size_t ffn_mult, PrmVariant variant, bool enabled,
                                            Rng& rng)
    : variant_(variant), enabled_(enabled) {
  bank_ = init_prompts<T>(length, dim, rng.next());
  store.add("prm.prompts", bank_.prompts);
  if (!enabled_) return;
  if (variant_ == PrmVariant::Attn) ca = nn::CrossAttention<T>(store, "prm.ca", dim, heads, rng);
  sa = nn::SelfAttention<T>(store, "prm.sa", dim, heads, rng);
  ffn = nn::Ffn<T>(store, "prm.ffn", dim, ffn_mult, rng);
}

template <class T>
Tensor<T> PromptRecalibration<T>::operator()(const Tensor<T>& x_inv) const {
  const std::size_t L = bank_.length(), d = bank_.dim();
  if (x_inv.rank() != 2 || x_inv.dim(1) != d)
    throw DimensionError("PRM expects [B," + std::to_string(d) + "] features, got " +
                         shape_str(x_inv.shape()));
  const std::size_t b = x_inv.dim(0);
  const auto prompts = broadcast_to(reshape(bank_.prompts, {1, L, d}), {b, L, d});
  if (!enabled_) return prompts;
  const auto token = reshape(x_inv, {b, 1, d});
  Tensor<T> h;
  switch (variant_) {
    case PrmVariant::Attn:
      h = sa.residual(ca.residual(prompts, token));
      break;
    case PrmVariant::Add:
      h = sa.residual(add(prompts, token));
      break;
    case PrmVariant::Cat:
      h = slice(sa.residual(concat<T>({prompts, token}, 1)), 1, 0, L);
      break;
  }
  return add(ffn(h), prompts);
}

template <class T>
void PromptRecalibration<T>::zero_outputs() {
  if (!enabled_) return;
  if (variant_ == PrmVariant::Attn) ca.zero_output();
  sa.zero_output();
  ffn.zero_output();
}

template PromptBank<float> init_prompts<float>(std::size_t, std::size_t, std::uint64_t);
template PromptBank<double> init_prompts<double>(std::size_t, std::size_t, std::uint64_t);
template class PromptRecalibration<float>;
template class PromptRecalibration<double>;

}  // namespace secap
