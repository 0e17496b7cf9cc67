#include "secap/nn.hpp"

#include <algorithm>
#include <cmath>

namespace secap::nn {

namespace {
constexpr double kInitStd = 0.02;
}

template <class T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.trunc_normal(std));
  return t;
}

template <class T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, std::size_t in,
                  std::size_t out, Rng& rng, bool with_bias)
    : weight(store.add(name + ".weight", trunc_normal<T>({in, out}, kInitStd, rng))) {
  if (with_bias) bias = store.add(name + ".bias", Tensor<T>(Shape{out}));
}

template <class T>
void Linear<T>::zero() {
  std::fill(weight.data().begin(), weight.data().end(), T{0});
  if (bias.defined()) std::fill(bias.data().begin(), bias.data().end(), T{0});
}

template <class T>
LayerNorm<T>::LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim)
    : gamma(store.add(name + ".gamma", Tensor<T>::full({dim}, T{1}))),
      beta(store.add(name + ".beta", Tensor<T>(Shape{dim}))) {}

template <class T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterStore<T>& store, const std::string& name,
                                          std::size_t dim, std::size_t heads_, Rng& rng)
    : q(store, name + ".q", dim, dim, rng),
      k(store, name + ".k", dim, dim, rng, false),
      v(store, name + ".v", dim, dim, rng),
      o(store, name + ".o", dim, dim, rng),
      heads(heads_) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("embedding dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
}

template <class T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& query, const Tensor<T>& memory) const {
  if (query.rank() != 3 || memory.rank() != 3 || query.dim(0) != memory.dim(0) ||
      query.dim(2) != memory.dim(2))
    throw DimensionError("attention expects [B,Tq,d] and [B,Tk,d], got " +
                         shape_str(query.shape()) + " and " + shape_str(memory.shape()));
  const std::size_t b = query.dim(0), tq = query.dim(1), tk = memory.dim(1), d = query.dim(2);
  const std::size_t dh = d / heads;
  const auto qh = permute(reshape(q(query), {b, tq, heads, dh}), {0, 2, 1, 3});
  const auto kt = permute(reshape(k(memory), {b, tk, heads, dh}), {0, 2, 3, 1});
  const auto vh = permute(reshape(v(memory), {b, tk, heads, dh}), {0, 2, 1, 3});
  const auto scores = scale(matmul(qh, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  const auto weights = softmax_lastdim(scores);
  if (probe) probe(weights);
  const auto ctx = permute(matmul(weights, vh), {0, 2, 1, 3});
  return o(reshape(ctx, {b, tq, d}));
}

template <class T>
FeedForward<T>::FeedForward(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                            std::size_t mult, Rng& rng)
    : fc1(store, name + ".fc1", dim, dim * mult, rng), fc2(store, name + ".fc2", dim * mult, dim, rng) {}

template <class T>
CrossAttention<T>::CrossAttention(ParameterStore<T>& store, const std::string& name,
                                  std::size_t dim, std::size_t heads, Rng& rng)
    : norm_q(store, name + ".norm_q", dim),
      norm_kv(store, name + ".norm_kv", dim),
      attn(store, name + ".attn", dim, heads, rng) {}

template <class T>
SelfAttention<T>::SelfAttention(ParameterStore<T>& store, const std::string& name,
                                std::size_t dim, std::size_t heads, Rng& rng)
    : norm(store, name + ".norm", dim), attn(store, name + ".attn", dim, heads, rng) {}

template <class T>
Ffn<T>::Ffn(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t mult,
            Rng& rng)
    : norm(store, name + ".norm", dim), ff(store, name + ".ff", dim, mult, rng) {}

template Tensor<float> trunc_normal<float>(Shape, double, Rng&);
template Tensor<double> trunc_normal<double>(Shape, double, Rng&);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;
template struct CrossAttention<float>;
template struct CrossAttention<double>;
template struct SelfAttention<float>;
template struct SelfAttention<double>;
template struct Ffn<float>;
template struct Ffn<double>;

}  // namespace secap::nn
