#pragma once

#include <functional>
#include <string>

#include "secap/ops.hpp"
#include "secap/random.hpp"
#include "secap/tensor.hpp"

namespace secap::nn {

// Truncated-normal (std, cut at 2 std) values drawn in double and rounded to T,
// so float and double models built from one seed agree up to rounding.
template <class T>
Tensor<T> trunc_normal(Shape shape, double std, Rng& rng);

// y = x W + b with W stored [in, out]; bias may be left out.
template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng, bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const {
    return bias.defined() ? add(matmul(x, weight), bias) : matmul(x, weight);
  }
  void zero();
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim);

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

// Multi-head scaled dot-product attention; queries [B, Tq, d] attend over
// memory [B, Tk, d]. The key projection has no bias: it would shift every
// score of a query row equally and cancel in the softmax.
template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;
  // Debug hook receiving the [B, heads, Tq, Tk] attention weights.
  std::function<void(const Tensor<T>&)> probe;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                     std::size_t heads, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& memory) const;
};

// fc2(gelu(fc1(x))), hidden width mult * d.
template <class T>
struct FeedForward {
  Linear<T> fc1, fc2;

  FeedForward() = default;
  FeedForward(ParameterStore<T>& store, const std::string& name, std::size_t dim,
              std::size_t mult, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }
};

// Decoder sublayers. operator() normalizes the inputs and returns only the
// transformed stream, for positions where a module equation supplies its own
// residual; residual() is the transformer-decoder form x + f(x) used for
// attention nested inside an equation.
template <class T>
struct CrossAttention {
  LayerNorm<T> norm_q, norm_kv;
  MultiHeadAttention<T> attn;

  CrossAttention() = default;
  CrossAttention(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                 std::size_t heads, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& memory) const {
    return attn(norm_q(query), norm_kv(memory));
  }
  Tensor<T> residual(const Tensor<T>& query, const Tensor<T>& memory) const {
    return add(query, (*this)(query, memory));
  }
  void zero_output() { attn.o.zero(); }
};

template <class T>
struct SelfAttention {
  LayerNorm<T> norm;
  MultiHeadAttention<T> attn;

  SelfAttention() = default;
  SelfAttention(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                std::size_t heads, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const {
    const auto h = norm(x);
    return attn(h, h);
  }
  Tensor<T> residual(const Tensor<T>& x) const { return add(x, (*this)(x)); }
  void zero_output() { attn.o.zero(); }
};

template <class T>
struct Ffn {
  LayerNorm<T> norm;
  FeedForward<T> ff;

  Ffn() = default;
  Ffn(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t mult,
      Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return ff(norm(x)); }
  void zero_output() { ff.fc2.zero(); }
};

}  // namespace secap::nn
