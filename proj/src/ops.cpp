#include "secap/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "secap/parallel.hpp"

namespace secap {

namespace {

template <class T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <class T>
Tape<T>& tape() {
  return Tape<T>::current();
}

// Gradient buffer of x, allocated on demand, or nullptr when x takes none.
template <class T>
T* grad_of(TensorImpl<T>& x) {
  if (!tape<T>().needs_grad(x)) return nullptr;
  if (x.grad.empty()) x.grad.assign(x.data.size(), T{0});
  return x.grad.data();
}

template <class T>
void finish(const Tensor<T>& out, const char* op) {
  if (!finite_checks_enabled()) return;
  for (T v : out.data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output from ") + op);
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Maps flat output indices to flat indices of two broadcast operands.
class BroadcastIndexer {
 public:
  BroadcastIndexer(const Shape& out, const Shape& a, const Shape& b)
      : out_(out), n_(shape_numel(out)) {
    na_ = shape_numel(a);
    nb_ = shape_numel(b);
    if (na_ == n_ && nb_ == n_) {
      kind_ = Kind::Same;
    } else if (na_ == n_ && is_suffix(b, out)) {
      kind_ = Kind::SuffixB;
    } else if (nb_ == n_ && is_suffix(a, out)) {
      kind_ = Kind::SuffixA;
    } else {
      kind_ = Kind::General;
      sa_ = broadcast_strides(a);
      sb_ = broadcast_strides(b);
    }
  }

  template <class F>
  void for_each(F&& f) const {
    switch (kind_) {
      case Kind::Same:
        for (std::size_t o = 0; o < n_; ++o) f(o, o, o);
        return;
      case Kind::SuffixB:
        for (std::size_t o = 0; o < n_; ++o) f(o, o, o % nb_);
        return;
      case Kind::SuffixA:
        for (std::size_t o = 0; o < n_; ++o) f(o, o % na_, o);
        return;
      case Kind::General:
        break;
    }
    const std::size_t r = out_.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < n_; ++o) {
      f(o, ia, ib);
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        ia += sa_[d];
        ib += sb_[d];
        if (idx[d] < out_[d]) break;
        ia -= sa_[d] * out_[d];
        ib -= sb_[d] * out_[d];
        idx[d] = 0;
      }
    }
  }

 private:
  enum class Kind { Same, SuffixA, SuffixB, General };

  // `small`, minus leading ones, equals the trailing dims of `big`.
  static bool is_suffix(const Shape& small, const Shape& big) {
    std::size_t lead = 0;
    while (lead < small.size() && small[lead] == 1) ++lead;
    const std::size_t len = small.size() - lead;
    if (len > big.size()) return false;
    return std::equal(small.begin() + static_cast<std::ptrdiff_t>(lead), small.end(),
                      big.end() - static_cast<std::ptrdiff_t>(len));
  }

  std::vector<std::size_t> broadcast_strides(const Shape& s) const {
    const std::size_t r = out_.size();
    std::vector<std::size_t> st(r, 0);
    const auto own = strides_of(s);
    const std::size_t off = r - s.size();
    for (std::size_t i = 0; i < s.size(); ++i) st[off + i] = s[i] == 1 ? 0 : own[i];
    return st;
  }

  Shape out_;
  std::size_t n_, na_ = 0, nb_ = 0;
  Kind kind_ = Kind::General;
  std::vector<std::size_t> sa_, sb_;
};

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
  parallel_for(M, K * N, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      T* crow = C + i * N;
      const T* arow = A + i * K;
      for (std::size_t p = 0; p < K; ++p) {
        const T av = arow[p];
        const T* brow = B + p * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// dA[M,K] += dC[M,N] * B[K,N]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t K, std::size_t N, const T* dC, const T* B, T* dA) {
  parallel_for(M, K * N, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const T* grow = dC + i * N;
      for (std::size_t p = 0; p < K; ++p) {
        const T* brow = B + p * N;
        T s{0};
        for (std::size_t j = 0; j < N; ++j) s += grow[j] * brow[j];
        dA[i * K + p] += s;
      }
    }
  });
}

// dB[K,N] += A[M,K]^T * dC[M,N]; every dB element sums over i in order.
template <class T>
void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* dC, T* dB) {
  if (thread_count() <= 1) {
    for (std::size_t i = 0; i < M; ++i) {
      const T* arow = A + i * K;
      const T* grow = dC + i * N;
      for (std::size_t p = 0; p < K; ++p) {
        const T av = arow[p];
        T* brow = dB + p * N;
        for (std::size_t j = 0; j < N; ++j) brow[j] += av * grow[j];
      }
    }
    return;
  }
  parallel_for(K, M * N, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t i = 0; i < M; ++i) {
      const T* grow = dC + i * N;
      for (std::size_t p = p0; p < p1; ++p) {
        const T av = A[i * K + p];
        T* brow = dB + p * N;
        for (std::size_t j = 0; j < N; ++j) brow[j] += av * grow[j];
      }
    }
  });
}

template <class T>
Tensor<T> unary(const Tensor<T>& x, const char* name, T (*fwd)(T), T (*deriv)(T, T)) {
  Tensor<T> out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* px = &x.impl();
    auto* po = &out.impl();
    tp.record(name, {x.impl_ptr()}, out.impl_ptr(), [px, po, deriv] {
      T* gx = grad_of(*px);
      if (!gx) return;
      for (std::size_t i = 0; i < px->data.size(); ++i)
        gx[i] += po->grad[i] * deriv(px->data[i], po->data[i]);
    });
  }
  finish(out, name);
  return out;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

template <class T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  auto ix = std::make_shared<BroadcastIndexer>(out_shape, a.shape(), b.shape());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  switch (op) {
    case ElementwiseOp::Add:
      ix->for_each([&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] + pb[j]; });
      break;
    case ElementwiseOp::Sub:
      ix->for_each([&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] - pb[j]; });
      break;
    case ElementwiseOp::Mul:
      ix->for_each([&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] * pb[j]; });
      break;
  }
  auto& tp = tape<T>();
  if (tp.should_record({&a.impl(), &b.impl()})) {
    auto* ia = &a.impl();
    auto* ib = &b.impl();
    auto* io = &out.impl();
    const char* name = op == ElementwiseOp::Add ? "add" : op == ElementwiseOp::Sub ? "sub" : "mul";
    tp.record(name, {a.impl_ptr(), b.impl_ptr()}, out.impl_ptr(), [=] {
      T* ga = grad_of(*ia);
      T* gb = grad_of(*ib);
      const T* g = io->grad.data();
      const T* va = ia->data.data();
      const T* vb = ib->data.data();
      switch (op) {
        case ElementwiseOp::Add:
          ix->for_each([&](std::size_t o, std::size_t i, std::size_t j) {
            if (ga) ga[i] += g[o];
            if (gb) gb[j] += g[o];
          });
          break;
        case ElementwiseOp::Sub:
          ix->for_each([&](std::size_t o, std::size_t i, std::size_t j) {
            if (ga) ga[i] += g[o];
            if (gb) gb[j] -= g[o];
          });
          break;
        case ElementwiseOp::Mul:
          ix->for_each([&](std::size_t o, std::size_t i, std::size_t j) {
            if (ga) ga[i] += g[o] * vb[j];
            if (gb) gb[j] += g[o] * va[i];
          });
          break;
      }
    });
  }
  finish(out, "elementwise");
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] * factor;
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* px = &x.impl();
    auto* po = &out.impl();
    tp.record("scale", {x.impl_ptr()}, out.impl_ptr(), [px, po, factor] {
      T* gx = grad_of(*px);
      if (!gx) return;
      for (std::size_t i = 0; i < px->data.size(); ++i) gx[i] += po->grad[i] * factor;
    });
  }
  finish(out, "scale");
  return out;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto mismatch = [&] {
    return DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) throw mismatch();

  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(batch_a, batch_b);
  } catch (const DimensionError&) {
    throw mismatch();
  }
  const std::size_t nbatch = shape_numel(batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);

  // Per-batch element offsets into a and b.
  auto offsets = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>(nbatch);
  const bool fold = shape_numel(batch_b) == 1 && shape_numel(batch_a) == nbatch;
  if (!fold) {
    BroadcastIndexer ix(batch, batch_a, batch_b);
    ix.for_each([&](std::size_t o, std::size_t i, std::size_t j) {
      (*offsets)[o] = {i * m * k, j * k * n};
    });
  }

  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = out.data().data();
  if (fold) {
    gemm_nn(nbatch * m, k, n, pa, pb, pc);
  } else {
    for (std::size_t bi = 0; bi < nbatch; ++bi)
      gemm_nn(m, k, n, pa + (*offsets)[bi].first, pb + (*offsets)[bi].second, pc + bi * m * n);
  }

  auto& tp = tape<T>();
  if (tp.should_record({&a.impl(), &b.impl()})) {
    auto* ia = &a.impl();
    auto* ib = &b.impl();
    auto* io = &out.impl();
    tp.record("matmul", {a.impl_ptr(), b.impl_ptr()}, out.impl_ptr(),
              [=] {
                T* ga = grad_of(*ia);
                T* gb = grad_of(*ib);
                const T* g = io->grad.data();
                const T* va = ia->data.data();
                const T* vb = ib->data.data();
                if (fold) {
                  if (ga) gemm_nt(nbatch * m, k, n, g, vb, ga);
                  if (gb) gemm_tn(nbatch * m, k, n, va, g, gb);
                  return;
                }
                for (std::size_t bi = 0; bi < nbatch; ++bi) {
                  const auto [oa, ob] = (*offsets)[bi];
                  if (ga) gemm_nt(m, k, n, g + bi * m * n, vb + ob, ga + oa);
                  if (gb) gemm_tn(m, k, n, va + oa, g + bi * m * n, gb + ob);
                }
              });
  }
  finish(out, "matmul");
  return out;
}

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::size_t cols = x.dim(-1);
  const std::size_t rows = x.numel() / cols;
  Tensor<T> out(x.shape());
  const T* px = x.data().data();
  T* py = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * cols;
    T* yr = py + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      total += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* ix = &x.impl();
    auto* io = &out.impl();
    tp.record("softmax", {x.impl_ptr()}, out.impl_ptr(), [=] {
      T* gx = grad_of(*ix);
      if (!gx) return;
      const T* y = io->data.data();
      const T* g = io->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot{0};
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    });
  }
  finish(out, "softmax");
  return out;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t cols = x.dim(-1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != cols || beta.dim(0) != cols)
    throw DimensionError("layer_norm affine shapes " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match input " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / cols;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  const T* px = x.data().data();
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
  T* py = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * cols;
    T mu{0};
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<T>(cols);
    T var{0};
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(cols);
    const T rs = T{1} / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (xr[c] - mu) * rs;
      (*xhat)[r * cols + c] = h;
      py[r * cols + c] = h * pg[c] + pb[c];
    }
  }
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl(), &gamma.impl(), &beta.impl()})) {
    auto* ix = &x.impl();
    auto* ig = &gamma.impl();
    auto* ib = &beta.impl();
    auto* io = &out.impl();
    tp.record("layer_norm", {x.impl_ptr(), gamma.impl_ptr(), beta.impl_ptr()}, out.impl_ptr(),
              [=] {
                T* gx = grad_of(*ix);
                T* gg = grad_of(*ig);
                T* gb = grad_of(*ib);
                const T* g = io->grad.data();
                const T* gam = ig->data.data();
                std::vector<T> dxh(cols);
                for (std::size_t r = 0; r < rows; ++r) {
                  const T* gr = g + r * cols;
                  const T* hr = xhat->data() + r * cols;
                  if (gg)
                    for (std::size_t c = 0; c < cols; ++c) gg[c] += gr[c] * hr[c];
                  if (gb)
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += gr[c];
                  if (!gx) continue;
                  T m1{0}, m2{0};
                  for (std::size_t c = 0; c < cols; ++c) {
                    dxh[c] = gr[c] * gam[c];
                    m1 += dxh[c];
                    m2 += dxh[c] * hr[c];
                  }
                  m1 /= static_cast<T>(cols);
                  m2 /= static_cast<T>(cols);
                  const T rs = (*rstd)[r];
                  for (std::size_t c = 0; c < cols; ++c)
                    gx[r * cols + c] += rs * (dxh[c] - m1 - hr[c] * m2);
                }
              });
  }
  finish(out, "layer_norm");
  return out;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  return unary<T>(
      x, "gelu",
      [](T v) { return static_cast<T>(0.5) * v * (T{1} + std::erf(v * static_cast<T>(kInvSqrt2))); },
      [](T v, T) {
        const T cdf = static_cast<T>(0.5) * (T{1} + std::erf(v * static_cast<T>(kInvSqrt2)));
        const T pdf = static_cast<T>(kInvSqrt2Pi) * std::exp(static_cast<T>(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary<T>(
      x, "softplus",
      [](T v) { return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) {
        return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
      });
}

template <class T>
Tensor<T> sqrt_clamped(const Tensor<T>& x, T floor) {
  Tensor<T> out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = std::sqrt(std::max(xs[i], floor));
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* px = &x.impl();
    auto* po = &out.impl();
    tp.record("sqrt", {x.impl_ptr()}, out.impl_ptr(), [px, po, floor] {
      T* gx = grad_of(*px);
      if (!gx) return;
      for (std::size_t i = 0; i < px->data.size(); ++i)
        if (px->data[i] > floor) gx[i] += po->grad[i] * static_cast<T>(0.5) / po->data[i];
    });
  }
  finish(out, "sqrt");
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* px = &x.impl();
    auto* po = &out.impl();
    tp.record("sum", {x.impl_ptr()}, out.impl_ptr(), [px, po] {
      T* gx = grad_of(*px);
      if (!gx) return;
      const T g = po->grad[0];
      for (std::size_t i = 0; i < px->data.size(); ++i) gx[i] += g;
    });
  }
  finish(out, "sum");
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> sum_lastdim(const Tensor<T>& x) {
  const std::size_t cols = x.dim(-1);
  const std::size_t rows = x.numel() / cols;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  if (shape.empty()) shape = {1};
  Tensor<T> out(shape);
  const T* px = x.data().data();
  T* py = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T s{0};
    for (std::size_t c = 0; c < cols; ++c) s += px[r * cols + c];
    py[r] = s;
  }
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* ix = &x.impl();
    auto* io = &out.impl();
    tp.record("sum_lastdim", {x.impl_ptr()}, out.impl_ptr(), [=] {
      T* gx = grad_of(*ix);
      if (!gx) return;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += io->grad[r];
    });
  }
  finish(out, "sum_lastdim");
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* px = &x.impl();
    auto* po = &out.impl();
    tp.record("reshape", {x.impl_ptr()}, out.impl_ptr(), [px, po] {
      T* gx = grad_of(*px);
      if (!gx) return;
      for (std::size_t i = 0; i < px->data.size(); ++i) gx[i] += po->grad[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw DimensionError("permute axes do not match rank of " + shape_str(x.shape()));
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("invalid permutation for " + shape_str(x.shape()));
    seen[a] = true;
  }
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) shape[i] = x.shape()[axes[i]];
  const auto in_strides = strides_of(x.shape());
  // Source offset for every destination element.
  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<std::size_t> idx(r, 0);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[axes[i]];
    std::size_t off = 0;
    for (std::size_t o = 0; o < src->size(); ++o) {
      (*src)[o] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += step[d];
        if (idx[d] < shape[d]) break;
        off -= step[d] * shape[d];
        idx[d] = 0;
      }
    }
  }
  Tensor<T> out(shape);
  const T* px = x.data().data();
  T* py = out.data().data();
  for (std::size_t o = 0; o < src->size(); ++o) py[o] = px[(*src)[o]];
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* ix = &x.impl();
    auto* io = &out.impl();
    tp.record("permute", {x.impl_ptr()}, out.impl_ptr(), [=] {
      T* gx = grad_of(*ix);
      if (!gx) return;
      for (std::size_t o = 0; o < src->size(); ++o) gx[(*src)[o]] += io->grad[o];
    });
  }
  return out;
}

template <class T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape)
    throw DimensionError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor<T> out(shape);
  auto ix = std::make_shared<BroadcastIndexer>(shape, x.shape(), shape);
  const T* px = x.data().data();
  T* py = out.data().data();
  ix->for_each([&](std::size_t o, std::size_t i, std::size_t) { py[o] = px[i]; });
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* pi = &x.impl();
    auto* io = &out.impl();
    tp.record("broadcast", {x.impl_ptr()}, out.impl_ptr(), [=] {
      T* gx = grad_of(*pi);
      if (!gx) return;
      const T* g = io->grad.data();
      ix->for_each([&](std::size_t o, std::size_t i, std::size_t) { gx[i] += g[o]; });
    });
  }
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size())
    throw DimensionError("concat axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      if (d != axis && s[d] != first[d]) ok = false;
    if (!ok)
      throw DimensionError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
    shape[axis] += s[axis];
  }
  const std::size_t outer = shape_numel(Shape(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(first.begin() + static_cast<std::ptrdiff_t>(axis) + 1, first.end()));
  const std::size_t out_row = shape[axis] * inner;
  Tensor<T> out(shape);
  T* py = out.data().data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t row = p.shape()[axis] * inner;
    const T* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * row, src + (o + 1) * row, py + o * out_row + offset);
    offset += row;
  }
  auto& tp = tape<T>();
  bool any = false;
  for (const auto& p : parts) any = any || tp.needs_grad(p.impl());
  if (grad_enabled() && any) {
    std::vector<ImplPtr<T>> inputs;
    for (const auto& p : parts) inputs.push_back(p.impl_ptr());
    auto* io = &out.impl();
    std::vector<TensorImpl<T>*> raw;
    for (const auto& p : parts) raw.push_back(&p.impl());
    tp.record("concat", inputs, out.impl_ptr(), [=] {
      std::size_t off = 0;
      const T* g = io->grad.data();
      for (auto* in : raw) {
        const std::size_t row = in->shape[axis] * inner;
        if (T* gi = grad_of(*in)) {
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < row; ++j) gi[o * row + j] += g[o * out_row + off + j];
        }
        off += row;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size())
    throw DimensionError("slice axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  if (length == 0 || start + length > s[axis])
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for " + shape_str(s) + " axis " + std::to_string(axis));
  Shape shape = s;
  shape[axis] = length;
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  const std::size_t in_row = s[axis] * inner;
  const std::size_t row = length * inner;
  const std::size_t off = start * inner;
  Tensor<T> out(shape);
  const T* px = x.data().data();
  T* py = out.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(px + o * in_row + off, px + o * in_row + off + row, py + o * row);
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* ix = &x.impl();
    auto* io = &out.impl();
    tp.record("slice", {x.impl_ptr()}, out.impl_ptr(), [=] {
      T* gx = grad_of(*ix);
      if (!gx) return;
      const T* g = io->grad.data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < row; ++j) gx[o * in_row + off + j] += g[o * row + j];
    });
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis,
                             const std::vector<std::size_t>& sizes) {
  if (axis >= x.rank()) throw DimensionError("split axis out of range for " + shape_str(x.shape()));
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != x.shape()[axis])
    throw DimensionError("split sizes do not cover axis of " + shape_str(x.shape()));
  std::vector<Tensor<T>> parts;
  std::size_t start = 0;
  for (auto n : sizes) {
    parts.push_back(slice(x, axis, start, n));
    start += n;
  }
  return parts;
}

template <class T>
Tensor<T> index_select(const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1 || rows.empty()) throw DimensionError("index_select needs rows and rank >= 1");
  const std::size_t n0 = x.dim(0);
  const std::size_t inner = x.numel() / n0;
  for (auto r : rows)
    if (r >= n0) throw DimensionError("index_select row " + std::to_string(r) + " out of range");
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor<T> out(shape);
  const T* px = x.data().data();
  T* py = out.data().data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(px + rows[i] * inner, px + (rows[i] + 1) * inner, py + i * inner);
  auto& tp = tape<T>();
  if (tp.should_record({&x.impl()})) {
    auto* ix = &x.impl();
    auto* io = &out.impl();
    auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
    tp.record("index_select", {x.impl_ptr()}, out.impl_ptr(), [=] {
      T* gx = grad_of(*ix);
      if (!gx) return;
      const T* g = io->grad.data();
      for (std::size_t i = 0; i < idx->size(); ++i)
        for (std::size_t j = 0; j < inner; ++j) gx[(*idx)[i] * inner + j] += g[i * inner + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int64_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("cross_entropy expects [N, C] logits with N labels, got " +
                         shape_str(logits.shape()) + " and " + std::to_string(labels.size()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (auto l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c)
      throw ContractError("label " + std::to_string(l) + " outside [0, " + std::to_string(c) + ")");
  auto probs = std::make_shared<std::vector<T>>(n * c);
  const T* px = logits.data().data();
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = px + i * c;
    const T mx = *std::max_element(row, row + c);
    T z{0};
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lse);
    total += lse - row[static_cast<std::size_t>(labels[i])];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  auto& tp = tape<T>();
  if (tp.should_record({&logits.impl()})) {
    auto* il = &logits.impl();
    auto* io = &out.impl();
    auto lab = std::make_shared<std::vector<std::int64_t>>(labels.begin(), labels.end());
    tp.record("cross_entropy", {logits.impl_ptr()}, out.impl_ptr(), [=] {
      T* gl = grad_of(*il);
      if (!gl) return;
      const T g = io->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const T onehot = static_cast<std::size_t>((*lab)[i]) == j ? T{1} : T{0};
          gl[i * c + j] += g * ((*probs)[i * c + j] - onehot);
        }
    });
  }
  finish(out, "cross_entropy");
  return out;
}

#define SECAP_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> elementwise<T>(ElementwiseOp, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                                       \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                  \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                   \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                              \
  template Tensor<T> sqrt_clamped<T>(const Tensor<T>&, T);                                       \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                   \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                  \
  template Tensor<T> sum_lastdim<T>(const Tensor<T>&);                                           \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                        \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);              \
  template Tensor<T> broadcast_to<T>(const Tensor<T>&, const Shape&);                            \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                      \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template std::vector<Tensor<T>> split<T>(const Tensor<T>&, std::size_t,                        \
                                           const std::vector<std::size_t>&);                     \
  template Tensor<T> index_select<T>(const Tensor<T>&, std::span<const std::size_t>);            \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::int64_t>);

SECAP_INSTANTIATE_OPS(float)
SECAP_INSTANTIATE_OPS(double)

}  // namespace secap
