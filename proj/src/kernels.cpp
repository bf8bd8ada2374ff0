#include "samed/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "samed/random.hpp"

namespace samed {

namespace {

std::size_t last_dim(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("expected a tensor of rank >= 1");
  return x.shape().back();
}

std::size_t rows_of(const Tensor& x) {
  const std::size_t d = last_dim(x);
  return d ? x.size() / d : 0;
}

void require_matrix(const Tensor& t, const char* name) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(name) + " must be a matrix, got " + shape_to_string(t.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                  LayerNormCache* cache) {
  const std::size_t d = last_dim(x);
  if (gamma.shape() != Shape{d}) throw ShapeError("layer_norm gamma", gamma.shape(), x.shape());
  if (beta.shape() != Shape{d}) throw ShapeError("layer_norm beta", beta.shape(), x.shape());
  if (!(eps > 0.0)) throw Error("layer_norm requires eps > 0");

  const std::size_t n = rows_of(x);
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      xhat[r * d + j] = h;
      y[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

LayerNormGrads layer_norm_backward(const Tensor& dy, const Tensor& gamma,
                                   const LayerNormCache& cache) {
  const Tensor& xhat = cache.normalized;
  if (dy.shape() != xhat.shape()) throw ShapeError("layer_norm_backward", dy.shape(), xhat.shape());
  const std::size_t d = last_dim(dy);
  const std::size_t n = rows_of(dy);

  LayerNormGrads g{Tensor(dy.shape()), Tensor(Shape{d}), Tensor(Shape{d})};
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double go = dy[r * d + j];
      const double h = xhat[r * d + j];
      g.dgamma[j] += go * h;
      g.dbeta[j] += go;
      dxhat[j] = go * gamma[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * h;
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    const double is = cache.inv_std[r];
    for (std::size_t j = 0; j < d; ++j) {
      g.dx[r * d + j] = is * (dxhat[j] - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix(w, "linear weight");
  const std::size_t d = last_dim(x);
  if (w.dim(0) != d) throw ShapeError("linear inner dimension", x.shape(), w.shape());
  const std::size_t k = w.dim(1);
  if (!b.empty() && b.shape() != Shape{k}) throw ShapeError("linear bias", b.shape(), w.shape());

  Shape out_shape = x.shape();
  out_shape.back() = k;
  Tensor y(out_shape);
  const std::size_t n = rows_of(x);
  for (std::size_t r = 0; r < n; ++r) {
    double* out = y.data().data() + r * k;
    if (!b.empty()) std::copy(b.data().begin(), b.data().end(), out);
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x[r * d + i];
      if (xi == 0.0) continue;
      const double* wrow = w.data().data() + i * k;
      for (std::size_t j = 0; j < k; ++j) out[j] += xi * wrow[j];
    }
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  require_matrix(w, "linear weight");
  const std::size_t d = w.dim(0);
  const std::size_t k = w.dim(1);
  if (last_dim(x) != d || last_dim(dy) != k || rows_of(x) != rows_of(dy)) {
    throw ShapeError("linear_backward", x.shape(), dy.shape());
  }
  const std::size_t n = rows_of(x);
  LinearGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor(Shape{k})};
  for (std::size_t r = 0; r < n; ++r) {
    const double* gy = dy.data().data() + r * k;
    for (std::size_t j = 0; j < k; ++j) g.db[j] += gy[j];
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x[r * d + i];
      const double* wrow = w.data().data() + i * k;
      double* gw = g.dw.data().data() + i * k;
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        gw[j] += xi * gy[j];
        acc += wrow[j] * gy[j];
      }
      g.dx[r * d + i] = acc;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  std::size_t D, H, W, cin, cout, kd, kh, kw;
};

ConvDims check_conv(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 4) throw ShapeError("conv3d input must be [D,H,W,Cin], got " + shape_to_string(x.shape()));
  if (kernel.rank() != 5) {
    throw ShapeError("conv3d kernel must be [kd,kh,kw,Cin,Cout], got " + shape_to_string(kernel.shape()));
  }
  ConvDims c{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
             kernel.dim(4), kernel.dim(0), kernel.dim(1), kernel.dim(2)};
  if (kernel.dim(3) != c.cin) throw ShapeError("conv3d channel mismatch", x.shape(), kernel.shape());
  if (c.kd % 2 == 0 || c.kh % 2 == 0 || c.kw % 2 == 0) {
    throw ShapeError("conv3d requires odd kernel extents, got " + shape_to_string(kernel.shape()));
  }
  return c;
}

// Visits every (output voxel, kernel tap) pair whose input voxel lies inside
// the volume. fn(out_offset, in_offset, kernel_offset), offsets at channel 0.
template <typename Fn>
void for_each_tap(const ConvDims& c, Fn&& fn) {
  const auto pd = static_cast<std::ptrdiff_t>(c.kd / 2);
  const auto ph = static_cast<std::ptrdiff_t>(c.kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(c.kw / 2);
  for (std::size_t d = 0; d < c.D; ++d)
    for (std::size_t h = 0; h < c.H; ++h)
      for (std::size_t w = 0; w < c.W; ++w) {
        const std::size_t out_off = ((d * c.H + h) * c.W + w) * c.cout;
        for (std::size_t i = 0; i < c.kd; ++i) {
          const auto sd = static_cast<std::ptrdiff_t>(d + i) - pd;
          if (sd < 0 || sd >= static_cast<std::ptrdiff_t>(c.D)) continue;
          for (std::size_t j = 0; j < c.kh; ++j) {
            const auto sh = static_cast<std::ptrdiff_t>(h + j) - ph;
            if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(c.H)) continue;
            for (std::size_t k = 0; k < c.kw; ++k) {
              const auto sw = static_cast<std::ptrdiff_t>(w + k) - pw;
              if (sw < 0 || sw >= static_cast<std::ptrdiff_t>(c.W)) continue;
              const std::size_t in_off =
                  ((static_cast<std::size_t>(sd) * c.H + static_cast<std::size_t>(sh)) * c.W +
                   static_cast<std::size_t>(sw)) * c.cin;
              const std::size_t k_off = ((i * c.kh + j) * c.kw + k) * c.cin * c.cout;
              fn(out_off, in_off, k_off);
            }
          }
        }
      }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& kernel) {
  const ConvDims c = check_conv(x, kernel);
  Tensor y(Shape{c.D, c.H, c.W, c.cout});
  const double* xs = x.data().data();
  const double* ks = kernel.data().data();
  double* ys = y.data().data();
  for_each_tap(c, [&](std::size_t out_off, std::size_t in_off, std::size_t k_off) {
    for (std::size_t ci = 0; ci < c.cin; ++ci) {
      const double xv = xs[in_off + ci];
      const double* krow = ks + k_off + ci * c.cout;
      for (std::size_t co = 0; co < c.cout; ++co) ys[out_off + co] += xv * krow[co];
    }
  });
  return y;
}

Conv3dGrads conv3d_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy) {
  const ConvDims c = check_conv(x, kernel);
  if (dy.shape() != Shape{c.D, c.H, c.W, c.cout}) throw ShapeError("conv3d_backward", dy.shape(), x.shape());
  Conv3dGrads g{Tensor(x.shape()), Tensor(kernel.shape())};
  const double* xs = x.data().data();
  const double* ks = kernel.data().data();
  const double* gy = dy.data().data();
  double* gx = g.dx.data().data();
  double* gk = g.dkernel.data().data();
  for_each_tap(c, [&](std::size_t out_off, std::size_t in_off, std::size_t k_off) {
    for (std::size_t ci = 0; ci < c.cin; ++ci) {
      const double xv = xs[in_off + ci];
      const double* krow = ks + k_off + ci * c.cout;
      double* gkrow = gk + k_off + ci * c.cout;
      double acc = 0.0;
      for (std::size_t co = 0; co < c.cout; ++co) {
        gkrow[co] += xv * gy[out_off + co];
        acc += krow[co] * gy[out_off + co];
      }
      gx[in_off + ci] += acc;
    }
  });
  return g;
}

// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for shape " +
                     shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t outer = n ? x.size() / (n * inner) : 0;

  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[base + i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(x[base + i * inner] - mx);
        y[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < n; ++i) y[base + i * inner] /= sum;
    }
  return y;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

std::string_view to_string(Activation a) { return a == Activation::gelu ? "gelu" : "sigmoid"; }

Activation activation_from_string(std::string_view name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw Error("unknown activation '" + std::string(name) + "' (expected gelu|sigmoid)");
}

Tensor activate(const Tensor& x, Activation a) { return a == Activation::gelu ? gelu(x) : sigmoid(x); }

Tensor activate_backward(const Tensor& x, const Tensor& dy, Activation a) {
  if (x.shape() != dy.shape()) throw ShapeError("activate_backward", x.shape(), dy.shape());
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d;
    if (a == Activation::gelu) {
      d = gelu_derivative(x[i]);
    } else {
      const double s = sigmoid(x[i]);
      d = s * (1.0 - s);
    }
    dx[i] = dy[i] * d;
  }
  return dx;
}

// ---------------------------------------------------------------------------

void AttentionParams::validate() const {
  for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->rank() != 2 || w->dim(0) != w->dim(1) || w->dim(0) != w_q.dim(0)) {
      throw ShapeError("attention projections must be square and equal", w->shape(), w_q.shape());
    }
  }
  if (num_heads == 0 || model_dim() % num_heads != 0) {
    throw ShapeError("model_dim " + std::to_string(model_dim()) + " not divisible by num_heads " +
                     std::to_string(num_heads));
  }
}

AttentionParams AttentionParams::identity(std::size_t model_dim, std::size_t num_heads) {
  const Tensor eye = Tensor::identity(model_dim);
  AttentionParams p{num_heads, eye, eye, eye, eye};
  p.validate();
  return p;
}

AttentionParams AttentionParams::random(std::size_t model_dim, std::size_t num_heads,
                                        std::uint64_t seed, double scale) {
  Rng rng(seed);
  const Shape s{model_dim, model_dim};
  AttentionParams p;
  p.num_heads = num_heads;
  p.w_q = random_normal(s, rng, scale);
  p.w_k = random_normal(s, rng, scale);
  p.w_v = random_normal(s, rng, scale);
  p.w_o = random_normal(s, rng, scale);
  p.validate();
  return p;
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const AttentionParams& params, AttentionCache* cache) {
  params.validate();
  const std::size_t c = params.model_dim();
  for (const Tensor* t : {&q_in, &k_in, &v_in}) {
    if (t->rank() != 2 || t->dim(1) != c) {
      throw ShapeError("attention input must be [tokens, model_dim]", t->shape(), params.w_q.shape());
    }
  }
  if (k_in.dim(0) != v_in.dim(0)) throw ShapeError("key/value sequence length", k_in.shape(), v_in.shape());

  const std::size_t tq = q_in.dim(0);
  const std::size_t tk = k_in.dim(0);
  const std::size_t nh = params.num_heads;
  const std::size_t hd = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor q = linear(q_in, params.w_q);
  Tensor k = linear(k_in, params.w_k);
  Tensor v = linear(v_in, params.w_v);
  Tensor context(Shape{tq, c});
  std::vector<Tensor> probs;
  probs.reserve(nh);

  for (std::size_t h = 0; h < nh; ++h) {
    const std::size_t off = h * hd;
    Tensor p(Shape{tq, tk});
    for (std::size_t i = 0; i < tq; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < tk; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += q[i * c + off + e] * k[j * c + off + e];
        s *= scale;
        p[i * tk + j] = s;
        mx = std::max(mx, s);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        const double e = std::exp(p[i * tk + j] - mx);
        p[i * tk + j] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < tk; ++j) p[i * tk + j] /= sum;
      for (std::size_t j = 0; j < tk; ++j) {
        const double w = p[i * tk + j];
        for (std::size_t e = 0; e < hd; ++e) context[i * c + off + e] += w * v[j * c + off + e];
      }
    }
    probs.push_back(std::move(p));
  }

  Tensor out = linear(context, params.w_o);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
  }
  return out;
}

AttentionGrads multi_head_attention_backward(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                                             const AttentionParams& params,
                                             const AttentionCache& cache, const Tensor& dy) {
  const std::size_t c = params.model_dim();
  const std::size_t tq = q_in.dim(0);
  const std::size_t tk = k_in.dim(0);
  const std::size_t nh = params.num_heads;
  const std::size_t hd = params.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  if (dy.shape() != Shape{tq, c}) throw ShapeError("attention backward", dy.shape(), q_in.shape());

  AttentionGrads g;
  LinearGrads out_g = linear_backward(cache.context, params.w_o, dy);
  g.dw_o = std::move(out_g.dw);
  const Tensor& dctx = out_g.dx;

  Tensor dq(Shape{tq, c}), dk(Shape{tk, c}), dv(Shape{tk, c});
  std::vector<double> dp(tk);
  for (std::size_t h = 0; h < nh; ++h) {
    const std::size_t off = h * hd;
    const Tensor& p = cache.probs[h];
    for (std::size_t i = 0; i < tq; ++i) {
      double row_dot = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < hd; ++e) acc += dctx[i * c + off + e] * cache.v[j * c + off + e];
        dp[j] = acc;
        row_dot += acc * p[i * tk + j];
        const double w = p[i * tk + j];
        for (std::size_t e = 0; e < hd; ++e) dv[j * c + off + e] += w * dctx[i * c + off + e];
      }
      for (std::size_t j = 0; j < tk; ++j) {
        const double ds = p[i * tk + j] * (dp[j] - row_dot) * scale;
        if (ds == 0.0) continue;
        for (std::size_t e = 0; e < hd; ++e) {
          dq[i * c + off + e] += ds * cache.k[j * c + off + e];
          dk[j * c + off + e] += ds * cache.q[i * c + off + e];
        }
      }
    }
  }

  LinearGrads gq = linear_backward(q_in, params.w_q, dq);
  LinearGrads gk = linear_backward(k_in, params.w_k, dk);
  LinearGrads gv = linear_backward(v_in, params.w_v, dv);
  g.dq = std::move(gq.dx);
  g.dk = std::move(gk.dx);
  g.dv = std::move(gv.dx);
  g.dw_q = std::move(gq.dw);
  g.dw_k = std::move(gk.dw);
  g.dw_v = std::move(gv.dw);
  return g;
}

// ---------------------------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot length mismatch", Shape{a.size()}, Shape{b.size()});
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine length mismatch", Shape{a.size()}, Shape{b.size()});
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("cosine_similarity", a.shape(), b.shape());
  return cosine_similarity(a.data(), b.data());
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw Error("finite_diff_grad requires h > 0");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace samed
