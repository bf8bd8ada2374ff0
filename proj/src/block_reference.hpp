#pragma once

// Straight-line re-implementation of the eval-mode block forward, generic in
// the scalar type. Instantiated with long double it gives finite differences
// whose rounding noise sits far below the gradient-check tolerance.

#include <cmath>
#include <cstddef>
#include <vector>

#include "samed/kernels.hpp"

namespace samed::detail {

struct RefDims {
  std::size_t batch, height, width, channels, bottleneck, hidden, heads, kd, kh, kw;
  Activation activation;
  double ln_eps;
  double adapter_ln_eps;
};

// Parameter slots in for_each_param order.
enum RefSlot : std::size_t {
  kLn1G, kLn1B, kWq, kWk, kWv, kWo, kAdLnG, kAdLnB, kWDown, kConv, kWUp, kLn2G, kLn2B, kW1, kB1, kW2, kB2, kSlots
};

template <class T>
using RefParams = std::vector<std::vector<T>>;

template <class T>
std::vector<T> ref_layer_norm(const std::vector<T>& x, std::size_t d, const std::vector<T>& g, const std::vector<T>& b,
                              T eps) {
  std::vector<T> y(x.size());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    const T* row = x.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = g[j] * ((row[j] - mean) * is) + b[j];
  }
  return y;
}

template <class T>
std::vector<T> ref_linear(const std::vector<T>& x, std::size_t cin, std::size_t cout, const std::vector<T>& w,
                          const std::vector<T>* bias = nullptr) {
  const std::size_t rows = x.size() / cin;
  std::vector<T> y(rows * cout);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < cout; ++o) {
      T s = bias ? (*bias)[o] : T(0);
      for (std::size_t i = 0; i < cin; ++i) s += x[r * cin + i] * w[i * cout + o];
      y[r * cout + o] = s;
    }
  return y;
}

template <class T>
T ref_activate(T x, Activation a) {
  if (a == Activation::sigmoid) return T(1) / (T(1) + std::exp(-x));
  const T c = static_cast<T>(0.7978845608028654), k = static_cast<T>(0.044715);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x)));
}

template <class T>
std::vector<T> ref_block_forward(const RefParams<T>& P, const std::vector<T>& x, const RefDims& d) {
  const std::size_t c = d.channels, t = d.height * d.width, n = d.batch * t, hd = c / d.heads;
  const std::vector<T> u = ref_layer_norm(x, c, P[kLn1G], P[kLn1B], static_cast<T>(d.ln_eps));

  // Self-attention within each frame.
  const auto q = ref_linear(u, c, c, P[kWq]), k = ref_linear(u, c, c, P[kWk]), v = ref_linear(u, c, c, P[kWv]);
  std::vector<T> ctx(n * c);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> s(t);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t h = 0; h < d.heads; ++h)
      for (std::size_t i = 0; i < t; ++i) {
        const std::size_t qi = (b * t + i) * c + h * hd;
        T mx = -INFINITY, sum = 0;
        for (std::size_t j = 0; j < t; ++j) {
          T acc = 0;
          for (std::size_t e = 0; e < hd; ++e) acc += q[qi + e] * k[(b * t + j) * c + h * hd + e];
          s[j] = acc * scale;
          if (s[j] > mx) mx = s[j];
        }
        for (std::size_t j = 0; j < t; ++j) sum += (s[j] = std::exp(s[j] - mx));
        for (std::size_t j = 0; j < t; ++j)
          for (std::size_t e = 0; e < hd; ++e) ctx[qi + e] += s[j] / sum * v[(b * t + j) * c + h * hd + e];
      }
  const std::vector<T> x_attn = ref_linear(ctx, c, c, P[kWo]);

  // Adapter: LN, down-projection, same-padded 3D conv over (B, H, W), activation, up-projection.
  const std::size_t r = d.bottleneck;
  const auto down = ref_linear(ref_layer_norm(x_attn, c, P[kAdLnG], P[kAdLnB], static_cast<T>(d.adapter_ln_eps)), c,
                               r, P[kWDown]);
  std::vector<T> conv(n * r);
  const auto& ker = P[kConv];
  const long pd = static_cast<long>(d.kd / 2), ph = static_cast<long>(d.kh / 2), pw = static_cast<long>(d.kw / 2);
  for (std::size_t z = 0; z < d.batch; ++z)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t xx = 0; xx < d.width; ++xx)
        for (std::size_t a = 0; a < d.kd; ++a)
          for (std::size_t bb = 0; bb < d.kh; ++bb)
            for (std::size_t cc = 0; cc < d.kw; ++cc) {
              const long sz = static_cast<long>(z + a) - pd, sy = static_cast<long>(y + bb) - ph,
                         sx = static_cast<long>(xx + cc) - pw;
              if (sz < 0 || sy < 0 || sx < 0 || sz >= static_cast<long>(d.batch) ||
                  sy >= static_cast<long>(d.height) || sx >= static_cast<long>(d.width)) {
                continue;
              }
              const std::size_t in = ((static_cast<std::size_t>(sz) * d.height + static_cast<std::size_t>(sy)) *
                                          d.width + static_cast<std::size_t>(sx)) * r;
              const std::size_t out = ((z * d.height + y) * d.width + xx) * r;
              const std::size_t koff = ((a * d.kh + bb) * d.kw + cc) * r * r;
              for (std::size_t ci = 0; ci < r; ++ci)
                for (std::size_t co = 0; co < r; ++co) conv[out + co] += down[in + ci] * ker[koff + ci * r + co];
            }
  for (auto& val : conv) val = ref_activate(val, d.activation);
  const auto up = ref_linear(conv, r, c, P[kWUp]);

  std::vector<T> x_out(n * c);
  for (std::size_t i = 0; i < x_out.size(); ++i) x_out[i] = x[i] + (x_attn[i] + up[i]);

  auto hid = ref_linear(ref_layer_norm(x_out, c, P[kLn2G], P[kLn2B], static_cast<T>(d.ln_eps)), c, d.hidden, P[kW1],
                        &P[kB1]);
  for (auto& val : hid) val = ref_activate(val, Activation::gelu);
  const auto mlp = ref_linear(hid, d.hidden, c, P[kW2], &P[kB2]);
  for (std::size_t i = 0; i < x_out.size(); ++i) x_out[i] += mlp[i];
  return x_out;
}

}  // namespace samed::detail
