#include "samed/temporal_adapter.hpp"

#include <algorithm>
#include <cmath>

#include "samed/random.hpp"
#include "block_reference.hpp"

namespace samed {

namespace {

void require_shape(const Tensor& t, const Shape& s, const char* what) {
  if (t.shape() != s) throw ShapeError(what, t.shape(), s);
}

void require_bhwc(const Tensor& x, std::size_t c) {
  if (x.rank() != 4 || x.dim(3) != c) {
    throw ShapeError("block input must be [B,H,W,C]", x.shape(), Shape{0, 0, 0, c});
  }
}

Tensor frame_tokens(const Tensor& x, std::size_t b) {
  const std::size_t t = x.dim(1) * x.dim(2), c = x.dim(3);
  auto begin = x.data().begin() + static_cast<std::ptrdiff_t>(b * t * c);
  return Tensor(Shape{t, c}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(t * c)));
}

void put_frame_tokens(Tensor& x, std::size_t b, const Tensor& tokens) {
  const std::size_t n = tokens.size();
  std::copy(tokens.data().begin(), tokens.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(b * n));
}

struct AdapterCache {
  LayerNormCache ln;
  Tensor normed;  // LN_a(x_attn)
  Tensor down;    // W_down LN_a(x_attn), [B,H,W,r]
  Tensor conv;    // Conv3D(down)
  Tensor act;     // act(conv)
};

struct BlockCache {
  LayerNormCache ln1;
  Tensor u;                              // LN1(x)
  std::vector<AttentionCache> attn;      // per frame
  Tensor x_attn;
  AdapterCache adapter;
  Tensor x_out;
  LayerNormCache ln2;
  Tensor m;                              // LN2(x_out)
  Tensor h1;                             // m W1 + b1
  Tensor g1;                             // gelu(h1)
};

Tensor adapter_forward_impl(const Tensor& x_attn, const AdapterParams& p, AdapterCache* cache) {
  p.validate();
  require_bhwc(x_attn, p.channels());
  AdapterCache local;
  AdapterCache& c = cache ? *cache : local;
  c.normed = layer_norm(x_attn, p.ln_gamma, p.ln_beta, p.ln_eps, &c.ln);
  c.down = linear(c.normed, p.w_down);
  c.conv = conv3d(c.down, p.conv_kernel);
  c.act = activate(c.conv, p.activation);
  return x_attn + linear(c.act, p.w_up);
}

Tensor block_forward_impl(const Tensor& x, const BlockParams& p, BlockMode mode, BlockCache* cache) {
  p.validate();
  require_bhwc(x, p.channels());
  BlockCache local;
  BlockCache& c = cache ? *cache : local;

  c.u = layer_norm(x, p.ln1_gamma, p.ln1_beta, p.ln_eps, &c.ln1);
  c.x_attn = Tensor(x.shape());
  c.attn.assign(x.dim(0), {});
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    const Tensor tok = frame_tokens(c.u, b);
    put_frame_tokens(c.x_attn, b, multi_head_attention(tok, tok, tok, p.attn, &c.attn[b]));
  }
  Tensor branch = adapter_forward_impl(c.x_attn, p.adapter, &c.adapter);

  const double keep = drop_path_scale(p.drop_path_rate, mode);
  c.x_out = x;
  if (keep != 0.0) {
    if (keep != 1.0) branch *= keep;
    c.x_out += branch;
  }

  c.m = layer_norm(c.x_out, p.ln2_gamma, p.ln2_beta, p.ln_eps, &c.ln2);
  c.h1 = linear(c.m, p.mlp_w1, p.mlp_b1);
  c.g1 = gelu(c.h1);
  return c.x_out + linear(c.g1, p.mlp_w2, p.mlp_b2);
}

// Returns d x_attn; parameter gradients go to `g`.
Tensor adapter_backward(const Tensor& dy, const AdapterParams& p, const AdapterCache& c, AdapterParams& g) {
  LinearGrads up = linear_backward(c.act, p.w_up, dy);
  g.w_up = std::move(up.dw);
  Tensor dconv = activate_backward(c.conv, up.dx, p.activation);
  Conv3dGrads cg = conv3d_backward(c.down, p.conv_kernel, dconv);
  g.conv_kernel = std::move(cg.dkernel);
  LinearGrads down = linear_backward(c.normed, p.w_down, cg.dx);
  g.w_down = std::move(down.dw);
  LayerNormGrads ln = layer_norm_backward(down.dx, p.ln_gamma, c.ln);
  g.ln_gamma = std::move(ln.dgamma);
  g.ln_beta = std::move(ln.dbeta);
  g.activation = p.activation;
  g.ln_eps = p.ln_eps;
  return dy + ln.dx;
}

template <typename P, typename Fn>
void visit_params(P& p, Fn&& fn) {
  fn("ln1.gamma", p.ln1_gamma);
  fn("ln1.beta", p.ln1_beta);
  fn("attn.w_q", p.attn.w_q);
  fn("attn.w_k", p.attn.w_k);
  fn("attn.w_v", p.attn.w_v);
  fn("attn.w_o", p.attn.w_o);
  fn("adapter.ln.gamma", p.adapter.ln_gamma);
  fn("adapter.ln.beta", p.adapter.ln_beta);
  fn("adapter.w_down", p.adapter.w_down);
  fn("adapter.conv", p.adapter.conv_kernel);
  fn("adapter.w_up", p.adapter.w_up);
  fn("ln2.gamma", p.ln2_gamma);
  fn("ln2.beta", p.ln2_beta);
  fn("mlp.w1", p.mlp_w1);
  fn("mlp.b1", p.mlp_b1);
  fn("mlp.w2", p.mlp_w2);
  fn("mlp.b2", p.mlp_b2);
}

bool name_matches(std::string_view full, std::string_view wanted) {
  if (full == wanted) return true;
  const auto dot = full.rfind('.');
  return dot != std::string_view::npos && full.substr(dot + 1) == wanted;
}

}  // namespace

void AdapterParams::validate() const {
  if (w_down.rank() != 2 || w_up.rank() != 2) throw ShapeError("adapter projections must be matrices");
  const std::size_t c = channels(), r = bottleneck();
  require_shape(w_up, {r, c}, "adapter W_up");
  require_shape(ln_gamma, {c}, "adapter LN gamma");
  require_shape(ln_beta, {c}, "adapter LN beta");
  if (conv_kernel.rank() != 5 || conv_kernel.dim(3) != r || conv_kernel.dim(4) != r) {
    throw ShapeError("adapter conv kernel must be [kd,kh,kw,r,r]", conv_kernel.shape(), Shape{0, 0, 0, r, r});
  }
  if (r == 0 || r >= c) {
    throw ShapeError("adapter bottleneck r=" + std::to_string(r) + " must satisfy 0 < r < C=" + std::to_string(c));
  }
}

void BlockParams::validate() const {
  const std::size_t c = channels();
  require_shape(ln1_beta, {c}, "LN1 beta");
  require_shape(ln2_gamma, {c}, "LN2 gamma");
  require_shape(ln2_beta, {c}, "LN2 beta");
  attn.validate();
  if (attn.model_dim() != c) throw ShapeError("attention model_dim", attn.w_q.shape(), Shape{c});
  adapter.validate();
  if (adapter.channels() != c) throw ShapeError("adapter channels", adapter.w_down.shape(), Shape{c});
  if (mlp_w1.rank() != 2 || mlp_w1.dim(0) != c) throw ShapeError("MLP W1", mlp_w1.shape(), Shape{c, 0});
  const std::size_t hidden = mlp_w1.dim(1);
  require_shape(mlp_b1, {hidden}, "MLP b1");
  require_shape(mlp_w2, {hidden, c}, "MLP W2");
  require_shape(mlp_b2, {c}, "MLP b2");
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) {
    throw Error("drop_path_rate must lie in [0, 1), got " + std::to_string(drop_path_rate));
  }
}

BlockParams make_block_params(const BlockConfig& cfg, std::uint64_t seed, double scale) {
  const std::size_t c = cfg.channels;
  const std::size_t r = cfg.bottleneck ? cfg.bottleneck : c / 4;
  const std::size_t hidden = cfg.mlp_ratio * c;
  Rng rng(seed);
  BlockParams p;
  p.ln1_gamma = Tensor(Shape{c}, 1.0);
  p.ln1_beta = Tensor(Shape{c}, 0.0);
  p.attn = AttentionParams::random(c, cfg.num_heads, mix_seed(seed, 1), scale);
  p.adapter.ln_gamma = Tensor(Shape{c}, 1.0);
  p.adapter.ln_beta = Tensor(Shape{c}, 0.0);
  p.adapter.w_down = random_normal({c, r}, rng, scale);
  p.adapter.conv_kernel = random_normal({cfg.conv_depth, cfg.conv_height, cfg.conv_width, r, r}, rng, scale);
  p.adapter.w_up = random_normal({r, c}, rng, scale);
  p.adapter.activation = cfg.activation;
  p.ln2_gamma = Tensor(Shape{c}, 1.0);
  p.ln2_beta = Tensor(Shape{c}, 0.0);
  p.mlp_w1 = random_normal({c, hidden}, rng, scale);
  p.mlp_b1 = Tensor(Shape{hidden}, 0.0);
  p.mlp_w2 = random_normal({hidden, c}, rng, scale);
  p.mlp_b2 = Tensor(Shape{c}, 0.0);
  p.drop_path_rate = cfg.drop_path_rate;
  p.validate();
  return p;
}

void zero_residual_branches(BlockParams& p) {
  p.attn.w_o.fill(0.0);
  p.adapter.w_up.fill(0.0);
  p.mlp_w2.fill(0.0);
  p.mlp_b2.fill(0.0);
}

void for_each_param(BlockParams& p, const std::function<void(std::string_view, Tensor&)>& fn) {
  visit_params(p, fn);
}

void for_each_param(const BlockParams& p, const std::function<void(std::string_view, const Tensor&)>& fn) {
  visit_params(p, fn);
}

double drop_path_scale(double rate, BlockMode mode) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("drop_path_rate must lie in [0, 1)");
  const auto* train = std::get_if<TrainMode>(&mode);
  if (!train || rate == 0.0) return 1.0;
  Rng rng(train->seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < rate ? 0.0 : 1.0 / (1.0 - rate);
}

Tensor adapter_forward(const Tensor& x_attn, const AdapterParams& p) {
  return adapter_forward_impl(x_attn, p, nullptr);
}

Tensor block_forward(const Tensor& x, const BlockParams& p, BlockMode mode) {
  return block_forward_impl(x, p, mode, nullptr);
}

BlockGradients block_backward(const Tensor& x, const BlockParams& p, const Tensor& upstream) {
  BlockCache c;
  const Tensor y = block_forward_impl(x, p, EvalMode{}, &c);
  require_shape(upstream, y.shape(), "upstream gradient");

  BlockGradients out;
  BlockParams& g = out.dparams;
  g.drop_path_rate = p.drop_path_rate;
  g.ln_eps = p.ln_eps;
  g.attn.num_heads = p.attn.num_heads;

  // y = x_out + MLP(LN2(x_out))
  LinearGrads l2 = linear_backward(c.g1, p.mlp_w2, upstream);
  g.mlp_w2 = std::move(l2.dw);
  g.mlp_b2 = std::move(l2.db);
  Tensor dh1 = activate_backward(c.h1, l2.dx, Activation::gelu);
  LinearGrads l1 = linear_backward(c.m, p.mlp_w1, dh1);
  g.mlp_w1 = std::move(l1.dw);
  g.mlp_b1 = std::move(l1.db);
  LayerNormGrads n2 = layer_norm_backward(l1.dx, p.ln2_gamma, c.ln2);
  g.ln2_gamma = std::move(n2.dgamma);
  g.ln2_beta = std::move(n2.dbeta);
  const Tensor dx_out = upstream + n2.dx;

  // x_out = x + x_temp (eval-mode DropPath is the identity)
  const Tensor dx_attn = adapter_backward(dx_out, p.adapter, c.adapter, g.adapter);

  // x_attn = MHA(LN1(x)), frame by frame
  Tensor du(x.shape());
  g.attn.w_q = Tensor(p.attn.w_q.shape());
  g.attn.w_k = Tensor(p.attn.w_k.shape());
  g.attn.w_v = Tensor(p.attn.w_v.shape());
  g.attn.w_o = Tensor(p.attn.w_o.shape());
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    const Tensor tok = frame_tokens(c.u, b);
    AttentionGrads ag = multi_head_attention_backward(tok, tok, tok, p.attn, c.attn[b], frame_tokens(dx_attn, b));
    Tensor dtok = ag.dq;
    dtok += ag.dk;
    dtok += ag.dv;
    put_frame_tokens(du, b, dtok);
    g.attn.w_q += ag.dw_q;
    g.attn.w_k += ag.dw_k;
    g.attn.w_v += ag.dw_v;
    g.attn.w_o += ag.dw_o;
  }
  LayerNormGrads n1 = layer_norm_backward(du, p.ln1_gamma, c.ln1);
  g.ln1_gamma = std::move(n1.dgamma);
  g.ln1_beta = std::move(n1.dbeta);
  out.dx = dx_out + n1.dx;
  return out;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

namespace {

std::vector<long double> widen(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

detail::RefDims ref_dims(const BlockParams& p, const Tensor& x) {
  const Shape& k = p.adapter.conv_kernel.shape();
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), p.adapter.w_down.dim(1), p.mlp_w1.dim(1), p.attn.num_heads,
          k[0], k[1], k[2], p.adapter.activation, p.ln_eps, p.adapter.ln_eps};
}

}  // namespace

Tensor reference_block_forward(const BlockParams& p, const Tensor& x) {
  p.validate();
  require_bhwc(x, p.channels());
  detail::RefParams<long double> P;
  for_each_param(p, [&](std::string_view, const Tensor& t) { P.push_back(widen(t)); });
  const auto y = detail::ref_block_forward(P, widen(x), ref_dims(p, x));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = static_cast<double>(y[i]);
  return out;
}

GradCheckReport grad_check(const BlockParams& p, const Tensor& x, const GradCheckOptions& opts) {
  if (!(opts.h > 0.0) || !(opts.tol > 0.0)) throw Error("grad_check requires h > 0 and tol > 0");
  BlockParams params = p;
  params.validate();
  require_bhwc(x, params.channels());

  const Tensor upstream = random_normal(x.shape(), opts.upstream_seed);
  // Neumaier-compensated <upstream, y>: plain summation leaves ~1e-14 of
  // rounding noise in the loss, which h=1e-6 differencing amplifies to ~1e-8.
  const auto loss = [&upstream](const Tensor& y) {
    double sum = 0.0, comp = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double term = upstream[i] * y[i];
      const double t = sum + term;
      comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
      sum = t;
    }
    return sum + comp;
  };

  BlockGradients analytic = block_backward(x, params, upstream);
  if (opts.mutate) {
    bool found = false;
    for_each_param(analytic.dparams, [&](std::string_view name, Tensor& t) {
      if (!found && name_matches(name, *opts.mutate)) {
        t *= 1.1;
        found = true;
      }
    });
    if (!found && *opts.mutate == "x") {
      analytic.dx *= 1.1;
      found = true;
    }
    if (!found) throw Error("unknown parameter '" + *opts.mutate + "' for gradient mutation");
  }

  GradCheckReport report;
  const auto compare = [&](std::string name, const Tensor& a, const Tensor& numeric) {
    ParamCheck pc;
    pc.name = std::move(name);
    pc.count = a.size();
    for (std::size_t i = 0; i < a.size(); ++i) {
      pc.max_rel_err = std::max(pc.max_rel_err, relative_error(a[i], numeric[i]));
      pc.max_abs_err = std::max(pc.max_abs_err, std::abs(a[i] - numeric[i]));
    }
    pc.passed = pc.max_rel_err <= opts.tol;
    report.max_rel_err = std::max(report.max_rel_err, pc.max_rel_err);
    report.passed = report.passed && pc.passed;
    report.params.push_back(std::move(pc));
  };

  if (opts.extended_precision) {
    using LD = long double;
    const detail::RefDims dims = ref_dims(params, x);
    detail::RefParams<LD> P;
    for_each_param(static_cast<const BlockParams&>(params),
                   [&](std::string_view, const Tensor& t) { P.push_back(widen(t)); });
    std::vector<LD> xs = widen(x);
    const std::vector<LD> up = widen(upstream);
    const LD h = opts.h;
    const auto ref_loss = [&] {
      const auto y = detail::ref_block_forward(P, xs, dims);
      LD sum = 0;
      for (std::size_t i = 0; i < y.size(); ++i) sum += up[i] * y[i];
      return sum;
    };
    const auto central = [&](std::vector<LD>& v, const Shape& shape) {
      Tensor g(shape);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const LD orig = v[i];
        v[i] = orig + h;
        const LD plus = ref_loss();
        v[i] = orig - h;
        const LD minus = ref_loss();
        v[i] = orig;
        g[i] = static_cast<double>((plus - minus) / (2 * h));
      }
      return g;
    };
    compare("x", analytic.dx, central(xs, x.shape()));
    std::size_t slot = 0;
    for_each_param(static_cast<const BlockParams&>(analytic.dparams), [&](std::string_view name, const Tensor& g) {
      compare(std::string(name), g, central(P[slot], g.shape()));
      ++slot;
    });
    return report;
  }

  compare("x", analytic.dx,
          finite_diff_grad([&](const Tensor& xp) { return loss(block_forward(xp, params)); }, x, opts.h));

  std::vector<std::string> names;
  std::vector<const Tensor*> grads;
  for_each_param(static_cast<const BlockParams&>(analytic.dparams), [&](std::string_view name, const Tensor& t) {
    names.emplace_back(name);
    grads.push_back(&t);
  });
  std::size_t idx = 0;
  for_each_param(params, [&](std::string_view, Tensor& slot) {
    const Tensor original = slot;
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& probe) {
          slot = probe;
          return loss(block_forward(x, params));
        },
        original, opts.h);
    slot = original;
    compare(names[idx], *grads[idx], numeric);
    ++idx;
  });
  return report;
}

}  // namespace samed
