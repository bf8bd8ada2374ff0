#include "samed/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "samed/random.hpp"

namespace samed {

void NoiseConfig::validate() const {
  if (!(label_corrupt_prob >= 0.0 && label_corrupt_prob <= 1.0)) {
    throw Error("label_corrupt_prob must lie in [0, 1]");
  }
  if (!(feature_noise_sigma >= 0.0)) throw Error("feature_noise_sigma must be >= 0");
  if (!(confidence_miscalibration >= 0.0)) throw Error("confidence_miscalibration must be >= 0");
}

std::string to_string(ShapeFamily f) { return f == ShapeFamily::ellipse ? "ellipse" : "rectangle"; }

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "ellipse") return ShapeFamily::ellipse;
  if (s == "rectangle") return ShapeFamily::rectangle;
  throw Error("unknown shape family '" + s + "' (expected ellipse|rectangle)");
}

namespace {

struct Wave {
  double kx, ky, phase, amp;
};

struct VolumeRecipe {
  double cy0, cx0, vy, vx, ry, rx;
  std::vector<Wave> waves;
};

// Appearance of one task: per-pixel feature = m*fg + (1-m)*bg + texture*tex.
struct TaskAppearance {
  std::vector<double> fg, bg, tex;
};

std::vector<double> normal_vec(std::size_t n, Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

SharedAppearance shared_appearance(const FrameGeometry& geo) {
  Rng world(mix_seed(geo.world_seed, 0x5eed));
  SharedAppearance s;
  s.fg = normal_vec(geo.channels, world);
  s.bg = normal_vec(geo.channels, world);
  return s;
}

namespace {

TaskAppearance appearance(const TaskSpec& task, const FrameGeometry& geo) {
  const SharedAppearance shared = shared_appearance(geo);
  const auto& g_fg = shared.fg;
  const auto& g_bg = shared.bg;
  Rng rng(mix_seed(task.projection_seed, 0xa11));
  const auto r_fg = normal_vec(geo.channels, rng);
  const auto r_bg = normal_vec(geo.channels, rng);
  TaskAppearance a{std::vector<double>(geo.channels), std::vector<double>(geo.channels), normal_vec(geo.channels, rng)};
  for (std::size_t c = 0; c < geo.channels; ++c) {
    a.fg[c] = geo.shared_weight * g_fg[c] + geo.task_weight * r_fg[c];
    a.bg[c] = geo.shared_weight * g_bg[c] + geo.task_weight * r_bg[c];
  }
  return a;
}

VolumeRecipe volume_recipe(const TaskSpec& task, std::uint64_t seed, const FrameGeometry& geo) {
  Rng rng(mix_seed(mix_seed(task.projection_seed, seed), 0xb01));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = static_cast<double>(geo.height), w = static_cast<double>(geo.width);
  const double scale = std::min(h, w) / 32.0;
  VolumeRecipe r;
  r.cy0 = h * (0.38 + 0.24 * u(rng));
  r.cx0 = w * (0.38 + 0.24 * u(rng));
  r.vy = (u(rng) - 0.5) * 1.0 * scale;
  r.vx = (u(rng) - 0.5) * 1.0 * scale;
  r.ry = (4.5 + 4.5 * u(rng)) * scale;
  r.rx = (4.5 + 4.5 * u(rng)) * scale;
  for (int i = 0; i < 3; ++i) {
    const double freq = 0.15 + 0.35 * u(rng);
    const double ang = 2.0 * std::numbers::pi * u(rng);
    r.waves.push_back({freq * std::cos(ang), freq * std::sin(ang), 2.0 * std::numbers::pi * u(rng),
                       geo.texture_amplitude / 3.0});
  }
  return r;
}

Tensor rasterize(ShapeFamily family, double cy, double cx, double ry, double rx, const FrameGeometry& geo) {
  Tensor m(Shape{geo.height, geo.width});
  for (std::size_t y = 0; y < geo.height; ++y)
    for (std::size_t x = 0; x < geo.width; ++x) {
      const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
      const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
      const bool in = family == ShapeFamily::ellipse ? dy * dy + dx * dx <= 1.0
                                                      : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
      m[y * geo.width + x] = in ? 1.0 : 0.0;
    }
  return m;
}

Tensor shift_mask(const Tensor& m, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  const auto h = static_cast<std::ptrdiff_t>(m.dim(0)), w = static_cast<std::ptrdiff_t>(m.dim(1));
  Tensor out(m.shape());
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const auto sy = y - dy, sx = x - dx;
      if (sy >= 0 && sy < h && sx >= 0 && sx < w) out[static_cast<std::size_t>(y * w + x)] = m[static_cast<std::size_t>(sy * w + sx)];
    }
  return out;
}

Tensor erode(const Tensor& m, int iterations) {
  const std::size_t h = m.dim(0), w = m.dim(1);
  Tensor cur = m;
  for (int it = 0; it < iterations; ++it) {
    Tensor next(m.shape());
    for (std::size_t y = 1; y + 1 < h; ++y)
      for (std::size_t x = 1; x + 1 < w; ++x) {
        const std::size_t i = y * w + x;
        next[i] = (cur[i] != 0.0 && cur[i - 1] != 0.0 && cur[i + 1] != 0.0 && cur[i - w] != 0.0 && cur[i + w] != 0.0)
                      ? 1.0 : 0.0;
      }
    cur = std::move(next);
  }
  return cur;
}

bool any_nonzero(const Tensor& t) {
  return std::any_of(t.data().begin(), t.data().end(), [](double v) { return v != 0.0; });
}

}  // namespace

Tensor true_mask(const TaskSpec& task, std::int64_t t, std::uint64_t seed, const FrameGeometry& geo) {
  const VolumeRecipe r = volume_recipe(task, seed, geo);
  const double mid = static_cast<double>(geo.slices) / 2.0;
  const double dt = static_cast<double>(t) - mid;
  const double s = 0.8 + 0.2 * std::cos(std::numbers::pi * dt / std::max<double>(1.0, static_cast<double>(geo.slices)));
  const double ry = r.ry * s, rx = r.rx * s;
  const double cy = std::clamp(r.cy0 + r.vy * dt, ry + 1.0, static_cast<double>(geo.height) - ry - 1.0);
  const double cx = std::clamp(r.cx0 + r.vx * dt, rx + 1.0, static_cast<double>(geo.width) - rx - 1.0);
  return rasterize(task.shape_family, cy, cx, ry, rx, geo);
}

Frame gen_frame(const TaskSpec& task, std::int64_t t, std::uint64_t seed, const FrameGeometry& geo) {
  task.noise.validate();
  const TaskAppearance app = appearance(task, geo);
  const VolumeRecipe r = volume_recipe(task, seed, geo);
  const std::uint64_t frame_seed = mix_seed(mix_seed(task.projection_seed, seed), static_cast<std::uint64_t>(t) + 17);

  Frame f;
  f.task_id = task.task_id;
  f.slice_index = t;
  f.mask = true_mask(task, t, seed, geo);

  const std::size_t h = geo.height, w = geo.width, c = geo.channels;
  f.features = Tensor(Shape{h, w, c});
  Rng noise_rng(mix_seed(frame_seed, 1));
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = task.noise.feature_noise_sigma;
  const double phase_t = 0.1 * static_cast<double>(t);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double m = f.mask[y * w + x];
      double tex = 0.0;
      for (const auto& wv : r.waves) {
        tex += wv.amp * std::sin(wv.kx * static_cast<double>(x) + wv.ky * static_cast<double>(y) + wv.phase + phase_t);
      }
      double* px = f.features.data().data() + (y * w + x) * c;
      for (std::size_t k = 0; k < c; ++k) {
        px[k] = m * app.fg[k] + (1.0 - m) * app.bg[k] + tex * app.tex[k];
        if (sigma > 0.0) px[k] += sigma * noise(noise_rng);
      }
    }

  Rng label_rng(mix_seed(frame_seed, 2));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double draw = u(label_rng);
  if (draw < task.noise.label_corrupt_prob) {
    f.is_corrupted = true;
    const double mode = u(label_rng);
    const double ang = 2.0 * std::numbers::pi * u(label_rng);
    const double mag = 4.0 + 4.0 * u(label_rng);
    Tensor damaged;
    if (mode < 0.5) {
      damaged = shift_mask(f.mask, static_cast<std::ptrdiff_t>(std::lround(mag * std::sin(ang))),
                           static_cast<std::ptrdiff_t>(std::lround(mag * std::cos(ang))));
    } else {
      damaged = erode(f.mask, 3);
    }
    if (!any_nonzero(damaged)) damaged = erode(f.mask, 1);
    if (!any_nonzero(damaged)) damaged = shift_mask(f.mask, 2, 2);
    f.mask = std::move(damaged);
  }
  return f;
}

std::vector<Frame> gen_volume(const TaskSpec& task, std::uint64_t seed, const FrameGeometry& geo) {
  std::vector<Frame> out;
  out.reserve(geo.slices);
  for (std::size_t t = 0; t < geo.slices; ++t) {
    Frame f = gen_frame(task, static_cast<std::int64_t>(t), seed, geo);
    f.volume_id = static_cast<std::int64_t>(seed & 0x7fffffffffffffffULL);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<Frame> preprocess_stream(const std::vector<Frame>& frames, double min_edge_ratio) {
  std::vector<Frame> out;
  for (const Frame& f : frames) {
    if (f.mask.rank() != 2) throw ShapeError("frame mask must be [H,W], got " + shape_to_string(f.mask.shape()));
    const double h = static_cast<double>(f.height()), w = static_cast<double>(f.width());
    if (std::min(h, w) < min_edge_ratio * std::max(h, w)) continue;

    std::set<double> classes;
    for (double v : f.mask.data())
      if (v != 0.0) classes.insert(v);
    if (classes.empty()) continue;

    if (classes.size() == 1 && *classes.begin() == 1.0) {
      out.push_back(f);
      continue;
    }
    for (double cls : classes) {
      Frame part = f;
      for (auto& v : part.mask.data()) v = (v == cls) ? 1.0 : 0.0;
      out.push_back(std::move(part));
    }
  }
  return out;
}

std::vector<Frame> shuffle_standalone(std::vector<Frame> frames, std::uint64_t seed) {
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i].volume_id < 0) slots.push_back(i);
  Rng rng(seed);
  for (std::size_t i = slots.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(frames[slots[i - 1]], frames[slots[pick(rng)]]);
  }
  return frames;
}

std::optional<BoundingBox> mask_bbox(const Tensor& mask) {
  if (mask.rank() != 2) throw ShapeError("mask must be [H,W], got " + shape_to_string(mask.shape()));
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  BoundingBox b{w, h, 0, 0};
  bool any = false;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (mask[y * w + x] != 0.0) {
        any = true;
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  if (!any) return std::nullopt;
  return b;
}

}  // namespace samed
