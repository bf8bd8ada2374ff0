#include "samed/checks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "samed/kernels.hpp"
#include "samed/memory_attention.hpp"
#include "samed/random.hpp"

namespace samed {

namespace {

std::string fmt_indices(const std::vector<std::size_t>& v) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  s << ']';
  return s.str();
}

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {  // inclusive
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

FeatureShape random_shape(Rng& rng) {
  for (;;) {
    FeatureShape s{uniform_index(rng, 1, 8), uniform_index(rng, 1, 4), uniform_index(rng, 1, 4)};
    if (s.numel() <= 128) return s;
  }
}

// Confidences come from a small grid so that equal values (and equal
// scores) show up often.
double random_confidence(Rng& rng) {
  static const double grid[] = {-3.0, -1.0, -0.5, 0.0, 0.0, 0.5, 1.0, 2.0, 6.0};
  if (std::bernoulli_distribution(0.5)(rng)) return grid[uniform_index(rng, 0, std::size(grid) - 1)];
  return std::normal_distribution<double>(0.0, 2.0)(rng);
}

MemoryEntry random_entry(const FeatureShape& fs, Rng& rng, std::size_t tag) {
  return {random_normal(fs.as_shape(), rng), random_normal(fs.as_shape(), rng), random_confidence(rng),
          random_normal(fs.as_shape(), rng), "e" + std::to_string(tag)};
}

std::string serialized(const MemoryBase& m) {
  std::ostringstream s;
  m.write(s);
  return s.str();
}

std::vector<std::size_t> brute_force_order(const MemoryBase& m, const Tensor& q, bool with_confidence) {
  std::vector<double> score(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    score[i] = cosine_similarity(m.entry(i).image_embedding, q);
    if (with_confidence) score[i] += sigmoid(m.entry(i).confidence);
  }
  std::vector<std::size_t> order(m.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

}  // namespace

Counterexample retrieval_oracle_trial(std::uint64_t seed) {
  Rng rng(seed);
  const FeatureShape fs = random_shape(rng);
  const std::size_t n = uniform_index(rng, 0, 64);
  MemoryBase m(n, fs);
  for (std::size_t i = 0; i < n; ++i) {
    // Some slots duplicate an earlier one outright to force exact score ties.
    if (i > 0 && std::bernoulli_distribution(0.15)(rng)) {
      MemoryEntry dup = m.entry(uniform_index(rng, 0, i - 1));
      dup.source_tag = "dup" + std::to_string(i);
      m.insert_or_replace(std::move(dup));
    } else {
      m.insert_or_replace(random_entry(fs, rng, i));
    }
  }
  Tensor q = random_normal(fs.as_shape(), rng);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < 0.1 && n > 0) q = m.entry(uniform_index(rng, 0, n - 1)).image_embedding;
  else if (u < 0.15) q.fill(0.0);
  const std::size_t k = uniform_index(rng, 0, n + 2);

  for (bool with_conf : {true, false}) {
    auto expect = brute_force_order(m, q, with_conf);
    expect.resize(std::min(k, n));
    const auto got =
        m.retrieve_topk(q, k, with_conf ? RetrievalScoring::confidence_similarity : RetrievalScoring::similarity_only);
    if (got.indices != expect) {
      std::ostringstream s;
      s << "seed " << seed << " (N=" << n << ", C,H,W=" << fs.channels << "," << fs.height << "," << fs.width
        << ", k=" << k << ", " << (with_conf ? "confidence_similarity" : "similarity_only") << "): got "
        << fmt_indices(got.indices) << " expected " << fmt_indices(expect);
      return s.str();
    }
  }
  return std::nullopt;
}

Counterexample replacement_trial(std::uint64_t seed, std::size_t inserts) {
  Rng rng(seed);
  const FeatureShape fs = random_shape(rng);
  const std::size_t cap = uniform_index(rng, 1, 16);
  MemoryBase m(cap, fs);
  std::size_t tag = 0;
  while (!m.full()) m.insert_or_replace(random_entry(fs, rng, tag++));

  auto fail = [&](std::size_t step, const std::string& what) -> Counterexample {
    return "seed " + std::to_string(seed) + " insert " + std::to_string(step) + " (capacity " + std::to_string(cap) +
           "): " + what;
  };

  for (std::size_t step = 0; step < inserts; ++step) {
    MemoryEntry e = random_entry(fs, rng, tag++);
    // Mask features are sometimes copied from a stored slot so the best match is exact.
    if (std::bernoulli_distribution(0.2)(rng)) e.mask_feature = m.entry(uniform_index(rng, 0, cap - 1)).mask_feature;
    const std::string before = serialized(m);
    const MemoryBase snapshot = m;

    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cap; ++i) {
      const double s = cosine_similarity(m.entry(i).mask_feature, e.mask_feature);
      if (s > best_sim) best_sim = s, best = i;
    }
    const double old_conf = m.entry(best).confidence;
    const MemoryEntry copy = e;
    const ReplaceOutcome o = m.insert_or_replace(std::move(e));

    if (m.size() > cap) return fail(step, "size " + std::to_string(m.size()) + " exceeds capacity");
    if (o.kind == ReplaceOutcome::Kind::appended) return fail(step, "appended into a full base");
    if (o.kind == ReplaceOutcome::Kind::replaced) {
      if (!o.index || *o.index != best) return fail(step, "replaced a slot other than the most similar one");
      if (!(copy.confidence > old_conf)) {
        return fail(step, "replaced although y_new=" + std::to_string(copy.confidence) +
                              " <= y_old=" + std::to_string(old_conf));
      }
      if (!(m.entry(best) == copy)) return fail(step, "replaced slot does not hold the new entry");
      for (std::size_t i = 0; i < cap; ++i)
        if (i != best && !(m.entry(i) == snapshot.entry(i))) return fail(step, "replacement touched another slot");
    } else {
      if (copy.confidence > old_conf) return fail(step, "rejected a strictly better entry");
      if (serialized(m) != before) return fail(step, "rejected insert modified the base");
    }
  }
  return std::nullopt;
}

Counterexample capacity_zero_trial(std::uint64_t seed) {
  Rng rng(seed);
  const FeatureShape fs = random_shape(rng);
  MemoryBase m(0, fs);
  const std::string empty = serialized(m);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto o = m.insert_or_replace(random_entry(fs, rng, i));
    if (o.kind != ReplaceOutcome::Kind::rejected) return "seed " + std::to_string(seed) + ": capacity 0 accepted an insert";
    if (m.size() != 0 || serialized(m) != empty) return "seed " + std::to_string(seed) + ": capacity 0 base changed";
  }
  const Tensor q = random_normal(fs.as_shape(), rng);
  if (!m.retrieve_topk(q, 4).empty() || !m.retrieve_random(q, 4, seed).empty()) {
    return "seed " + std::to_string(seed) + ": capacity 0 retrieval returned entries";
  }
  std::istringstream in(empty);
  if (!(MemoryBase::read(in) == m)) return "seed " + std::to_string(seed) + ": capacity 0 round-trip differs";
  const auto st = m.stats();
  if (st.count != 0 || st.mean_confidence) return "seed " + std::to_string(seed) + ": capacity 0 stats not empty";
  return std::nullopt;
}

Counterexample fusion_trial(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t heads = uniform_index(rng, 1, 3);
  const std::size_t c = heads * uniform_index(rng, 1, 4);
  const FeatureShape fs{c, uniform_index(rng, 1, 4), uniform_index(rng, 1, 4)};
  const FusionParams p = FusionParams::random(c, heads, mix_seed(seed, 1), 0.5);
  const Tensor e = random_normal(fs.as_shape(), rng);
  const Tensor pe = random_normal(fs.as_shape(), rng, 0.3);
  auto fail = [&](const std::string& what) -> Counterexample { return "seed " + std::to_string(seed) + ": " + what; };

  if (!bitwise_equal(fuse(e, pe, {}, p), e)) return fail("empty memory changed the embedding");

  const std::size_t n = uniform_index(rng, 1, 4);
  std::vector<MemoryFeatures> mem;
  for (std::size_t i = 0; i < n; ++i) {
    mem.push_back({random_normal(fs.as_shape(), rng), random_normal(fs.as_shape(), rng, 0.3)});
  }
  const Tensor base = fuse(e, pe, mem, p);
  std::vector<MemoryFeatures> perm = mem;
  std::shuffle(perm.begin(), perm.end(), rng);
  const double diff = max_abs_diff(fuse(e, pe, perm, p), base);
  if (!(diff <= 1e-12)) return fail("entry permutation changed the output by " + std::to_string(diff));

  const double spread = std::exp(std::uniform_real_distribution<double>(-2.0, 6.0)(rng));
  const Tensor logits = random_normal(Shape{uniform_index(rng, 1, 8), uniform_index(rng, 1, 64)}, rng, spread);
  const Tensor sm = softmax(logits, 1);
  for (std::size_t r = 0; r < sm.dim(0); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < sm.dim(1); ++j) s += sm[r * sm.dim(1) + j];
    if (!(std::abs(s - 1.0) <= 1e-12)) return fail("softmax row sums to " + std::to_string(s));
  }
  return std::nullopt;
}

GradCheckReport grad_trial(std::uint64_t seed, const GradTrialConfig& cfg, GradCheckOptions opts) {
  BlockConfig bc;
  bc.channels = cfg.channels;
  bc.bottleneck = cfg.bottleneck;
  bc.num_heads = cfg.heads;
  bc.activation = cfg.activation;
  BlockParams p = make_block_params(bc, mix_seed(seed, 1), cfg.weight_scale);
  Rng rng(mix_seed(seed, 2));
  std::normal_distribution<double> n(0.0, 0.1);
  if (cfg.perturb_norms) for_each_param(p, [&](std::string_view name, Tensor& t) {
    const bool gamma = name.ends_with("gamma");
    if (!gamma && !name.ends_with("beta") && !name.ends_with("b1") && !name.ends_with("b2")) return;
    for (auto& v : t.data()) v = (gamma ? 1.0 : 0.0) + n(rng);
  });
  const Tensor x = random_normal(Shape{cfg.batch, cfg.height, cfg.width, cfg.channels}, mix_seed(seed, 3));
  opts.upstream_seed = mix_seed(seed, 4);
  return grad_check(p, x, opts);
}

}  // namespace samed
