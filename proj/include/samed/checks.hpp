#pragma once

// Randomized property trials shared by the CLI and the acceptance suite.
// Each trial is fully determined by its seed; a failure comes back as a
// human-readable counterexample.

#include <cstdint>
#include <optional>
#include <string>

#include "samed/memory_base.hpp"
#include "samed/temporal_adapter.hpp"

namespace samed {

using Counterexample = std::optional<std::string>;

/// Random base (N <= 64, C*H*W <= 128) with deliberate ties; retrieve_topk
/// must match a brute-force stable sort of cos + sigmoid(y_hat), and the
/// similarity-only rule must match a sort of cos alone.
Counterexample retrieval_oracle_trial(std::uint64_t seed);

/// Fills a random base, then streams inserts. Every replacement must be
/// strictly confidence-improving and hit the most similar slot, the size never
/// exceeds capacity, and a rejected insert leaves the serialized base unchanged.
Counterexample replacement_trial(std::uint64_t seed, std::size_t inserts = 16);

/// Capacity-0 base: every insert rejected, retrieval empty, round-trip clean.
Counterexample capacity_zero_trial(std::uint64_t seed);

/// Fusion identities: empty memory is a bitwise no-op, entry order does not
/// matter (<= 1e-12), softmax rows sum to one (<= 1e-12).
Counterexample fusion_trial(std::uint64_t seed);

struct GradTrialConfig {
  std::size_t batch = 3, height = 4, width = 4, channels = 8, bottleneck = 4, heads = 2;
  Activation activation = Activation::gelu;
  double weight_scale = 0.5;
  bool perturb_norms = false;  // random layer-norm affine and MLP biases instead of 1/0
};

/// Random block and input from `seed`, checked with `opts` (upstream seed derived from `seed`).
GradCheckReport grad_trial(std::uint64_t seed, const GradTrialConfig& cfg, GradCheckOptions opts);

}  // namespace samed
