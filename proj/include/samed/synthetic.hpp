#pragma once

// Synthetic multi-task frame streams and the dataset preprocessing rules.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "samed/tensor.hpp"

namespace samed {

struct NoiseConfig {
  double label_corrupt_prob = 0.0;        // per frame
  double feature_noise_sigma = 0.0;
  double confidence_miscalibration = 0.0; // stddev of the logit offset on corrupted frames

  void validate() const;
};

enum class ShapeFamily { ellipse, rectangle };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

/// Geometry and appearance knobs shared by every task of a stream.
struct FrameGeometry {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 8;        // image feature channels
  std::size_t slices = 8;          // frames per volume
  std::uint64_t world_seed = 0;    // shared foreground/background appearance
  double shared_weight = 0.6;      // weight of the shared appearance in each task's projection
  double task_weight = 1.0;        // weight of the task-specific appearance
  double texture_amplitude = 0.5;
};

/// Foreground/background appearance shared by every task (before task_weight mixing).
struct SharedAppearance {
  std::vector<double> fg, bg;
};
SharedAppearance shared_appearance(const FrameGeometry& geo);

struct TaskSpec {
  std::size_t task_id = 0;
  std::string modality_tag;
  std::uint64_t projection_seed = 0;
  ShapeFamily shape_family = ShapeFamily::ellipse;
  NoiseConfig noise;
};

struct Frame {
  Tensor features;            // [H, W, C]
  Tensor mask;                // [H, W], class labels (binary after preprocessing)
  std::int64_t slice_index = 0;
  bool is_corrupted = false;  // bookkeeping only, never read by the model path
  std::size_t task_id = 0;
  std::int64_t volume_id = -1;  // -1 marks a standalone 2D image

  std::size_t height() const { return mask.dim(0); }
  std::size_t width() const { return mask.dim(1); }
};

/// Frame t of the volume identified by `seed`. Deterministic in (task, t, seed).
/// The object drifts smoothly with t; with probability label_corrupt_prob the
/// label is damaged (shift or erosion) while the features still show the true object.
Frame gen_frame(const TaskSpec& task, std::int64_t t, std::uint64_t seed, const FrameGeometry& geo = {});

/// geo.slices consecutive frames of one volume.
std::vector<Frame> gen_volume(const TaskSpec& task, std::uint64_t seed, const FrameGeometry& geo = {});

/// The uncorrupted mask of frame t (what the features depict).
Tensor true_mask(const TaskSpec& task, std::int64_t t, std::uint64_t seed, const FrameGeometry& geo = {});

/// Drops frames without foreground, drops frames whose shortest edge is below
/// `min_edge_ratio` times the longest, and splits multi-class masks into one
/// binary frame per class (ascending label). Survivor order is preserved.
std::vector<Frame> preprocess_stream(const std::vector<Frame>& frames, double min_edge_ratio = 0.5);

/// Shuffles standalone 2D frames among their own positions; volume frames keep their slots.
std::vector<Frame> shuffle_standalone(std::vector<Frame> frames, std::uint64_t seed);

/// Half-open pixel box [x0, x1) x [y0, y1).
struct BoundingBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Tight box around the nonzero mask pixels; empty optional for an empty mask.
std::optional<BoundingBox> mask_bbox(const Tensor& mask);

}  // namespace samed
