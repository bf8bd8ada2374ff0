#pragma once

// Continual-segmentation episodes: tasks are streamed one after another
// through encode -> retrieve -> fuse -> predict -> memory update, then each
// task's held-out split is scored right after its phase and again at the end.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "samed/memory_base.hpp"
#include "samed/pipeline.hpp"
#include "samed/synthetic.hpp"

namespace samed {

enum class RetrievalMode { none, random, confidence_similarity };

std::string to_string(RetrievalMode m);
RetrievalMode retrieval_mode_from_string(const std::string& s);

struct MemoryConfig {
  std::size_t capacity = 640;
  std::size_t k = 4;
  RetrievalMode retrieval = RetrievalMode::confidence_similarity;
  bool confidence_term = true;  // off: rank by similarity alone
};

struct StreamConfig {
  std::size_t num_tasks = 10;
  std::size_t train_volumes = 8;  // per task, streamed into memory
  std::size_t eval_volumes = 2;   // per task, clean labels, memory frozen
  NoiseConfig noise;
};

struct EpisodeConfig {
  FrameGeometry geometry;
  ModelConfig model;
  MemoryConfig memory;
  StreamConfig stream;
  bool use_adapter = true;
  bool record_frames = true;
  bool log_retrievals = false;

  void validate() const;
};

/// Task i gets projection seed mix(seed, i); shape families alternate and modality tags cycle.
std::vector<TaskSpec> make_tasks(const StreamConfig& stream, std::uint64_t seed);

enum class Phase { train, eval_immediate, eval_final };
std::string to_string(Phase p);

struct FrameRecord {
  std::size_t ordinal = 0;  // position in the whole episode
  Phase phase = Phase::train;
  std::size_t task = 0;
  std::int64_t volume = 0;
  std::int64_t slice = 0;
  bool corrupted = false;
  double dice = 0;
  double iou = 0;
  double confidence = 0;
  std::uint64_t mask_digest = 0;
  std::vector<std::size_t> retrieved;
  std::optional<ReplaceOutcome::Kind> update;  // train frames only
};

struct RetrievalLog {
  std::size_t ordinal = 0;
  std::vector<std::size_t> indices;
  std::vector<double> scores;
  std::vector<double> similarities;  // cos(E_i, E_query) for every slot at query time
  std::vector<double> confidences;   // y_hat_i for every slot at query time
};

struct TaskResult {
  std::size_t task_id = 0;
  std::string modality_tag;
  double train_dsc = 0;
  double immediate_dsc = 0;
  double immediate_dsc_std = 0;
  double final_dsc = 0;
  double final_dsc_std = 0;
  double forgetting = 0;  // immediate - final
  std::size_t train_frames = 0;
  std::size_t corrupted_frames = 0;
};

struct MemorySnapshot {
  std::size_t after_task = 0;
  MemoryStats stats;
  std::size_t appended = 0;
  std::size_t replaced = 0;
  std::size_t rejected = 0;
};

struct EpisodeReport {
  std::uint64_t seed = 0;
  EpisodeConfig config;
  std::vector<TaskResult> tasks;
  std::vector<MemorySnapshot> snapshots;
  std::vector<FrameRecord> frames;
  std::vector<RetrievalLog> retrievals;
  double mean_dsc = 0;  // mean over tasks of the final DSC
  double mean_forgetting = 0;
};

EpisodeReport run_episode(const EpisodeConfig& cfg, std::uint64_t seed, MemoryBase* final_memory = nullptr);

/// 64-bit FNV-1a over the mask as one byte per pixel.
std::uint64_t mask_digest(const Tensor& mask);

double mean(const std::vector<double>& v);
double stddev(const std::vector<double>& v);  // population

}  // namespace samed
