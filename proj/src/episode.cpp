#include "samed/episode.hpp"

#include <cmath>
#include <numeric>

#include "samed/kernels.hpp"
#include "samed/memory_attention.hpp"
#include "samed/metrics.hpp"
#include "samed/random.hpp"

namespace samed {

std::string to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::none: return "none";
    case RetrievalMode::random: return "random";
    case RetrievalMode::confidence_similarity: return "confidence_similarity";
  }
  return "?";
}

RetrievalMode retrieval_mode_from_string(const std::string& s) {
  if (s == "none") return RetrievalMode::none;
  if (s == "random") return RetrievalMode::random;
  if (s == "confidence_similarity") return RetrievalMode::confidence_similarity;
  throw Error("unknown retrieval mode '" + s + "' (expected none|random|confidence_similarity)");
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::train: return "train";
    case Phase::eval_immediate: return "eval_immediate";
    case Phase::eval_final: return "eval_final";
  }
  return "?";
}

void EpisodeConfig::validate() const {
  model.validate();
  stream.noise.validate();
  if (geometry.height == 0 || geometry.width == 0 || geometry.channels == 0 || geometry.slices == 0) {
    throw Error("geometry sizes must be positive");
  }
  if (geometry.height % model.patch != 0 || geometry.width % model.patch != 0) {
    throw Error("geometry.height and geometry.width must be multiples of model.patch");
  }
  if (stream.num_tasks == 0) throw Error("stream.num_tasks must be >= 1");
  if (stream.eval_volumes == 0) throw Error("stream.eval_volumes must be >= 1");
  if (memory.k == 0 && memory.retrieval != RetrievalMode::none) throw Error("memory.k must be >= 1");
}

std::vector<TaskSpec> make_tasks(const StreamConfig& stream, std::uint64_t seed) {
  static const char* kModalities[] = {"ct", "mri", "us", "xray", "endo"};
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < stream.num_tasks; ++i) {
    TaskSpec t;
    t.task_id = i;
    t.modality_tag = kModalities[i % std::size(kModalities)];
    t.projection_seed = mix_seed(seed, i);
    t.shape_family = i % 2 == 0 ? ShapeFamily::ellipse : ShapeFamily::rectangle;
    t.noise = stream.noise;
    tasks.push_back(t);
  }
  return tasks;
}

std::uint64_t mask_digest(const Tensor& mask) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (double v : mask.data()) {
    h ^= static_cast<std::uint64_t>(v != 0.0);
    h *= 0x100000001b3ull;
  }
  return h;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

namespace {

std::uint64_t volume_seed(std::uint64_t seed, std::size_t task, std::uint64_t split, std::size_t v) {
  return mix_seed(mix_seed(mix_seed(seed, task), split), v);
}

class Runner {
 public:
  Runner(const EpisodeConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), model_(cfg.model, cfg.geometry), memory_(cfg.memory.capacity, model_.feature_shape()) {
    report_.seed = seed;
    report_.config = cfg;
  }

  EpisodeReport run(MemoryBase* final_memory) {
    const auto tasks = make_tasks(cfg_.stream, seed_);
    std::vector<std::vector<double>> immediate(tasks.size());
    for (const auto& task : tasks) {
      TaskResult r;
      r.task_id = task.task_id;
      r.modality_tag = task.modality_tag;
      std::vector<double> train_dsc;
      for (std::size_t v = 0; v < cfg_.stream.train_volumes; ++v) {
        const auto frames = preprocess_stream(gen_volume(task, volume_seed(seed_, task.task_id, 1, v), cfg_.geometry));
        for (const auto& rec : process_volume(frames, Phase::train, static_cast<std::int64_t>(v))) {
          train_dsc.push_back(rec.dice);
          r.corrupted_frames += rec.corrupted;
        }
      }
      r.train_frames = train_dsc.size();
      r.train_dsc = mean(train_dsc);
      immediate[task.task_id] = evaluate(task, Phase::eval_immediate);
      r.immediate_dsc = mean(immediate[task.task_id]);
      r.immediate_dsc_std = stddev(immediate[task.task_id]);
      report_.tasks.push_back(r);
      report_.snapshots.push_back({task.task_id, memory_.stats(), appended_, replaced_, rejected_});
    }
    std::vector<double> finals, forgetting;
    for (const auto& task : tasks) {
      const auto dsc = evaluate(task, Phase::eval_final);
      TaskResult& r = report_.tasks[task.task_id];
      r.final_dsc = mean(dsc);
      r.final_dsc_std = stddev(dsc);
      r.forgetting = r.immediate_dsc - r.final_dsc;
      finals.push_back(r.final_dsc);
      forgetting.push_back(r.forgetting);
    }
    report_.mean_dsc = mean(finals);
    report_.mean_forgetting = mean(forgetting);
    if (final_memory) *final_memory = memory_;
    return std::move(report_);
  }

 private:
  // Held-out split: clean labels, memory read but never written.
  std::vector<double> evaluate(const TaskSpec& task, Phase phase) {
    TaskSpec clean = task;
    clean.noise.label_corrupt_prob = 0.0;
    std::vector<double> out;
    for (std::size_t v = 0; v < cfg_.stream.eval_volumes; ++v) {
      const auto frames = preprocess_stream(gen_volume(clean, volume_seed(seed_, task.task_id, 2, v), cfg_.geometry));
      for (const auto& rec : process_volume(frames, phase, static_cast<std::int64_t>(v))) out.push_back(rec.dice);
    }
    return out;
  }

  std::vector<FrameRecord> process_volume(const std::vector<Frame>& frames, Phase phase, std::int64_t volume) {
    std::vector<FrameRecord> out;
    if (frames.empty()) return out;
    const auto encoded = model_.encode(frames, cfg_.use_adapter);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      out.push_back(process_frame(frames[i], encoded[i], phase, volume));
    }
    return out;
  }

  FrameRecord process_frame(const Frame& frame, const Encoded& enc, Phase phase, std::int64_t volume) {
    FrameRecord rec;
    rec.ordinal = ordinal_++;
    rec.phase = phase;
    rec.task = frame.task_id;
    rec.volume = volume;
    rec.slice = frame.slice_index;
    rec.corrupted = frame.is_corrupted;

    RetrievalResult retrieved = retrieve(enc.embedding, rec.ordinal);
    rec.retrieved = retrieved.indices;
    const Tensor cond = retrieved.empty() ? enc.embedding
                                          : fuse(enc.embedding, enc.positional_encoding, retrieved.entries,
                                                 model_.fusion());

    const auto prompt = encode_prompt(box_prompt_from_mask(frame.mask, cfg_.model.box_margin), frame.height(),
                                      frame.width());
    const Prediction pred = model_.decoder().predict(cond, prompt, frame, cfg_.stream.noise.confidence_miscalibration,
                                                     mix_seed(seed_ ^ 0xc0f, rec.ordinal));
    rec.dice = dice(pred.mask, frame.mask);
    rec.iou = pred.iou;
    rec.confidence = pred.confidence;
    rec.mask_digest = mask_digest(pred.mask);

    if (phase == Phase::train) {
      MemoryEntry e{model_.mask_feature(enc.embedding, frame.mask), enc.positional_encoding, pred.confidence,
                    enc.embedding,
                    "task" + std::to_string(frame.task_id) + "/v" + std::to_string(volume) + "/s" +
                        std::to_string(frame.slice_index)};
      const ReplaceOutcome o = memory_.insert_or_replace(std::move(e));
      rec.update = o.kind;
      switch (o.kind) {
        case ReplaceOutcome::Kind::appended: ++appended_; break;
        case ReplaceOutcome::Kind::replaced: ++replaced_; break;
        case ReplaceOutcome::Kind::rejected: ++rejected_; break;
      }
    }
    if (cfg_.record_frames) report_.frames.push_back(rec);
    return rec;
  }

  RetrievalResult retrieve(const Tensor& query, std::size_t ordinal) {
    const MemoryConfig& m = cfg_.memory;
    if (m.retrieval == RetrievalMode::none || memory_.empty()) return {};
    RetrievalResult r;
    if (m.retrieval == RetrievalMode::random) {
      r = memory_.retrieve_random(query, m.k, mix_seed(seed_, ordinal));
    } else {
      r = memory_.retrieve_topk(query, m.k,
                                m.confidence_term ? RetrievalScoring::confidence_similarity
                                                  : RetrievalScoring::similarity_only);
    }
    if (cfg_.log_retrievals) {
      RetrievalLog log{ordinal, r.indices, r.scores, {}, {}};
      for (std::size_t i = 0; i < memory_.size(); ++i) {
        log.similarities.push_back(memory_.score(i, query, RetrievalScoring::similarity_only));
        log.confidences.push_back(memory_.entry(i).confidence);
      }
      report_.retrievals.push_back(std::move(log));
    }
    return r;
  }

  const EpisodeConfig& cfg_;
  std::uint64_t seed_;
  SegmentationModel model_;
  MemoryBase memory_;
  EpisodeReport report_;
  std::size_t ordinal_ = 0;
  std::size_t appended_ = 0, replaced_ = 0, rejected_ = 0;
};

}  // namespace

EpisodeReport run_episode(const EpisodeConfig& cfg, std::uint64_t seed, MemoryBase* final_memory) {
  cfg.validate();
  Runner runner(cfg, seed);
  return runner.run(final_memory);
}

}  // namespace samed
