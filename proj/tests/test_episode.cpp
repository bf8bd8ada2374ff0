#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "samed/episode.hpp"
#include "samed/kernels.hpp"
#include "samed/report.hpp"

using namespace samed;

namespace {

EpisodeConfig small(std::size_t tasks = 2, std::size_t train = 2) {
  EpisodeConfig c;
  c.stream.num_tasks = tasks;
  c.stream.train_volumes = train;
  c.stream.eval_volumes = 1;
  c.stream.noise.label_corrupt_prob = 0.3;
  c.memory.capacity = 32;
  return c;
}

bool same_record(const FrameRecord& a, const FrameRecord& b) {
  return a.ordinal == b.ordinal && a.phase == b.phase && a.task == b.task && a.volume == b.volume &&
         a.slice == b.slice && a.corrupted == b.corrupted && a.dice == b.dice && a.iou == b.iou &&
         a.confidence == b.confidence && a.mask_digest == b.mask_digest && a.retrieved == b.retrieved &&
         a.update == b.update;
}

std::vector<std::size_t> stable_desc(const std::vector<double>& score, std::size_t k) {
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return score[x] > score[y]; });
  order.resize(std::min(k, order.size()));
  return order;
}

}  // namespace

TEST(Episode, SingleCleanTaskIsWellFormed) {
  for (RetrievalMode mode : {RetrievalMode::none, RetrievalMode::confidence_similarity}) {
    EpisodeConfig c = small(1, 3);
    c.stream.noise = {};
    c.memory.retrieval = mode;
    const EpisodeReport r = run_episode(c, 4);
    ASSERT_EQ(r.tasks.size(), 1u);
    ASSERT_EQ(r.snapshots.size(), 1u);
    EXPECT_EQ(r.tasks[0].train_frames, 24u);
    EXPECT_EQ(r.tasks[0].corrupted_frames, 0u);
    EXPECT_EQ(r.frames.size(), 24u + 8u + 8u);
    for (const auto& f : r.frames) {
      EXPECT_GE(f.dice, 0.0);
      EXPECT_LE(f.dice, 1.0);
      EXPECT_EQ(f.update.has_value(), f.phase == Phase::train);
      if (mode == RetrievalMode::none) EXPECT_TRUE(f.retrieved.empty());
    }
    EXPECT_GE(r.mean_dsc, 0.0);
    EXPECT_LE(r.mean_dsc, 1.0);
    EXPECT_DOUBLE_EQ(r.tasks[0].forgetting, r.tasks[0].immediate_dsc - r.tasks[0].final_dsc);
    EXPECT_EQ(r.snapshots[0].stats.count, 24u);
    const Json j = to_json(r, RunConfig{});
    for (const char* key : {"seed", "config", "mean_dsc", "mean_forgetting", "tasks", "memory_snapshots", "frames"})
      EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST(Episode, CapacityZeroMatchesNoRetrieval) {
  EpisodeConfig a = small();
  a.memory.capacity = 0;
  EpisodeConfig b = small();
  b.memory.retrieval = RetrievalMode::none;
  const EpisodeReport ra = run_episode(a, 11), rb = run_episode(b, 11);
  ASSERT_EQ(ra.frames.size(), rb.frames.size());
  for (std::size_t i = 0; i < ra.frames.size(); ++i) {
    EXPECT_EQ(ra.frames[i].mask_digest, rb.frames[i].mask_digest);
    EXPECT_EQ(ra.frames[i].dice, rb.frames[i].dice);
    EXPECT_EQ(ra.frames[i].confidence, rb.frames[i].confidence);
  }
  EXPECT_EQ(ra.mean_dsc, rb.mean_dsc);
  EXPECT_EQ(ra.mean_forgetting, rb.mean_forgetting);
}

TEST(Episode, Deterministic) {
  EpisodeConfig c = small();
  c.log_retrievals = true;
  c.stream.noise.confidence_miscalibration = 1.0;
  const RunConfig run;
  EXPECT_EQ(to_json(run_episode(c, 3), run).dump(), to_json(run_episode(c, 3), run).dump());
  c.memory.retrieval = RetrievalMode::random;
  EXPECT_EQ(to_json(run_episode(c, 3), run).dump(), to_json(run_episode(c, 3), run).dump());
}

TEST(Episode, PredictionsDependOnlyOnThePast) {
  // Truncate the stream at a volume boundary; everything before the cut must be unchanged.
  const EpisodeReport shorter = run_episode(small(1, 3), 8), longer = run_episode(small(1, 5), 8);
  std::size_t compared = 0;
  for (const auto& f : shorter.frames) {
    if (f.phase != Phase::train) break;
    ASSERT_TRUE(same_record(f, longer.frames[f.ordinal])) << "ordinal " << f.ordinal;
    ++compared;
  }
  EXPECT_EQ(compared, 24u);

  const EpisodeReport two = run_episode(small(2, 2), 9), three = run_episode(small(3, 2), 9);
  compared = 0;
  for (const auto& f : two.frames) {
    if (f.phase == Phase::eval_final) break;
    ASSERT_TRUE(same_record(f, three.frames[f.ordinal])) << "ordinal " << f.ordinal;
    ++compared;
  }
  EXPECT_EQ(compared, 2u * (16 + 8));
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_EQ(two.tasks[t].immediate_dsc, three.tasks[t].immediate_dsc);
    EXPECT_EQ(two.tasks[t].train_dsc, three.tasks[t].train_dsc);
  }
}

TEST(Episode, SimilarityOnlyRetrievalMatchesLogOracle) {
  EpisodeConfig c = small(2, 2);
  c.memory.capacity = 12;
  c.log_retrievals = true;
  for (bool conf : {false, true}) {
    c.memory.confidence_term = conf;
    const EpisodeReport r = run_episode(c, 5);
    ASSERT_FALSE(r.retrievals.empty());
    for (const auto& log : r.retrievals) {
      std::vector<double> score = log.similarities;
      if (conf)
        for (std::size_t i = 0; i < score.size(); ++i) score[i] += 1 / (1 + std::exp(-log.confidences[i]));
      ASSERT_EQ(log.indices, stable_desc(score, c.memory.k)) << "ordinal " << log.ordinal;
      for (std::size_t i = 0; i < log.indices.size(); ++i) EXPECT_NEAR(log.scores[i], score[log.indices[i]], 1e-12);
    }
  }
}

TEST(Episode, MemoryStaysWithinCapacityAndFreezesDuringEval) {
  EpisodeConfig c = small(3, 2);
  c.memory.capacity = 16;
  MemoryBase final_memory;
  const EpisodeReport r = run_episode(c, 2, &final_memory);
  for (const auto& s : r.snapshots) EXPECT_LE(s.stats.count, 16u);
  EXPECT_EQ(final_memory.size(), 16u);
  EXPECT_EQ(r.snapshots.back().appended, 16u);
  EXPECT_EQ(r.snapshots.back().appended + r.snapshots.back().replaced + r.snapshots.back().rejected, 3u * 16);
  for (const auto& f : r.frames)
    if (f.phase != Phase::train) EXPECT_FALSE(f.update);
}

TEST(Episode, CorruptedFramesGetLowerConfidence) {
  EpisodeConfig c;
  c.stream.noise.label_corrupt_prob = 0.3;
  c.memory.retrieval = RetrievalMode::none;
  std::vector<double> clean, corrupted;
  for (std::uint64_t seed : {0u, 1u}) {
    for (const auto& f : run_episode(c, seed).frames) {
      if (f.phase != Phase::train) continue;
      (f.corrupted ? corrupted : clean).push_back(f.confidence);
    }
  }
  ASSERT_GE(clean.size() + corrupted.size(), 1000u);
  ASSERT_GT(corrupted.size(), 100u);
  EXPECT_LT(mean(corrupted), mean(clean) - 1.0);
}

TEST(Episode, ConfigValidation) {
  EpisodeConfig c = small();
  c.stream.num_tasks = 0;
  EXPECT_THROW(run_episode(c, 0), Error);
  c = small();
  c.memory.k = 0;
  EXPECT_THROW(run_episode(c, 0), Error);
  c = small();
  c.geometry.height = 30;
  EXPECT_THROW(run_episode(c, 0), Error);
  c = small();
  c.stream.noise.label_corrupt_prob = 2;
  EXPECT_THROW(run_episode(c, 0), Error);
}

TEST(Episode, TasksCycleModalitiesAndShapes) {
  StreamConfig s;
  s.num_tasks = 6;
  const auto tasks = make_tasks(s, 1);
  EXPECT_EQ(tasks[0].modality_tag, "ct");
  EXPECT_EQ(tasks[5].modality_tag, "ct");
  EXPECT_EQ(tasks[1].shape_family, ShapeFamily::rectangle);
  EXPECT_NE(tasks[0].projection_seed, tasks[1].projection_seed);
  EXPECT_EQ(make_tasks(s, 1)[3].projection_seed, tasks[3].projection_seed);
}

TEST(Episode, Summaries) {
  EXPECT_EQ(mean({}), 0.0);
  EXPECT_EQ(mean({1, 2, 3}), 2.0);
  EXPECT_EQ(stddev({2, 4}), 1.0);
  EXPECT_NE(mask_digest(Tensor(Shape{2, 2})), mask_digest(Tensor(Shape{2, 2}, 1.0)));
}
