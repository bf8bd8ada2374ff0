#pragma once

// Bounded store of (mask feature, positional encoding, IoU confidence, image
// embedding) tuples with confidence-similarity retrieval and confidence-gated
// replacement.
//
// Thread safety: const member functions are safe to call concurrently;
// insert_or_replace() needs exclusive access.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "samed/tensor.hpp"

namespace samed {

struct FeatureShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t numel() const { return channels * height * width; }
  Shape as_shape() const { return {channels, height, width}; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

struct MemoryEntry {
  Tensor mask_feature;         // F, [C,H,W]
  Tensor positional_encoding;  // PE, [C,H,W]
  double confidence = 0.0;     // raw IoU score y_hat (logit scale)
  Tensor image_embedding;      // E, [C,H,W]
  std::string source_tag;

  friend bool operator==(const MemoryEntry&, const MemoryEntry&) = default;
};

/// The (F, PE) pair handed to memory attention.
struct MemoryFeatures {
  Tensor mask_feature;
  Tensor positional_encoding;
};

struct RetrievalResult {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
  std::vector<MemoryFeatures> entries;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

enum class RetrievalScoring {
  confidence_similarity,  // s_i + sigmoid(y_hat_i)
  similarity_only,        // s_i
};

struct ReplaceOutcome {
  enum class Kind { appended, replaced, rejected };

  Kind kind = Kind::rejected;
  std::optional<std::size_t> index;        // slot written (appended/replaced) or best match (rejected)
  std::optional<double> old_confidence;    // set when replaced
  std::optional<double> similarity;        // s_max, absent when no comparison was made
};

struct MemoryStats {
  std::size_t count = 0;
  std::size_t capacity = 0;
  std::optional<double> min_confidence;
  std::optional<double> max_confidence;
  std::optional<double> mean_confidence;
  std::optional<double> mean_pairwise_similarity;  // over image embeddings, needs >= 2 entries
};

class MemoryFileError : public Error {
 public:
  enum class Kind { io, bad_magic, version_mismatch, truncated, shape_inconsistency };

  MemoryFileError(Kind kind, const std::string& detail);
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class MemoryBase {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  MemoryBase() = default;
  MemoryBase(std::size_t capacity, FeatureShape feature_shape);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool full() const { return entries_.size() >= capacity_; }
  const FeatureShape& feature_shape() const { return shape_; }
  std::span<const MemoryEntry> entries() const { return entries_; }
  const MemoryEntry& entry(std::size_t i) const { return entries_.at(i); }

  /// Top-K by descending score; ties go to the lower slot index.
  RetrievalResult retrieve_topk(const Tensor& query_embedding, std::size_t k,
                                RetrievalScoring scoring = RetrievalScoring::confidence_similarity) const;

  /// Uniform sample of min(K, size) slots without replacement, fixed by `seed`.
  /// Scores are filled in for diagnostics but play no part in the selection.
  RetrievalResult retrieve_random(const Tensor& query_embedding, std::size_t k, std::uint64_t seed) const;

  /// Appends below capacity. Once full, overwrites the slot whose mask feature
  /// is most similar to the new one if, and only if, the new confidence is
  /// strictly higher; otherwise the base is left untouched.
  ReplaceOutcome insert_or_replace(MemoryEntry entry);

  /// Score of slot i against a query under the given rule.
  double score(std::size_t i, const Tensor& query_embedding, RetrievalScoring scoring) const;

  MemoryStats stats() const;

  void save(const std::filesystem::path& path) const;
  static MemoryBase load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  static MemoryBase read(std::istream& in);

  friend bool operator==(const MemoryBase& a, const MemoryBase& b) {
    return a.capacity_ == b.capacity_ && a.shape_ == b.shape_ && a.entries_ == b.entries_;
  }

 private:
  void check_entry(const MemoryEntry& e) const;
  void check_query(const Tensor& q) const;
  RetrievalResult gather(std::vector<std::size_t> indices, std::vector<double> scores) const;

  std::size_t capacity_ = 0;
  FeatureShape shape_;
  std::vector<MemoryEntry> entries_;
  // Cached L2 norms of E_i and F_i, kept in lockstep with entries_.
  std::vector<double> embedding_norms_;
  std::vector<double> feature_norms_;
};

}  // namespace samed
