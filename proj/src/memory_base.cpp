#include "samed/memory_base.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "samed/kernels.hpp"
#include "samed/random.hpp"

namespace samed {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'M', 'B', '2'};

const char* kind_name(MemoryFileError::Kind k) {
  switch (k) {
    case MemoryFileError::Kind::io: return "io error";
    case MemoryFileError::Kind::bad_magic: return "bad magic";
    case MemoryFileError::Kind::version_mismatch: return "version mismatch";
    case MemoryFileError::Kind::truncated: return "truncated file";
    case MemoryFileError::Kind::shape_inconsistency: return "shape inconsistency";
  }
  return "unknown";
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b.data(), b.size());
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(b.data(), b.size());
}

void put_tensor(std::ostream& out, const Tensor& t) {
  for (double v : t.data()) put_f64(out, v);
}

std::uint32_t to_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw Error(std::string(what) + " does not fit the 32-bit file field");
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw MemoryFileError(MemoryFileError::Kind::truncated, std::string("while reading ") + what);
    }
  }

  std::uint32_t u32(const char* what) {
    std::array<unsigned char, 4> b;
    bytes(reinterpret_cast<char*>(b.data()), b.size(), what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  double f64(const char* what) {
    std::array<unsigned char, 8> b;
    bytes(reinterpret_cast<char*>(b.data()), b.size(), what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }

  Tensor tensor(const Shape& shape, const char* what) {
    Tensor t(shape);
    for (auto& v : t.data()) v = f64(what);
    return t;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
};

}  // namespace

MemoryFileError::MemoryFileError(Kind kind, const std::string& detail)
    : Error(std::string(kind_name(kind)) + (detail.empty() ? "" : ": " + detail)), kind_(kind) {}

MemoryBase::MemoryBase(std::size_t capacity, FeatureShape feature_shape)
    : capacity_(capacity), shape_(feature_shape) {
  entries_.reserve(std::min<std::size_t>(capacity, 4096));
}

void MemoryBase::check_entry(const MemoryEntry& e) const {
  const Shape s = shape_.as_shape();
  if (e.mask_feature.shape() != s) throw ShapeError("memory entry mask feature", e.mask_feature.shape(), s);
  if (e.positional_encoding.shape() != s) {
    throw ShapeError("memory entry positional encoding", e.positional_encoding.shape(), s);
  }
  if (e.image_embedding.shape() != s) throw ShapeError("memory entry image embedding", e.image_embedding.shape(), s);
  if (!std::isfinite(e.confidence)) throw Error("memory entry confidence must be finite");
}

void MemoryBase::check_query(const Tensor& q) const {
  if (q.shape() != shape_.as_shape()) throw ShapeError("retrieval query", q.shape(), shape_.as_shape());
}

double MemoryBase::score(std::size_t i, const Tensor& query, RetrievalScoring scoring) const {
  const double s = cosine_similarity(entries_.at(i).image_embedding, query);
  return scoring == RetrievalScoring::confidence_similarity ? s + sigmoid(entries_[i].confidence) : s;
}

RetrievalResult MemoryBase::gather(std::vector<std::size_t> indices, std::vector<double> scores) const {
  RetrievalResult r;
  r.entries.reserve(indices.size());
  for (auto i : indices) r.entries.push_back({entries_[i].mask_feature, entries_[i].positional_encoding});
  r.indices = std::move(indices);
  r.scores = std::move(scores);
  return r;
}

RetrievalResult MemoryBase::retrieve_topk(const Tensor& query, std::size_t k, RetrievalScoring scoring) const {
  check_query(query);
  const std::size_t n = entries_.size();
  if (n == 0 || k == 0) return {};

  const double qn = l2_norm(query.data());
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    if (qn >= kZeroNorm && embedding_norms_[i] >= kZeroNorm) {
      s = std::clamp(dot(entries_[i].image_embedding.data(), query.data()) / (embedding_norms_[i] * qn), -1.0, 1.0);
    }
    scores[i] = scoring == RetrievalScoring::confidence_similarity ? s + sigmoid(entries_[i].confidence) : s;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  order.resize(take);
  std::vector<double> picked(take);
  for (std::size_t i = 0; i < take; ++i) picked[i] = scores[order[i]];
  return gather(std::move(order), std::move(picked));
}

RetrievalResult MemoryBase::retrieve_random(const Tensor& query, std::size_t k, std::uint64_t seed) const {
  check_query(query);
  const std::size_t n = entries_.size();
  const std::size_t take = std::min(k, n);
  if (take == 0) return {};

  // Partial Fisher-Yates: the first `take` slots of a uniformly shuffled index list.
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(take);
  std::vector<double> scores(take);
  for (std::size_t i = 0; i < take; ++i) scores[i] = score(pool[i], query, RetrievalScoring::confidence_similarity);
  return gather(std::move(pool), std::move(scores));
}

ReplaceOutcome MemoryBase::insert_or_replace(MemoryEntry entry) {
  check_entry(entry);
  ReplaceOutcome out;
  if (capacity_ == 0) {
    out.kind = ReplaceOutcome::Kind::rejected;
    return out;
  }
  const double e_norm = l2_norm(entry.image_embedding.data());
  const double f_norm = l2_norm(entry.mask_feature.data());
  if (entries_.size() < capacity_) {
    out.kind = ReplaceOutcome::Kind::appended;
    out.index = entries_.size();
    entries_.push_back(std::move(entry));
    embedding_norms_.push_back(e_norm);
    feature_norms_.push_back(f_norm);
    return out;
  }

  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    double s = 0.0;
    if (f_norm >= kZeroNorm && feature_norms_[i] >= kZeroNorm) {
      s = std::clamp(dot(entries_[i].mask_feature.data(), entry.mask_feature.data()) / (feature_norms_[i] * f_norm),
                     -1.0, 1.0);
    }
    if (s > best_sim) {
      best_sim = s;
      best = i;
    }
  }
  out.index = best;
  out.similarity = best_sim;
  if (entries_[best].confidence < entry.confidence) {
    out.kind = ReplaceOutcome::Kind::replaced;
    out.old_confidence = entries_[best].confidence;
    entries_[best] = std::move(entry);
    embedding_norms_[best] = e_norm;
    feature_norms_[best] = f_norm;
  } else {
    out.kind = ReplaceOutcome::Kind::rejected;
  }
  return out;
}

MemoryStats MemoryBase::stats() const {
  MemoryStats st;
  st.count = entries_.size();
  st.capacity = capacity_;
  if (entries_.empty()) return st;

  double lo = entries_[0].confidence, hi = lo, sum = 0.0;
  for (const auto& e : entries_) {
    lo = std::min(lo, e.confidence);
    hi = std::max(hi, e.confidence);
    sum += e.confidence;
  }
  st.min_confidence = lo;
  st.max_confidence = hi;
  st.mean_confidence = sum / static_cast<double>(entries_.size());

  if (entries_.size() >= 2) {
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      for (std::size_t j = i + 1; j < entries_.size(); ++j) {
        double s = 0.0;
        if (embedding_norms_[i] >= kZeroNorm && embedding_norms_[j] >= kZeroNorm) {
          s = std::clamp(dot(entries_[i].image_embedding.data(), entries_[j].image_embedding.data()) /
                             (embedding_norms_[i] * embedding_norms_[j]),
                         -1.0, 1.0);
        }
        acc += s;
        ++pairs;
      }
    st.mean_pairwise_similarity = acc / static_cast<double>(pairs);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Persistence. Layout (little-endian):
//   "SMB2" u32 version u32 capacity u32 count u32 C u32 H u32 W
//   count x { f64 y_hat, u32 tag_len, tag bytes, F[CHW], PE[CHW], E[CHW] }

void MemoryBase::write(std::ostream& out) const {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kFormatVersion);
  put_u32(out, to_u32(capacity_, "capacity"));
  put_u32(out, to_u32(entries_.size(), "count"));
  put_u32(out, to_u32(shape_.channels, "channels"));
  put_u32(out, to_u32(shape_.height, "height"));
  put_u32(out, to_u32(shape_.width, "width"));
  for (const auto& e : entries_) {
    put_f64(out, e.confidence);
    put_u32(out, to_u32(e.source_tag.size(), "tag length"));
    out.write(e.source_tag.data(), static_cast<std::streamsize>(e.source_tag.size()));
    put_tensor(out, e.mask_feature);
    put_tensor(out, e.positional_encoding);
    put_tensor(out, e.image_embedding);
  }
  if (!out) throw MemoryFileError(MemoryFileError::Kind::io, "write failed");
}

MemoryBase MemoryBase::read(std::istream& in) {
  Reader r(in);
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kMagic) {
    throw MemoryFileError(MemoryFileError::Kind::bad_magic, "expected \"SMB2\"");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion) {
    throw MemoryFileError(MemoryFileError::Kind::version_mismatch,
                          "file version " + std::to_string(version) + ", supported " +
                              std::to_string(kFormatVersion));
  }
  const std::uint32_t capacity = r.u32("capacity");
  const std::uint32_t count = r.u32("count");
  FeatureShape shape{r.u32("channels"), r.u32("height"), r.u32("width")};
  if (count > capacity) {
    throw MemoryFileError(MemoryFileError::Kind::shape_inconsistency,
                          "count " + std::to_string(count) + " exceeds capacity " + std::to_string(capacity));
  }
  if (count > 0 && shape.numel() == 0) {
    throw MemoryFileError(MemoryFileError::Kind::shape_inconsistency, "entries declared with an empty feature shape");
  }

  MemoryBase base(capacity, shape);
  const Shape s = shape.as_shape();
  for (std::uint32_t i = 0; i < count; ++i) {
    MemoryEntry e;
    e.confidence = r.f64("confidence");
    const std::uint32_t tag_len = r.u32("tag length");
    e.source_tag.resize(tag_len);
    r.bytes(e.source_tag.data(), tag_len, "tag");
    e.mask_feature = r.tensor(s, "mask feature");
    e.positional_encoding = r.tensor(s, "positional encoding");
    e.image_embedding = r.tensor(s, "image embedding");
    if (!std::isfinite(e.confidence)) {
      throw MemoryFileError(MemoryFileError::Kind::shape_inconsistency,
                            "entry " + std::to_string(i) + " has a non-finite confidence");
    }
    base.insert_or_replace(std::move(e));
  }
  if (!r.at_end()) {
    throw MemoryFileError(MemoryFileError::Kind::shape_inconsistency, "trailing bytes after the last entry");
  }
  return base;
}

void MemoryBase::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MemoryFileError(MemoryFileError::Kind::io, "cannot open " + path.string() + " for writing");
  write(out);
}

MemoryBase MemoryBase::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MemoryFileError(MemoryFileError::Kind::io, "cannot open " + path.string());
  return read(in);
}

}  // namespace samed
