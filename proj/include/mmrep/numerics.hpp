#pragma once

// Shared vector math, int8 quantization and ranking metrics.
//
// All functions here are pure and re-entrant.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mmrep/errors.hpp"

namespace mmrep {

using ItemId = std::uint64_t;

// Fixed-dimension real vector. When `normalized` is set the L2 norm is 1
// to within 1e-6.
struct Embedding {
  std::vector<double> values;
  bool normalized = false;

  Embedding() = default;
  explicit Embedding(std::vector<double> v, bool is_unit = false)
      : values(std::move(v)), normalized(is_unit) {}

  std::size_t dim() const noexcept { return values.size(); }

  // Throws kContract when a value is non-finite or the unit flag lies.
  void validate() const;

  // L2-normalized copy; throws kZeroVector on an all-zero input.
  static Embedding unit(std::span<const double> v);
};

// Symmetric per-vector int8 code: value_i ~= codes_i * scale.
struct QuantizedEmbedding {
  float scale = 1.0f;
  std::vector<std::int8_t> codes;

  std::size_t dim() const noexcept { return codes.size(); }
};

struct MetricReport {
  std::string name;
  double value = 0.0;
  std::size_t support = 0;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const Embedding& a, const Embedding& b);

// scale = max|x| / 127 (1 for the zero vector), codes rounded half away
// from zero and clamped to [-127, 127].
QuantizedEmbedding quantize(std::span<const double> values);
QuantizedEmbedding quantize(const Embedding& e);
Embedding dequantize(const QuantizedEmbedding& q);

// Mann-Whitney AUC with average ranks for ties. Throws kUndefinedMetric
// unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

enum class RecallMode {
  kTopKPrecision,  // |relevant ∩ top-k| / k
  kHitRecall,      // |relevant ∩ top-k| / |relevant|
};

std::string_view to_string(RecallMode mode);
RecallMode parse_recall_mode(std::string_view text);

// Queries with an empty relevance set are skipped. Ranked lists shorter
// than k count the missing positions as misses.
MetricReport recall_at_k(const std::vector<std::vector<ItemId>>& rankings,
                         const std::vector<std::unordered_set<ItemId>>& relevance,
                         std::size_t k, RecallMode mode = RecallMode::kTopKPrecision);

// Cutoffs used by every recall report: 1, 5, 10, 20, 50.
inline constexpr std::size_t kReportCutoffs[] = {1, 5, 10, 20, 50};

// One header row "Recall@1,Recall@5,..." and one row of percentages.
std::string format_recall_row(const std::vector<std::vector<ItemId>>& rankings,
                              const std::vector<std::unordered_set<ItemId>>& relevance,
                              RecallMode mode);

// 64-bit FNV-1a, used for state hashes and output fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size);
  template <typename T>
  void update_value(const T& value) {
    update(&value, sizeof(T));
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t hash_file(const std::string& path);

// splitmix64 finalizer; deterministic across platforms.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace mmrep
