#include "mmrep/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace mmrep {

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kContract: return "contract";
    case ErrorCategory::kZeroVector: return "zero-vector";
    case ErrorCategory::kUndefinedMetric: return "undefined-metric";
    case ErrorCategory::kDataIntegrity: return "data-integrity";
    case ErrorCategory::kIntegrity: return "integrity";
    case ErrorCategory::kStaleDelta: return "stale-delta";
    case ErrorCategory::kDivergence: return "divergence";
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kBackpressure: return "backpressure";
  }
  return "unknown";
}

void Embedding::validate() const {
  require(!values.empty(), "embedding has zero dimension");
  for (double v : values) require(std::isfinite(v), "embedding value is not finite");
  if (normalized) {
    require(std::abs(l2_norm(values) - 1.0) <= 1e-6, "embedding flagged unit but norm != 1");
  }
}

Embedding Embedding::unit(std::span<const double> v) {
  const double n = l2_norm(v);
  if (n == 0.0) fail(ErrorCategory::kZeroVector, "cannot normalize a zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return Embedding(std::move(out), true);
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dimension mismatch in dot product");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dimension mismatch in cosine similarity");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) fail(ErrorCategory::kZeroVector, "cosine similarity of a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  return cosine_similarity(a.values, b.values);
}

QuantizedEmbedding quantize(std::span<const double> values) {
  QuantizedEmbedding q;
  q.codes.assign(values.size(), 0);
  double max_abs = 0.0;
  for (double v : values) {
    require(std::isfinite(v), "quantize: non-finite input");
    max_abs = std::max(max_abs, std::abs(v));
  }
  if (max_abs == 0.0) {
    q.scale = 1.0f;
    return q;
  }
  q.scale = static_cast<float>(max_abs / 127.0);
  if (q.scale <= 0.0f) q.scale = std::numeric_limits<float>::denorm_min();
  const double scale = q.scale;
  for (std::size_t i = 0; i < values.size(); ++i) {
    // std::round is half-away-from-zero.
    const double code = std::clamp(std::round(values[i] / scale), -127.0, 127.0);
    q.codes[i] = static_cast<std::int8_t>(code);
  }
  return q;
}

QuantizedEmbedding quantize(const Embedding& e) { return quantize(std::span<const double>(e.values)); }

Embedding dequantize(const QuantizedEmbedding& q) {
  std::vector<double> out(q.codes.size());
  const double scale = q.scale;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(q.codes[i]) * scale;
  return Embedding(std::move(out));
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, "auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) fail(ErrorCategory::kUndefinedMetric, "auc needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of average ranks (1-based) of the positives.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::string_view to_string(RecallMode mode) {
  return mode == RecallMode::kTopKPrecision ? "top-k-precision" : "hit-recall";
}

RecallMode parse_recall_mode(std::string_view text) {
  if (text == "top-k-precision") return RecallMode::kTopKPrecision;
  if (text == "hit-recall") return RecallMode::kHitRecall;
  fail(ErrorCategory::kContract, "unknown recall mode: " + std::string(text));
}

MetricReport recall_at_k(const std::vector<std::vector<ItemId>>& rankings,
                         const std::vector<std::unordered_set<ItemId>>& relevance,
                         std::size_t k, RecallMode mode) {
  require(k >= 1, "recall_at_k: k must be >= 1");
  require(rankings.size() == relevance.size(), "recall_at_k: rankings/relevance size mismatch");
  double total = 0.0;
  std::size_t support = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& rel = relevance[q];
    if (rel.empty()) continue;
    const auto& ranked = rankings[q];
    const std::size_t depth = std::min(k, ranked.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < depth; ++i) hits += rel.count(ranked[i]);
    const double denom = mode == RecallMode::kTopKPrecision ? static_cast<double>(k)
                                                            : static_cast<double>(rel.size());
    total += static_cast<double>(hits) / denom;
    ++support;
  }
  if (support == 0) fail(ErrorCategory::kUndefinedMetric, "recall_at_k: no query has a relevant item");
  MetricReport report;
  report.name = "Recall@" + std::to_string(k);
  report.value = total / static_cast<double>(support);
  report.support = support;
  return report;
}

std::string format_recall_row(const std::vector<std::vector<ItemId>>& rankings,
                              const std::vector<std::unordered_set<ItemId>>& relevance,
                              RecallMode mode) {
  std::ostringstream header;
  std::ostringstream row;
  bool first = true;
  for (std::size_t k : kReportCutoffs) {
    const MetricReport r = recall_at_k(rankings, relevance, k, mode);
    if (!first) {
      header << ',';
      row << ',';
    }
    first = false;
    header << r.name;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * r.value);
    row << buf;
  }
  return header.str() + "\n" + row.str() + "\n";
}

void Fnv1a::update(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= bytes[i];
    state_ *= 0x100000001b3ULL;
  }
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::kIo, "cannot open " + path);
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.digest();
}

}  // namespace mmrep
