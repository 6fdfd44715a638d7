#pragma once

// Retrieval evaluation, the exchange-rate metric and parameter sweeps.
//
// Exchange rate convention: rate = (dAUC * 1000) / (dMetric * 100) with the
// intermediate metric given as a fraction, i.e. AUC gain in permille per
// percentage point of the intermediate metric. +1 point of recall buying
// +0.001 AUC is a rate of 1.0.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "mmrep/corpus.hpp"
#include "mmrep/encoder.hpp"
#include "mmrep/numerics.hpp"
#include "mmrep/versioned_table.hpp"

namespace mmrep {

struct CandidateSet {
  std::vector<ItemId> ids;
  Eigen::MatrixXd emb;  // d x n, unit columns
};

// Every product rendered in `view`.
CandidateSet candidates_from_encoder(const EncoderParams& params, const Corpus& corpus, ItemView view);
// Throws kContract for an id the table cannot resolve.
CandidateSet candidates_from_table(const VersionedTable& table, const std::vector<ItemId>& ids);
CandidateSet all_products_from_table(const VersionedTable& table, const Corpus& corpus);

Eigen::MatrixXd encode_queries(const EncoderParams& params, const Corpus& corpus, const std::vector<QueryId>& ids);

struct Retrieval {
  std::vector<std::vector<ItemId>> rankings;
  bool k_exceeds_candidates = false;  // full rankings were returned
};

// Descending cosine, ascending id on ties. Query columns need not be unit.
Retrieval retrieve(const Eigen::MatrixXd& queries, const CandidateSet& candidates, std::size_t k);

// Ground truth: a query is relevant to every product of its intent category.
std::vector<std::unordered_set<ItemId>> category_relevance(const Corpus& corpus, const std::vector<QueryId>& queries);

std::vector<QueryId> held_out_queries(const Corpus& corpus, std::uint64_t seed, double fraction,
                                      std::optional<QueryModality> modality = std::nullopt);

struct MetricPoint {
  double metric = 0.0;  // intermediate metric as a fraction, e.g. Recall@1
  double auc = 0.5;
};

struct ExchangeRateReport {
  MetricPoint baseline;
  MetricPoint treatment;
  double delta_metric_points = 0.0;  // percentage points
  double delta_auc = 0.0;
  double rate = 0.0;

  static std::string csv_header();
  std::string csv_row() const;
};

// Throws kUndefinedMetric when the intermediate metric does not change.
ExchangeRateReport exchange_rate(const MetricPoint& baseline, const MetricPoint& treatment);

enum class SweepAxis { kNegatives, kSequenceLength, kDatasetFraction };

std::string_view to_string(SweepAxis axis);
SweepAxis parse_axis(std::string_view text);

// Negatives axis values are pool depths in global batches (k + 1): 1 is
// in-batch only. Dataset fraction stands in for a training-token budget.
struct SweepSpec {
  SweepAxis axis = SweepAxis::kNegatives;
  std::vector<double> grid;
  std::vector<std::uint64_t> seeds{7};

  void validate() const;
};

struct SweepRow {
  double value = 0.0;
  MetricPoint mean;                    // over seeds that succeeded
  std::vector<MetricPoint> per_seed;   // seed order
  std::optional<double> rate_vs_previous;
  // Present when the sweep also evaluates a reference checkpoint per point.
  std::optional<MetricPoint> baseline_mean;
  std::optional<double> rate_vs_baseline;
  std::size_t failures = 0;
  std::string error;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::kNegatives;
  std::vector<SweepRow> rows;

  std::string to_csv() const;
  std::string summary() const;
};

// Evaluates one grid point for one seed; throwing marks the point failed.
using SweepPoint = std::function<MetricPoint(double value, std::uint64_t seed)>;

// With `baseline`, each point also evaluates a reference checkpoint and
// reports the exchange rate from it to the treatment at that point.
SweepTable run_sweep(const SweepSpec& spec, const SweepPoint& evaluate, const SweepPoint& baseline = {});

void write_text(const std::string& path, const std::string& text);

}  // namespace mmrep
