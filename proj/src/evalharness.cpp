#include "mmrep/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mmrep/errors.hpp"

namespace mmrep {

namespace {

void set_unit_column(Eigen::MatrixXd& m, Eigen::Index c, std::span<const double> v) {
  const Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
  const double n = x.norm();
  if (n == 0.0) fail(ErrorCategory::kZeroVector, "candidate embedding is all zero");
  m.col(c) = x / n;
}

MetricPoint mean_of(const std::vector<MetricPoint>& points) {
  MetricPoint m{0.0, 0.0};
  for (const auto& p : points) {
    m.metric += p.metric;
    m.auc += p.auc;
  }
  m.metric /= static_cast<double>(points.size());
  m.auc /= static_cast<double>(points.size());
  return m;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

CandidateSet candidates_from_encoder(const EncoderParams& params, const Corpus& corpus, ItemView view) {
  CandidateSet c;
  const auto n = static_cast<Eigen::Index>(corpus.products.size());
  c.ids.resize(corpus.products.size());
  c.emb.resize(params.dims.d_full, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = corpus.products[static_cast<std::size_t>(i)];
    c.ids[static_cast<std::size_t>(i)] = p.product_id;
    const ForwardCache fc = forward(params, render_item(p, view, corpus.config));
    c.emb.col(i) = fc.output;
  }
  return c;
}

CandidateSet candidates_from_table(const VersionedTable& table, const std::vector<ItemId>& ids) {
  CandidateSet c;
  c.ids = ids;
  c.emb.resize(table.dim(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto e = table.get(ids[i]);
    if (!e) fail(ErrorCategory::kContract, "retrieve: unresolvable id " + std::to_string(ids[i]));
    set_unit_column(c.emb, static_cast<Eigen::Index>(i), e->values);
  }
  return c;
}

CandidateSet all_products_from_table(const VersionedTable& table, const Corpus& corpus) {
  std::vector<ItemId> ids(corpus.products.size());
  std::iota(ids.begin(), ids.end(), ItemId{0});
  return candidates_from_table(table, ids);
}

Eigen::MatrixXd encode_queries(const EncoderParams& params, const Corpus& corpus, const std::vector<QueryId>& ids) {
  Eigen::MatrixXd q(params.dims.d_full, static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    q.col(static_cast<Eigen::Index>(i)) = forward(params, render_query(corpus.query(ids[i]))).output;
  }
  return q;
}

Retrieval retrieve(const Eigen::MatrixXd& queries, const CandidateSet& candidates, std::size_t k) {
  require(k >= 1, "retrieve: k must be >= 1");
  require(static_cast<std::size_t>(candidates.emb.cols()) == candidates.ids.size(), "retrieve: malformed candidates");
  require(queries.cols() == 0 || queries.rows() == candidates.emb.rows(), "retrieve: query and candidate dims differ");
  Retrieval out;
  const std::size_t n = candidates.ids.size();
  if (k > n) out.k_exceeds_candidates = true;
  const std::size_t take = std::min(k, n);

  Eigen::MatrixXd q = queries;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    const double nrm = q.col(j).norm();
    if (nrm == 0.0) fail(ErrorCategory::kZeroVector, "retrieve: zero query embedding");
    q.col(j) /= nrm;
  }
  const Eigen::MatrixXd scores = candidates.emb.transpose() * q;  // n x nq
  out.rankings.resize(static_cast<std::size_t>(q.cols()));
  std::vector<std::size_t> order(n);
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
      const double sa = scores(static_cast<Eigen::Index>(a), j);
      const double sb = scores(static_cast<Eigen::Index>(b), j);
      if (sa != sb) return sa > sb;
      return candidates.ids[a] < candidates.ids[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
    auto& r = out.rankings[static_cast<std::size_t>(j)];
    r.resize(take);
    for (std::size_t i = 0; i < take; ++i) r[i] = candidates.ids[order[i]];
  }
  return out;
}

std::vector<std::unordered_set<ItemId>> category_relevance(const Corpus& corpus, const std::vector<QueryId>& queries) {
  std::vector<std::unordered_set<ItemId>> out;
  out.reserve(queries.size());
  const auto& by_cat = corpus.products_by_category();
  for (QueryId q : queries) {
    const int c = corpus.query(q).intent_category;
    std::unordered_set<ItemId> rel;
    if (c >= 0 && static_cast<std::size_t>(c) < by_cat.size()) {
      rel.insert(by_cat[static_cast<std::size_t>(c)].begin(), by_cat[static_cast<std::size_t>(c)].end());
    }
    out.push_back(std::move(rel));
  }
  return out;
}

std::vector<QueryId> held_out_queries(const Corpus& corpus, std::uint64_t seed, double fraction,
                                      std::optional<QueryModality> modality) {
  std::vector<QueryId> out;
  for (const auto& q : corpus.queries) {
    if (!is_held_out(q.query_id, seed, fraction)) continue;
    if (modality && q.modality != *modality) continue;
    out.push_back(q.query_id);
  }
  return out;
}

std::string ExchangeRateReport::csv_header() {
  return "baseline_metric,treatment_metric,baseline_auc,treatment_auc,delta_metric_points,delta_auc,exchange_rate";
}

std::string ExchangeRateReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.4f,%.6f,%.6f", baseline.metric, treatment.metric,
                baseline.auc, treatment.auc, delta_metric_points, delta_auc, rate);
  return buf;
}

ExchangeRateReport exchange_rate(const MetricPoint& baseline, const MetricPoint& treatment) {
  ExchangeRateReport r;
  r.baseline = baseline;
  r.treatment = treatment;
  r.delta_metric_points = (treatment.metric - baseline.metric) * 100.0;
  r.delta_auc = treatment.auc - baseline.auc;
  require(std::isfinite(r.delta_metric_points) && std::isfinite(r.delta_auc), "exchange rate: non-finite inputs");
  if (r.delta_metric_points == 0.0) {
    fail(ErrorCategory::kUndefinedMetric, "exchange rate undefined: intermediate metric did not change");
  }
  r.rate = r.delta_auc * 1000.0 / r.delta_metric_points;
  return r;
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kNegatives:
      return "negatives";
    case SweepAxis::kSequenceLength:
      return "sequence_length";
    case SweepAxis::kDatasetFraction:
      return "dataset_fraction";
  }
  return "?";
}

SweepAxis parse_axis(std::string_view text) {
  if (text == "negatives") return SweepAxis::kNegatives;
  if (text == "sequence_length") return SweepAxis::kSequenceLength;
  if (text == "dataset_fraction") return SweepAxis::kDatasetFraction;
  fail(ErrorCategory::kContract, "unknown sweep axis: " + std::string(text));
}

void SweepSpec::validate() const {
  require(!grid.empty(), "sweep: grid is empty");
  require(!seeds.empty(), "sweep: no seeds");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(grid[i] > 0.0 && std::isfinite(grid[i]), "sweep: grid values must be positive");
    if (i > 0) require(grid[i] > grid[i - 1], "sweep: grid must be sorted ascending without repeats");
  }
  if (axis == SweepAxis::kDatasetFraction) {
    for (double v : grid) require(v <= 1.0, "sweep: dataset fractions must be <= 1");
  } else {
    for (double v : grid) require(v == std::floor(v), "sweep: grid values must be integers on this axis");
  }
}

SweepTable run_sweep(const SweepSpec& spec, const SweepPoint& evaluate, const SweepPoint& baseline) {
  spec.validate();
  SweepTable t;
  t.axis = spec.axis;
  for (double v : spec.grid) {
    SweepRow row;
    row.value = v;
    std::vector<MetricPoint> base;
    for (std::uint64_t seed : spec.seeds) {
      try {
        const MetricPoint treated = evaluate(v, seed);
        if (baseline) base.push_back(baseline(v, seed));
        row.per_seed.push_back(treated);
      } catch (const Error& e) {
        ++row.failures;
        if (row.error.empty()) row.error = std::string(to_string(e.category())) + ": " + e.what();
      }
    }
    if (!row.per_seed.empty()) {
      row.mean = mean_of(row.per_seed);
      if (baseline) {
        row.baseline_mean = mean_of(base);
        if (row.baseline_mean->metric != row.mean.metric) {
          row.rate_vs_baseline = exchange_rate(*row.baseline_mean, row.mean).rate;
        }
      }
    }
    t.rows.push_back(std::move(row));
  }
  for (std::size_t i = 1; i < t.rows.size(); ++i) {
    const auto& prev = t.rows[i - 1];
    auto& cur = t.rows[i];
    if (prev.per_seed.empty() || cur.per_seed.empty()) continue;
    if (cur.mean.metric == prev.mean.metric) continue;
    cur.rate_vs_previous = exchange_rate(prev.mean, cur.mean).rate;
  }
  return t;
}

std::string SweepTable::to_csv() const {
  std::ostringstream o;
  o << to_string(axis) << ",recall,auc,exchange_rate_vs_previous,seeds_ok,seeds_failed";
  const bool with_baseline = std::any_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.baseline_mean; });
  if (with_baseline) o << ",baseline_recall,baseline_auc,exchange_rate_vs_baseline";
  o << '\n';
  for (const auto& r : rows) {
    o << fmt("%g", r.value) << ',';
    if (r.per_seed.empty()) {
      o << ",,";
    } else {
      o << fmt("%.6f", r.mean.metric) << ',' << fmt("%.6f", r.mean.auc) << ',';
    }
    if (r.rate_vs_previous) o << fmt("%.6f", *r.rate_vs_previous);
    o << ',' << r.per_seed.size() << ',' << r.failures;
    if (with_baseline) {
      o << ',';
      if (r.baseline_mean) o << fmt("%.6f", r.baseline_mean->metric) << ',' << fmt("%.6f", r.baseline_mean->auc);
      else o << ',';
      o << ',';
      if (r.rate_vs_baseline) o << fmt("%.6f", *r.rate_vs_baseline);
    }
    o << '\n';
  }
  return o.str();
}

std::string SweepTable::summary() const {
  std::ostringstream o;
  o << "sweep over " << to_string(axis);
  if (axis == SweepAxis::kDatasetFraction) o << " (dataset fraction substitutes for a training-token budget)";
  if (axis == SweepAxis::kNegatives) o << " (value = pool depth in global batches, 1 = in-batch only)";
  if (axis == SweepAxis::kSequenceLength) o << " (baseline = stage-1 checkpoint, treatment = final checkpoint)";
  o << "\nexchange rate = AUC gain in permille per percentage point of recall\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    o << fmt("%g", r.value) << ": ";
    if (r.per_seed.empty()) {
      o << "failed (" << r.error << ")\n";
      continue;
    }
    o << "recall " << fmt("%.4f", r.mean.metric) << ", auc " << fmt("%.4f", r.mean.auc);
    if (i > 0 && !rows[i - 1].per_seed.empty()) {
      o << ", delta recall " << fmt("%+.2f", 100.0 * (r.mean.metric - rows[i - 1].mean.metric)) << " pts"
        << ", delta auc " << fmt("%+.4f", r.mean.auc - rows[i - 1].mean.auc);
      if (r.rate_vs_previous) o << ", rate " << fmt("%.3f", *r.rate_vs_previous);
    }
    if (r.baseline_mean) {
      o << "; vs baseline recall " << fmt("%.4f", r.baseline_mean->metric) << " auc "
        << fmt("%.4f", r.baseline_mean->auc);
      if (r.rate_vs_baseline) o << ", rate " << fmt("%.3f", *r.rate_vs_baseline);
    }
    if (r.failures > 0) o << " (" << r.failures << " seed(s) failed)";
    o << '\n';
  }
  return o.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCategory::kIo, "cannot write " + path);
  f << text;
  if (!f) fail(ErrorCategory::kIo, "write failed: " + path);
}

}  // namespace mmrep
