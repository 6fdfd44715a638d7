#include "mmrep/ctr_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "jsonl.hpp"
#include "mmrep/errors.hpp"
#include "mmrep/random.hpp"

namespace mmrep {

using jsonl::ordered_json;

void CtrDataConfig::validate() const {
  require(n_users >= 1 && examples_per_user >= 1, "ctr data: need at least one user and example");
  require(min_interests >= 1 && max_interests >= min_interests, "ctr data: bad interest range");
  for (double p : {in_interest_rate, target_match_rate, click_match, click_other}) {
    require(p >= 0.0 && p <= 1.0, "ctr data: probabilities must lie in [0,1]");
  }
  require(held_out_fraction >= 0.0 && held_out_fraction < 1.0, "ctr data: held-out fraction must lie in [0,1)");
}

std::vector<CtrRecord> generate_ctr_records(const Corpus& corpus, const CtrDataConfig& config) {
  config.validate();
  const auto& by_cat = corpus.products_by_category();
  std::vector<int> populated;
  std::vector<double> weight;
  for (std::size_t c = 0; c < by_cat.size(); ++c) {
    if (by_cat[c].empty()) continue;
    populated.push_back(static_cast<int>(c));
    weight.push_back(static_cast<double>(by_cat[c].size()));
  }
  require(!populated.empty(), "ctr data: corpus has no products");
  require(!corpus.queries.empty(), "ctr data: corpus has no queries");
  std::vector<std::vector<QueryId>> queries_by_cat(by_cat.size());
  for (const auto& q : corpus.queries) {
    if (q.intent_category >= 0 && static_cast<std::size_t>(q.intent_category) < queries_by_cat.size()) {
      queries_by_cat[static_cast<std::size_t>(q.intent_category)].push_back(q.query_id);
    }
  }
  const int max_int = std::min<int>(config.max_interests, static_cast<int>(populated.size()));
  const int min_int = std::min(config.min_interests, max_int);

  Rng rng = Rng::derive(config.seed, 61);
  WeightedSampler cat_sampler(weight);
  auto random_category = [&] { return populated[cat_sampler.sample(rng)]; };
  auto product_in = [&](int c) {
    const auto& ps = by_cat[static_cast<std::size_t>(c)];
    return ps[rng.below(ps.size())];
  };
  auto query_in = [&](int c) -> QueryId {
    const auto& qs = queries_by_cat[static_cast<std::size_t>(c)];
    if (qs.empty()) return corpus.queries[rng.below(corpus.queries.size())].query_id;
    return qs[rng.below(qs.size())];
  };

  std::vector<CtrRecord> out;
  out.reserve(config.n_users * config.examples_per_user);
  for (std::uint64_t u = 0; u < config.n_users; ++u) {
    const int n_int = static_cast<int>(rng.range(min_int, max_int));
    std::vector<int> interests;
    while (static_cast<int>(interests.size()) < n_int) {
      const int c = random_category();
      if (std::find(interests.begin(), interests.end(), c) == interests.end()) interests.push_back(c);
    }
    auto interest = [&] { return interests[rng.below(interests.size())]; };
    auto non_interest = [&] {
      for (int tries = 0; tries < 1000; ++tries) {
        const int c = random_category();
        if (std::find(interests.begin(), interests.end(), c) == interests.end()) return c;
      }
      return random_category();
    };

    const std::int64_t t0 = 1'700'000'000 + static_cast<std::int64_t>(u) * 1'000'000;
    std::vector<ProductId> item_seq(config.sequence_length);
    std::vector<std::int64_t> item_times(config.sequence_length);
    std::int64_t t = t0;
    for (std::size_t i = 0; i < config.sequence_length; ++i) {
      const int c = rng.bernoulli(config.in_interest_rate) ? interest() : random_category();
      item_seq[i] = product_in(c);
      t += static_cast<std::int64_t>(rng.range(1, 600));
      item_times[i] = t;
    }
    std::vector<QueryId> query_seq(config.query_sequence_length);
    std::vector<std::int64_t> query_times(config.query_sequence_length);
    t = t0;
    for (std::size_t i = 0; i < config.query_sequence_length; ++i) {
      const int c = rng.bernoulli(config.in_interest_rate) ? interest() : random_category();
      query_seq[i] = query_in(c);
      t += static_cast<std::int64_t>(rng.range(1, 3000));
      query_times[i] = t;
    }
    for (std::size_t e = 0; e < config.examples_per_user; ++e) {
      const bool match = rng.bernoulli(config.target_match_rate);
      const int c = match ? interest() : non_interest();
      const bool in_interests = std::find(interests.begin(), interests.end(), c) != interests.end();
      CtrRecord r;
      r.example_id = u * config.examples_per_user + e;
      r.user_id = u;
      r.target = product_in(c);
      r.query_id = query_in(c);
      r.item_seq = item_seq;
      r.item_times = item_times;
      r.query_seq = query_seq;
      r.query_times = query_times;
      r.label = rng.bernoulli(in_interests ? config.click_match : config.click_other) ? 1 : 0;
      out.push_back(std::move(r));
    }
  }
  return out;
}

bool ctr_held_out(const CtrRecord& record, const CtrDataConfig& config) {
  return is_held_out(record.user_id, config.seed ^ 0x43545255ULL, config.held_out_fraction);
}

void save_ctr_records(const std::vector<CtrRecord>& records, const std::string& path) {
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (const auto& r : records) {
    ordered_json j;
    j["example_id"] = r.example_id;
    j["user_id"] = r.user_id;
    j["query_id"] = r.query_id;
    j["target"] = r.target;
    j["item_seq"] = r.item_seq;
    j["item_times"] = r.item_times;
    j["query_seq"] = r.query_seq;
    j["query_times"] = r.query_times;
    j["label"] = r.label;
    lines.push_back(j.dump());
  }
  jsonl::write_lines(path, lines);
}

std::vector<CtrRecord> load_ctr_records(const std::string& path) {
  std::vector<CtrRecord> out;
  jsonl::read_lines(path, [&](const ordered_json& j) {
    CtrRecord r;
    r.example_id = j.at("example_id").get<std::uint64_t>();
    r.user_id = j.at("user_id").get<std::uint64_t>();
    r.query_id = j.at("query_id").get<QueryId>();
    r.target = j.at("target").get<ProductId>();
    r.item_seq = j.at("item_seq").get<std::vector<ProductId>>();
    r.item_times = j.at("item_times").get<std::vector<std::int64_t>>();
    r.query_seq = j.at("query_seq").get<std::vector<QueryId>>();
    r.query_times = j.at("query_times").get<std::vector<std::int64_t>>();
    r.label = j.at("label").get<int>();
    if (r.label != 0 && r.label != 1) fail(ErrorCategory::kDataIntegrity, "ctr record: label must be 0 or 1");
    if (r.item_seq.size() != r.item_times.size() || r.query_seq.size() != r.query_times.size()) {
      fail(ErrorCategory::kDataIntegrity, "ctr record: sequence and timestamp lengths differ");
    }
    out.push_back(std::move(r));
  });
  return out;
}

Eigen::VectorXd id_embedding(std::uint64_t id, int domain, int d_id, std::uint64_t seed) {
  Rng rng = Rng::derive(seed ^ mix64(static_cast<std::uint64_t>(domain) + 0x1d), id);
  Eigen::VectorXd v(d_id);
  const double s = 1.0 / std::sqrt(static_cast<double>(d_id));
  for (int i = 0; i < d_id; ++i) v(i) = s * rng.normal();
  return v;
}

EmbeddingBank::EmbeddingBank(const Corpus& corpus, const ProductLookup& products, const QueryEncoder& queries,
                             int d_id, std::uint64_t id_seed)
    : d_id_(d_id) {
  require(d_id >= 1, "embedding bank: d_id must be positive");
  const auto np = static_cast<Eigen::Index>(corpus.products.size());
  const auto nq = static_cast<Eigen::Index>(corpus.queries.size());
  std::vector<std::optional<Embedding>> found(corpus.products.size());
  for (std::size_t p = 0; p < corpus.products.size(); ++p) {
    found[p] = products(static_cast<ProductId>(p));
    if (found[p] && d_mm_ == 0) d_mm_ = static_cast<int>(found[p]->dim());
  }
  std::vector<Embedding> qe;
  qe.reserve(corpus.queries.size());
  for (std::size_t q = 0; q < corpus.queries.size(); ++q) qe.push_back(queries(static_cast<QueryId>(q)));
  if (d_mm_ == 0 && !qe.empty()) d_mm_ = static_cast<int>(qe.front().dim());
  require(d_mm_ >= 1, "embedding bank: no multimodal embeddings available");

  product_mm_ = Eigen::MatrixXd::Zero(d_mm_, np);
  product_present_.assign(corpus.products.size(), 0);
  product_id_.resize(d_id, np);
  for (Eigen::Index p = 0; p < np; ++p) {
    const auto& e = found[static_cast<std::size_t>(p)];
    if (e) {
      require(static_cast<int>(e->dim()) == d_mm_, "embedding bank: inconsistent product embedding dims");
      product_mm_.col(p) = Eigen::Map<const Eigen::VectorXd>(e->values.data(), d_mm_);
      product_present_[static_cast<std::size_t>(p)] = 1;
    } else {
      ++missing_;
    }
    product_id_.col(p) = id_embedding(static_cast<std::uint64_t>(p), 0, d_id, id_seed);
  }
  query_mm_.resize(d_mm_, nq);
  query_id_.resize(d_id, nq);
  for (Eigen::Index q = 0; q < nq; ++q) {
    const auto& e = qe[static_cast<std::size_t>(q)];
    require(static_cast<int>(e.dim()) == d_mm_, "embedding bank: query and product dims differ");
    query_mm_.col(q) = Eigen::Map<const Eigen::VectorXd>(e.values.data(), d_mm_);
    query_id_.col(q) = id_embedding(static_cast<std::uint64_t>(q), 1, d_id, id_seed);
  }
}

CtrExample EmbeddingBank::example(const CtrRecord& r) const {
  const auto np = static_cast<std::uint64_t>(product_mm_.cols());
  const auto nq = static_cast<std::uint64_t>(query_mm_.cols());
  auto check_p = [&](ProductId p) {
    if (p >= np) fail(ErrorCategory::kDataIntegrity, "ctr record references unknown product " + std::to_string(p));
  };
  auto check_q = [&](QueryId q) {
    if (q >= nq) fail(ErrorCategory::kDataIntegrity, "ctr record references unknown query " + std::to_string(q));
  };
  check_p(r.target);
  check_q(r.query_id);

  CtrExample x;
  x.example_id = r.example_id;
  x.label = r.label;
  x.target = r.target;
  x.query = query_mm_.col(static_cast<Eigen::Index>(r.query_id));
  x.target_id = product_id_.col(static_cast<Eigen::Index>(r.target));
  x.target_mm = product_mm_.col(static_cast<Eigen::Index>(r.target));
  x.target_present = product_present_[r.target] != 0;

  const auto L = static_cast<Eigen::Index>(r.item_seq.size());
  BehaviorSequence& is = x.item_seq;
  is.items.assign(r.item_seq.begin(), r.item_seq.end());
  is.timestamps = r.item_times;
  is.id_emb.resize(d_id_, L);
  is.mm_emb.resize(d_mm_, L);
  is.present.resize(r.item_seq.size());
  for (Eigen::Index i = 0; i < L; ++i) {
    const ProductId p = r.item_seq[static_cast<std::size_t>(i)];
    check_p(p);
    is.id_emb.col(i) = product_id_.col(static_cast<Eigen::Index>(p));
    is.mm_emb.col(i) = product_mm_.col(static_cast<Eigen::Index>(p));
    is.present[static_cast<std::size_t>(i)] = product_present_[p];
  }

  const auto Q = static_cast<Eigen::Index>(r.query_seq.size());
  BehaviorSequence& qs = x.query_seq;
  qs.items.assign(r.query_seq.begin(), r.query_seq.end());
  qs.timestamps = r.query_times;
  qs.id_emb.resize(d_id_, Q);
  qs.mm_emb.resize(d_mm_, Q);
  qs.present.assign(r.query_seq.size(), 1);
  for (Eigen::Index i = 0; i < Q; ++i) {
    const QueryId q = r.query_seq[static_cast<std::size_t>(i)];
    check_q(q);
    qs.id_emb.col(i) = query_id_.col(static_cast<Eigen::Index>(q));
    qs.mm_emb.col(i) = query_mm_.col(static_cast<Eigen::Index>(q));
  }
  return x;
}

void write_predictions(const std::string& path, const std::vector<CtrRecord>& records,
                       const std::vector<double>& probabilities) {
  require(records.size() == probabilities.size(), "predictions: record and probability counts differ");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCategory::kIo, "cannot write " + path);
  f << "example_id,probability\n";
  char buf[64];
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%llu,%.9f\n", static_cast<unsigned long long>(records[i].example_id),
                  probabilities[i]);
    f << buf;
  }
  if (!f) fail(ErrorCategory::kIo, "write failed: " + path);
}

}  // namespace mmrep
