#include "mmrep/curation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "jsonl.hpp"
#include "mmrep/random.hpp"

namespace mmrep {

namespace {

bool better(const CuratedPair& a, const CuratedPair& b) {
  if (a.score != b.score) return a.score < b.score;
  return a.query_id < b.query_id;
}

double bag_cosine(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  std::map<TokenId, double> ca, cb;
  for (TokenId t : a) ca[t] += 1.0;
  for (TokenId t : b) cb[t] += 1.0;
  double d = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, v] : ca) {
    na += v * v;
    const auto it = cb.find(t);
    if (it != cb.end()) d += v * it->second;
  }
  for (const auto& [t, v] : cb) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return d / std::sqrt(na * nb);
}

}  // namespace

std::uint64_t CategoryHistogram::total() const {
  std::uint64_t t = 0;
  for (const auto& [c, n] : counts) t += n;
  return t;
}

double CategoryHistogram::proportion(int category) const {
  const auto t = total();
  require(t > 0, "category histogram is empty");
  const auto it = counts.find(category);
  return it == counts.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(t);
}

CategoryHistogram CategoryHistogram::of(const std::vector<CuratedPair>& pairs, const Corpus& corpus) {
  CategoryHistogram h;
  for (const auto& p : pairs) ++h.counts[corpus.product(p.product_id).leaf_category];
  return h;
}

PairScorer raw_feature_scorer(const Corpus& corpus) {
  return [&corpus](const CuratedPair& pair) {
    const auto& q = corpus.query(pair.query_id);
    const auto& p = corpus.product(pair.product_id);
    double total = 0.0;
    int parts = 0;
    if (q.has_image()) {
      std::vector<double> mean(q.image_feature.size(), 0.0);
      for (SkuId s : pair.sku_ids) {
        const auto& img = p.skus[p.sku_index(s)].image;
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += img[d];
      }
      if (l2_norm(mean) > 0.0 && l2_norm(q.image_feature) > 0.0) total += cosine_similarity(q.image_feature, mean);
      ++parts;
    }
    if (q.has_text()) {
      total += bag_cosine(q.text_tokens, p.title_tokens);
      ++parts;
    }
    return parts == 0 ? 0.0 : total / parts;
  };
}

PairScorer encoder_scorer(const Corpus& corpus, const EncoderParams& params) {
  return [&corpus, &params](const CuratedPair& pair) {
    const auto& q = corpus.query(pair.query_id);
    const auto& p = corpus.product(pair.product_id);
    const Embedding eq = encode(params, render_query(q));
    const Embedding ei = encode(params, render_item(p, ItemView::kTitleImage, corpus.config, pair.sku_ids));
    return dot(eq.values, ei.values);
  };
}

std::vector<CuratedPair> dedup_by_similarity(const std::vector<CuratedPair>& pairs, const PairScorer& scorer) {
  std::vector<CuratedPair> scored = pairs;
  for (auto& p : scored) {
    require(p.sku_ids.size() == 1, "dedup expects one purchased SKU per pair");
    p.score = scorer(p);
    require(std::isfinite(p.score), "dedup scorer returned a non-finite value");
  }
  std::unordered_map<SkuId, std::size_t> best;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const SkuId sku = scored[i].sku_ids.front();
    const auto [it, inserted] = best.try_emplace(sku, i);
    if (!inserted && better(scored[i], scored[it->second])) it->second = i;
  }
  std::vector<CuratedPair> out;
  out.reserve(best.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (best.at(scored[i].sku_ids.front()) == i) out.push_back(scored[i]);
  }
  return out;
}

std::vector<CuratedPair> merge_skus(const std::vector<CuratedPair>& pairs, const Corpus& corpus) {
  std::unordered_map<ProductId, std::size_t> slot;
  std::vector<CuratedPair> out;
  std::vector<std::set<SkuId>> unions;
  for (const auto& pair : pairs) {
    for (SkuId s : pair.sku_ids) {
      const auto owner = corpus.product_of_sku(s);
      if (!owner || *owner != pair.product_id) {
        fail(ErrorCategory::kDataIntegrity, "sku " + std::to_string(s) + " does not resolve to product " +
                                                std::to_string(pair.product_id));
      }
    }
    const auto [it, inserted] = slot.try_emplace(pair.product_id, out.size());
    if (inserted) {
      out.push_back(pair);
      unions.emplace_back(pair.sku_ids.begin(), pair.sku_ids.end());
      continue;
    }
    unions[it->second].insert(pair.sku_ids.begin(), pair.sku_ids.end());
    if (better(pair, out[it->second])) out[it->second] = pair;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].sku_ids.assign(unions[i].begin(), unions[i].end());
  return out;
}

AlignResult align_distribution(const std::vector<CuratedPair>& pairs, const CategoryHistogram& target,
                               const Corpus& corpus, std::uint64_t seed, const std::vector<QueryId>& query_pool) {
  AlignResult result;
  if (pairs.empty()) return result;
  require(target.total() > 0, "align: target histogram is empty");

  std::map<int, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    by_cat[corpus.product(pairs[i].product_id).leaf_category].push_back(i);
  }
  for (const auto& [c, idx] : by_cat) {
    require(target.counts.count(c) > 0, "align: target does not cover category " + std::to_string(c));
  }

  double present_mass = 0.0;
  for (const auto& [c, n] : target.counts) {
    if (n == 0) continue;
    if (by_cat.count(c) == 0) {
      result.warnings.push_back("category " + std::to_string(c) + ": target share " +
                                std::to_string(target.proportion(c)) + " has no source pairs");
    } else {
      present_mass += static_cast<double>(n);
    }
  }
  require(present_mass > 0.0, "align: no overlap between source and target categories");

  // Largest-remainder apportionment of the input total.
  const std::size_t total = pairs.size();
  std::vector<std::pair<int, double>> quotas;
  for (const auto& [c, idx] : by_cat) {
    quotas.emplace_back(c, static_cast<double>(total) * static_cast<double>(target.counts.at(c)) / present_mass);
  }
  std::map<int, std::size_t> desired;
  std::size_t assigned = 0;
  for (const auto& [c, q] : quotas) {
    desired[c] = static_cast<std::size_t>(std::floor(q + 1e-9));
    assigned += desired[c];
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ra = quotas[a].second - static_cast<double>(desired[quotas[a].first]);
    const double rb = quotas[b].second - static_cast<double>(desired[quotas[b].first]);
    return ra > rb;
  });
  for (std::size_t i = 0; assigned < total && i < order.size(); ++i, ++assigned) ++desired[quotas[order[i]].first];

  std::map<int, std::vector<QueryId>> queries_by_intent;
  if (query_pool.empty()) {
    for (const auto& q : corpus.queries) queries_by_intent[q.intent_category].push_back(q.query_id);
  } else {
    for (QueryId id : query_pool) queries_by_intent[corpus.query(id).intent_category].push_back(id);
  }

  Rng rng = Rng::derive(seed, 31);
  std::vector<char> keep(pairs.size(), 0);
  std::vector<CuratedPair> extra;
  for (const auto& [c, idx] : by_cat) {
    const std::size_t want = desired[c];
    if (idx.size() >= want) {
      std::vector<std::size_t> chosen = idx;
      if (want < idx.size()) {
        rng.shuffle(chosen);
        chosen.resize(want);
      }
      for (std::size_t i : chosen) keep[i] = 1;
      continue;
    }
    for (std::size_t i : idx) keep[i] = 1;
    const auto& candidates = queries_by_intent[c];
    bool warned = false;
    for (std::size_t n = idx.size(); n < want; ++n) {
      CuratedPair dup = pairs[idx[rng.below(idx.size())]];
      if (candidates.size() > 1 || (candidates.size() == 1 && candidates.front() != dup.query_id)) {
        QueryId q;
        do {
          q = candidates[rng.below(candidates.size())];
        } while (q == dup.query_id);
        dup.query_id = q;
      } else if (!warned) {
        result.warnings.push_back("category " + std::to_string(c) + ": no alternative query for top-up");
        warned = true;
      }
      extra.push_back(std::move(dup));
    }
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (keep[i]) result.pairs.push_back(pairs[i]);
  }
  for (auto& e : extra) result.pairs.push_back(std::move(e));
  return result;
}

std::size_t entity_count(const CuratedPair& pair, const Corpus& corpus) {
  const auto& cfg = corpus.config;
  std::set<TokenId> entities;
  for (TokenId t : corpus.query(pair.query_id).text_tokens) {
    if (cfg.is_attribute(t)) entities.insert(t);
  }
  for (TokenId t : corpus.product(pair.product_id).title_tokens) {
    if (cfg.is_attribute(t)) entities.insert(t);
  }
  return entities.size();
}

std::vector<CuratedPair> entity_filter(const std::vector<CuratedPair>& pairs, const Corpus& corpus,
                                       std::size_t min_entities) {
  std::vector<CuratedPair> out;
  for (const auto& p : pairs) {
    if (entity_count(p, corpus) > min_entities) out.push_back(p);
  }
  return out;
}

AttachResult attach_hard_negatives(const std::vector<CuratedPair>& pairs, const Corpus& corpus, std::uint64_t seed) {
  AttachResult result;
  Rng rng = Rng::derive(seed, 41);
  result.triplets.reserve(pairs.size());
  for (const auto& pair : pairs) {
    TrainingTriplet t;
    t.query_id = pair.query_id;
    t.positive = pair.product_id;
    t.positive_skus = pair.sku_ids;
    t.view = scenarios()[static_cast<std::size_t>(pair.scenario)].item;
    const auto& peers =
        corpus.products_by_category()[static_cast<std::size_t>(corpus.product(pair.product_id).leaf_category)];
    if (peers.size() < 2) {
      ++result.shortfall;
    } else {
      // Uniform over the category minus the positive.
      std::size_t pick = rng.below(peers.size() - 1);
      const auto pos = static_cast<std::size_t>(
          std::lower_bound(peers.begin(), peers.end(), pair.product_id) - peers.begin());
      if (pick >= pos) ++pick;
      t.hard_negative = peers[pick];
    }
    result.triplets.push_back(std::move(t));
  }
  return result;
}

std::string CurationReport::to_json() const {
  nlohmann::ordered_json j;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : stages) {
    nlohmann::ordered_json sj;
    sj["stage"] = s.stage;
    sj["in"] = s.in;
    sj["out"] = s.out;
    j["stages"].push_back(std::move(sj));
  }
  j["hard_negative_shortfall"] = hard_negative_shortfall;
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

CurationResult run_curation(const Corpus& corpus, const std::vector<InteractionPair>& interactions,
                            const PairScorer& scorer, const CategoryHistogram& target, const CurationConfig& config,
                            const std::vector<QueryId>& query_pool) {
  CurationResult result;
  auto& stages = result.report.stages;

  std::set<QueryId> allowed(query_pool.begin(), query_pool.end());
  std::vector<CuratedPair> pairs;
  for (const auto& it : interactions) {
    if (config.purchases_only && it.behavior != Behavior::kPurchase) continue;
    if (!allowed.empty() && allowed.count(it.query_id) == 0) continue;
    pairs.push_back(CuratedPair{it.query_id, it.product_id, {it.sku_id}, it.scenario, 0.0});
  }
  stages.push_back({"select", interactions.size(), pairs.size()});

  auto deduped = dedup_by_similarity(pairs, scorer);
  stages.push_back({"dedup", pairs.size(), deduped.size()});

  auto merged = merge_skus(deduped, corpus);
  stages.push_back({"merge", deduped.size(), merged.size()});

  auto aligned = align_distribution(merged, target, corpus, config.seed, query_pool);
  stages.push_back({"align", merged.size(), aligned.pairs.size()});
  result.report.warnings = aligned.warnings;

  auto filtered = entity_filter(aligned.pairs, corpus, config.min_entities);
  stages.push_back({"entity_filter", aligned.pairs.size(), filtered.size()});

  auto attached = attach_hard_negatives(filtered, corpus, config.seed);
  stages.push_back({"attach", filtered.size(), attached.triplets.size()});
  result.report.hard_negative_shortfall = attached.shortfall;
  result.triplets = std::move(attached.triplets);
  return result;
}

std::vector<TrainingTriplet> interaction_triplets(const Corpus& corpus, const std::vector<InteractionPair>& interactions) {
  std::vector<TrainingTriplet> out;
  out.reserve(interactions.size());
  for (const auto& it : interactions) {
    corpus.product(it.product_id);
    TrainingTriplet t;
    t.query_id = it.query_id;
    t.positive = it.product_id;
    t.positive_skus = {it.sku_id};
    t.view = scenarios()[static_cast<std::size_t>(it.scenario)].item;
    out.push_back(std::move(t));
  }
  return out;
}

void save_triplets(const std::vector<TrainingTriplet>& triplets, const std::string& path) {
  std::vector<std::string> lines;
  lines.reserve(triplets.size());
  for (const auto& t : triplets) {
    jsonl::ordered_json j;
    j["query_id"] = t.query_id;
    j["positive"] = t.positive;
    j["positive_skus"] = t.positive_skus;
    j["view"] = std::string(to_string(t.view));
    j["hard_negative"] = t.hard_negative ? jsonl::ordered_json(*t.hard_negative) : jsonl::ordered_json(nullptr);
    lines.push_back(j.dump());
  }
  jsonl::write_lines(path, lines);
}

std::vector<TrainingTriplet> load_triplets(const std::string& path) {
  std::vector<TrainingTriplet> out;
  jsonl::read_lines(path, [&](const jsonl::ordered_json& j) {
    TrainingTriplet t;
    t.query_id = j.at("query_id").get<QueryId>();
    t.positive = j.at("positive").get<ProductId>();
    t.positive_skus = j.at("positive_skus").get<std::vector<SkuId>>();
    t.view = parse_item_view(j.at("view").get<std::string>());
    if (!j.at("hard_negative").is_null()) t.hard_negative = j.at("hard_negative").get<ProductId>();
    out.push_back(std::move(t));
  });
  return out;
}

}  // namespace mmrep
