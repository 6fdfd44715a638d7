#include "mmrep/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "jsonl.hpp"
#include "mmrep/random.hpp"

namespace mmrep {

using jsonl::ordered_json;
using jsonl::read_lines;
using jsonl::write_lines;

namespace {

constexpr std::array<Scenario, kScenarioCount> kScenarios = {{
    {"text->richer-text", QueryModality::kText, ItemView::kRicherText, 0.2},
    {"text->image", QueryModality::kText, ItemView::kImage, 0.2},
    {"text->title+image", QueryModality::kText, ItemView::kTitleImage, 0.2},
    {"text->richer-text+image", QueryModality::kText, ItemView::kRicherTextImage, 0.5},
    {"image->image", QueryModality::kImage, ItemView::kImage, 0.2},
    {"image->title+image", QueryModality::kImage, ItemView::kTitleImage, 0.5},
    {"image->richer-text+image", QueryModality::kImage, ItemView::kRicherTextImage, 0.2},
    {"title+image->title+image", QueryModality::kTextImage, ItemView::kTitleImage, 0.5},
    {"richer-text+image->richer-text+image", QueryModality::kTextImage, ItemView::kRicherTextImage, 0.1},
}};

void check_ratios(std::span<const double> ratios, const char* what) {
  double sum = 0.0;
  for (double r : ratios) {
    require(r >= 0.0 && std::isfinite(r), std::string(what) + ": ratios must be non-negative");
    sum += r;
  }
  require(std::abs(sum - 1.0) <= 1e-9, std::string(what) + ": ratios must sum to 1");
}

std::vector<double> gaussian(Rng& rng, int dim, double sigma) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (double& x : v) x = sigma * rng.normal();
  return v;
}

// Stored features are float-rounded so the text files round-trip exactly.
void round_to_float(std::vector<double>& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

TokenId pick(Rng& rng, const std::vector<TokenId>& pool) { return pool[rng.below(pool.size())]; }

TokenId random_in(Rng& rng, TokenId begin, TokenId end) {
  return begin + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(end - begin)));
}

ordered_json config_to_json(const CorpusConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["n_products"] = c.n_products;
  j["n_queries"] = c.n_queries;
  j["categories"] = c.categories;
  j["category_families"] = c.category_families;
  j["image_dim"] = c.image_dim;
  j["family_spread"] = c.family_spread;
  j["leaf_spread"] = c.leaf_spread;
  j["noise"] = c.noise;
  j["product_spread"] = c.product_spread;
  j["sku_spread"] = c.sku_spread;
  j["query_view_noise"] = c.query_view_noise;
  j["popularity_exponent"] = c.popularity_exponent;
  j["category_skew"] = c.category_skew;
  j["n_attributes"] = c.n_attributes;
  j["n_words"] = c.n_words;
  j["words_per_category"] = c.words_per_category;
  j["attributes_per_category"] = c.attributes_per_category;
  j["off_topic_rate"] = c.off_topic_rate;
  j["min_skus"] = c.min_skus;
  j["max_skus"] = c.max_skus;
  j["min_title_len"] = c.min_title_len;
  j["max_title_len"] = c.max_title_len;
  j["min_title_attributes"] = c.min_title_attributes;
  j["max_title_attributes"] = c.max_title_attributes;
  j["min_query_len"] = c.min_query_len;
  j["max_query_len"] = c.max_query_len;
  j["vocab_size"] = c.vocab_size();
  j["attribute_lexicon"] = {c.attribute_begin(), c.attribute_end()};
  return j;
}

CorpusConfig config_from_json(const ordered_json& j) {
  CorpusConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_products = j.at("n_products").get<std::size_t>();
  c.n_queries = j.at("n_queries").get<std::size_t>();
  c.categories = j.at("categories").get<int>();
  c.category_families = j.at("category_families").get<int>();
  c.image_dim = j.at("image_dim").get<int>();
  c.family_spread = j.at("family_spread").get<double>();
  c.leaf_spread = j.at("leaf_spread").get<double>();
  c.noise = j.at("noise").get<double>();
  c.product_spread = j.at("product_spread").get<double>();
  c.sku_spread = j.at("sku_spread").get<double>();
  c.query_view_noise = j.at("query_view_noise").get<double>();
  c.popularity_exponent = j.at("popularity_exponent").get<double>();
  c.category_skew = j.at("category_skew").get<double>();
  c.n_attributes = j.at("n_attributes").get<int>();
  c.n_words = j.at("n_words").get<int>();
  c.words_per_category = j.at("words_per_category").get<int>();
  c.attributes_per_category = j.at("attributes_per_category").get<int>();
  c.off_topic_rate = j.at("off_topic_rate").get<double>();
  c.min_skus = j.at("min_skus").get<int>();
  c.max_skus = j.at("max_skus").get<int>();
  c.min_title_len = j.at("min_title_len").get<int>();
  c.max_title_len = j.at("max_title_len").get<int>();
  c.min_title_attributes = j.at("min_title_attributes").get<int>();
  c.max_title_attributes = j.at("max_title_attributes").get<int>();
  c.min_query_len = j.at("min_query_len").get<int>();
  c.max_query_len = j.at("max_query_len").get<int>();
  return c;
}

}  // namespace

std::string_view to_string(QueryModality m) {
  switch (m) {
    case QueryModality::kText: return "text";
    case QueryModality::kImage: return "image";
    case QueryModality::kTextImage: return "text+image";
  }
  return "text";
}

std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::kClick: return "click";
    case Behavior::kFavorite: return "favorite";
    case Behavior::kCart: return "cart";
    case Behavior::kPurchase: return "purchase";
  }
  return "click";
}

std::string_view to_string(ItemView v) {
  switch (v) {
    case ItemView::kRicherText: return "richer-text";
    case ItemView::kImage: return "image";
    case ItemView::kTitleImage: return "title+image";
    case ItemView::kRicherTextImage: return "richer-text+image";
  }
  return "image";
}

ItemView parse_item_view(std::string_view s) {
  if (s == "richer-text") return ItemView::kRicherText;
  if (s == "image") return ItemView::kImage;
  if (s == "title+image") return ItemView::kTitleImage;
  if (s == "richer-text+image") return ItemView::kRicherTextImage;
  fail(ErrorCategory::kContract, "unknown item view: " + std::string(s));
}

QueryModality parse_modality(std::string_view s) {
  if (s == "text") return QueryModality::kText;
  if (s == "image") return QueryModality::kImage;
  if (s == "text+image") return QueryModality::kTextImage;
  fail(ErrorCategory::kIntegrity, "unknown modality: " + std::string(s));
}

Behavior parse_behavior(std::string_view s) {
  if (s == "click") return Behavior::kClick;
  if (s == "favorite") return Behavior::kFavorite;
  if (s == "cart") return Behavior::kCart;
  if (s == "purchase") return Behavior::kPurchase;
  fail(ErrorCategory::kIntegrity, "unknown behavior: " + std::string(s));
}

const std::array<Scenario, kScenarioCount>& scenarios() { return kScenarios; }

std::array<double, kScenarioCount> default_scenario_mix() {
  std::array<double, kScenarioCount> mix{};
  double total = 0.0;
  for (const auto& s : kScenarios) total += s.default_share;
  for (std::size_t i = 0; i < kScenarioCount; ++i) mix[i] = kScenarios[i].default_share / total;
  return mix;
}

std::size_t CorpusRecord::sku_index(SkuId sku) const {
  for (std::size_t i = 0; i < skus.size(); ++i) {
    if (skus[i].sku_id == sku) return i;
  }
  fail(ErrorCategory::kDataIntegrity,
       "sku " + std::to_string(sku) + " not in product " + std::to_string(product_id));
}

void CorpusConfig::validate() const {
  require(n_products > 0 && n_queries > 0, "corpus counts must be positive");
  require(categories >= 2, "need at least 2 categories");
  require(image_dim > 0, "image_dim must be positive");
  require(n_attributes > 0 && n_words > 0, "vocabulary sizes must be positive");
  require(words_per_category > 0 && attributes_per_category > 0, "per-category pools must be non-empty");
  require(min_skus >= 1 && max_skus >= min_skus, "bad sku count range");
  require(min_title_len >= 1 && max_title_len >= min_title_len, "bad title length range");
  require(min_title_attributes >= 0 && max_title_attributes >= min_title_attributes &&
              max_title_attributes <= min_title_len,
          "bad title attribute range");
  require(min_query_len >= 1 && max_query_len >= min_query_len, "bad query length range");
  require(noise >= 0.0 && popularity_exponent >= 0.0, "noise and exponents must be non-negative");
}

void InteractionConfig::validate() const {
  require(n_pairs > 0, "n_pairs must be positive");
  check_ratios(behavior_mix, "behavior_mix");
  check_ratios(scenario_mix, "scenario_mix");
  require(label_noise >= 0.0 && label_noise <= 1.0, "label_noise must be in [0,1]");
  require(anchor_affinity >= 0.0 && anchor_affinity <= 1.0, "anchor_affinity must be in [0,1]");
}

const CorpusRecord& Corpus::product(ProductId id) const {
  if (id >= products.size()) fail(ErrorCategory::kDataIntegrity, "unknown product " + std::to_string(id));
  return products[id];
}

const QueryRecord& Corpus::query(QueryId id) const {
  if (id >= queries.size()) fail(ErrorCategory::kDataIntegrity, "unknown query " + std::to_string(id));
  return queries[id];
}

std::optional<ProductId> Corpus::product_of_sku(SkuId sku) const {
  if (sku >= sku_to_product_.size() || sku_to_product_[sku] == ~ProductId{0}) return std::nullopt;
  return sku_to_product_[sku];
}

void Corpus::reindex() {
  sku_to_product_.clear();
  by_category_.assign(static_cast<std::size_t>(config.categories), {});
  for (std::size_t i = 0; i < products.size(); ++i) {
    const auto& p = products[i];
    if (p.product_id != i) fail(ErrorCategory::kDataIntegrity, "product ids must be dense and ordered");
    if (p.leaf_category < 0 || p.leaf_category >= config.categories) {
      fail(ErrorCategory::kDataIntegrity, "product category out of range");
    }
    by_category_[static_cast<std::size_t>(p.leaf_category)].push_back(p.product_id);
    for (const auto& s : p.skus) {
      if (s.sku_id >= sku_to_product_.size()) sku_to_product_.resize(s.sku_id + 1, ~ProductId{0});
      if (sku_to_product_[s.sku_id] != ~ProductId{0}) fail(ErrorCategory::kDataIntegrity, "duplicate sku id");
      sku_to_product_[s.sku_id] = p.product_id;
    }
  }
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  const auto C = static_cast<std::size_t>(config.categories);
  const int D = config.image_dim;

  // Latent geometry: family centroids, leaf centroids close to their family.
  Rng geo = Rng::derive(config.seed, 1);
  const int families = std::max(1, config.category_families);
  std::vector<std::vector<double>> family_centroids;
  for (int f = 0; f < families; ++f) family_centroids.push_back(gaussian(geo, D, config.family_spread));
  std::vector<std::vector<double>> centroids(C);
  for (std::size_t c = 0; c < C; ++c) {
    const auto& fam = family_centroids[c % static_cast<std::size_t>(families)];
    auto offset = gaussian(geo, D, families > 1 ? config.leaf_spread : config.family_spread);
    centroids[c] = fam;
    if (families <= 1) std::fill(centroids[c].begin(), centroids[c].end(), 0.0);
    for (int d = 0; d < D; ++d) centroids[c][static_cast<std::size_t>(d)] += offset[static_cast<std::size_t>(d)];
  }

  // Per-category vocabulary.
  Rng vocab = Rng::derive(config.seed, 2);
  std::vector<std::vector<TokenId>> cat_words(C), cat_attrs(C);
  for (std::size_t c = 0; c < C; ++c) {
    for (int i = 0; i < config.words_per_category; ++i) {
      cat_words[c].push_back(random_in(vocab, config.word_begin(), config.word_begin() + config.n_words));
    }
    for (int i = 0; i < config.attributes_per_category; ++i) {
      cat_attrs[c].push_back(random_in(vocab, config.attribute_begin(), config.attribute_end()));
    }
  }

  // Products.
  Rng prod = Rng::derive(config.seed, 3);
  std::vector<double> cat_weights(C);
  for (std::size_t c = 0; c < C; ++c) cat_weights[c] = std::pow(static_cast<double>(c + 1), -config.category_skew);
  const WeightedSampler category_sampler(cat_weights);

  std::vector<std::size_t> ranks(config.n_products);
  std::iota(ranks.begin(), ranks.end(), 1);
  prod.shuffle(ranks);

  SkuId next_sku = 0;
  corpus.products.reserve(config.n_products);
  for (std::size_t i = 0; i < config.n_products; ++i) {
    CorpusRecord p;
    p.product_id = i;
    p.leaf_category = static_cast<int>(category_sampler.sample(prod));
    p.popularity = std::pow(static_cast<double>(ranks[i]), -config.popularity_exponent);
    const auto c = static_cast<std::size_t>(p.leaf_category);

    const int title_len = static_cast<int>(prod.range(config.min_title_len, config.max_title_len));
    const int n_attr = static_cast<int>(
        prod.range(config.min_title_attributes, std::min(config.max_title_attributes, title_len)));
    for (int t = 0; t < title_len; ++t) {
      const bool off_topic = prod.bernoulli(config.off_topic_rate);
      TokenId tok;
      if (t < n_attr) {
        tok = off_topic ? random_in(prod, config.attribute_begin(), config.attribute_end()) : pick(prod, cat_attrs[c]);
      } else {
        tok = off_topic ? random_in(prod, config.word_begin(), config.word_begin() + config.n_words)
                        : pick(prod, cat_words[c]);
      }
      p.title_tokens.push_back(tok);
    }
    prod.shuffle(p.title_tokens);
    for (TokenId t : p.title_tokens) {
      if (config.is_attribute(t) &&
          std::find(p.attribute_entities.begin(), p.attribute_entities.end(), t) == p.attribute_entities.end()) {
        p.attribute_entities.push_back(t);
      }
    }

    const auto offset = gaussian(prod, D, config.noise * config.product_spread);
    const int n_skus = static_cast<int>(prod.range(config.min_skus, config.max_skus));
    for (int s = 0; s < n_skus; ++s) {
      Sku sku;
      sku.sku_id = next_sku++;
      sku.image = gaussian(prod, D, config.noise * config.sku_spread);
      for (int d = 0; d < D; ++d) {
        const auto k = static_cast<std::size_t>(d);
        sku.image[k] += centroids[c][k] + offset[k];
      }
      round_to_float(sku.image);
      p.skus.push_back(std::move(sku));
    }
    corpus.products.push_back(std::move(p));
  }
  corpus.reindex();

  // Popularity-weighted samplers per category, and category weights by size.
  std::vector<WeightedSampler> within(C);
  std::vector<double> present_weights(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const auto& ids = corpus.products_by_category()[c];
    if (ids.empty()) continue;
    std::vector<double> w;
    for (ProductId id : ids) w.push_back(corpus.products[id].popularity);
    within[c] = WeightedSampler(w);
    present_weights[c] = static_cast<double>(ids.size());
  }
  const WeightedSampler intent_sampler(present_weights);

  // Queries: modality follows the scenario marginals.
  std::array<double, 3> modality_weights{};
  for (const auto& s : kScenarios) modality_weights[static_cast<std::size_t>(s.query)] += s.default_share;
  const WeightedSampler modality_sampler(modality_weights);

  Rng qr = Rng::derive(config.seed, 4);
  corpus.queries.reserve(config.n_queries);
  for (std::size_t i = 0; i < config.n_queries; ++i) {
    QueryRecord q;
    q.query_id = i;
    q.modality = static_cast<QueryModality>(modality_sampler.sample(qr));
    q.intent_category = static_cast<int>(intent_sampler.sample(qr));
    const auto c = static_cast<std::size_t>(q.intent_category);
    q.anchor_product = corpus.products_by_category()[c][within[c].sample(qr)];
    const auto& anchor = corpus.products[q.anchor_product];
    // Both parts are always drawn so the stream does not depend on modality.
    std::vector<TokenId> text;
    const int len = static_cast<int>(qr.range(config.min_query_len, config.max_query_len));
    for (int t = 0; t < len; ++t) {
      const double u = qr.uniform();
      if (u < 0.4) {
        text.push_back(pick(qr, anchor.title_tokens));
      } else if (u < 0.6) {
        text.push_back(pick(qr, cat_attrs[c]));
      } else if (u < 1.0 - config.off_topic_rate * 0.5) {
        text.push_back(pick(qr, cat_words[c]));
      } else {
        text.push_back(random_in(qr, config.word_begin(), config.word_begin() + config.n_words));
      }
    }
    auto image = anchor.skus[qr.below(anchor.skus.size())].image;
    const auto jitter = gaussian(qr, D, config.noise * config.query_view_noise);
    for (std::size_t d = 0; d < image.size(); ++d) image[d] += jitter[d];
    round_to_float(image);
    if (q.has_text()) q.text_tokens = std::move(text);
    if (q.has_image()) q.image_feature = std::move(image);
    corpus.queries.push_back(std::move(q));
  }
  return corpus;
}

std::vector<InteractionPair> generate_interactions(const Corpus& corpus, const InteractionConfig& config,
                                                   const std::vector<QueryId>& eligible) {
  config.validate();
  const auto C = static_cast<std::size_t>(corpus.config.categories);

  std::array<std::vector<QueryId>, 3> by_modality;
  if (eligible.empty()) {
    for (const auto& q : corpus.queries) by_modality[static_cast<std::size_t>(q.modality)].push_back(q.query_id);
  } else {
    for (QueryId id : eligible) {
      by_modality[static_cast<std::size_t>(corpus.query(id).modality)].push_back(id);
    }
  }
  for (std::size_t s = 0; s < kScenarioCount; ++s) {
    if (config.scenario_mix[s] > 0.0) {
      require(!by_modality[static_cast<std::size_t>(kScenarios[s].query)].empty(),
              "scenario " + std::string(kScenarios[s].name) + " has no eligible queries");
    }
  }

  std::vector<WeightedSampler> within(C);
  std::vector<std::size_t> populated;
  for (std::size_t c = 0; c < C; ++c) {
    const auto& ids = corpus.products_by_category()[c];
    if (ids.empty()) continue;
    std::vector<double> w;
    for (ProductId id : ids) w.push_back(corpus.products[id].popularity);
    within[c] = WeightedSampler(w);
    populated.push_back(c);
  }

  const WeightedSampler scenario_sampler(config.scenario_mix);
  const WeightedSampler behavior_sampler(config.behavior_mix);
  Rng rng = Rng::derive(config.seed, 5);

  std::vector<InteractionPair> out;
  out.reserve(config.n_pairs);
  std::int64_t ts = 1'700'000'000;
  for (std::size_t i = 0; i < config.n_pairs; ++i) {
    InteractionPair pair;
    pair.scenario = static_cast<int>(scenario_sampler.sample(rng));
    const auto& pool = by_modality[static_cast<std::size_t>(kScenarios[static_cast<std::size_t>(pair.scenario)].query)];
    const auto& q = corpus.query(pool[rng.below(pool.size())]);
    pair.query_id = q.query_id;

    std::size_t category = static_cast<std::size_t>(q.intent_category);
    const bool noisy = rng.bernoulli(config.label_noise) && populated.size() > 1;
    if (noisy) {
      do {
        category = populated[rng.below(populated.size())];
      } while (category == static_cast<std::size_t>(q.intent_category));
    }
    const bool to_anchor = rng.bernoulli(config.anchor_affinity);
    if (!noisy && to_anchor) {
      pair.product_id = q.anchor_product;
    } else {
      pair.product_id = corpus.products_by_category()[category][within[category].sample(rng)];
    }
    const auto& product = corpus.products[pair.product_id];
    pair.sku_id = product.skus[rng.below(product.skus.size())].sku_id;
    pair.behavior = static_cast<Behavior>(behavior_sampler.sample(rng));
    ts += 1 + static_cast<std::int64_t>(rng.below(5));
    pair.timestamp = ts;
    out.push_back(pair);
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream meta(dir + "/corpus_meta.json", std::ios::binary | std::ios::trunc);
    if (!meta) fail(ErrorCategory::kIo, "cannot write corpus_meta.json in " + dir);
    meta << config_to_json(corpus.config).dump(2) << '\n';
  }

  std::vector<std::string> lines;
  lines.reserve(corpus.products.size());
  for (const auto& p : corpus.products) {
    ordered_json j;
    j["product_id"] = p.product_id;
    j["leaf_category"] = p.leaf_category;
    j["popularity"] = p.popularity;
    j["title_tokens"] = p.title_tokens;
    j["attribute_entities"] = p.attribute_entities;
    ordered_json skus = ordered_json::array();
    for (const auto& s : p.skus) {
      ordered_json sj;
      sj["sku_id"] = s.sku_id;
      std::vector<float> img(s.image.begin(), s.image.end());
      sj["image"] = img;
      skus.push_back(std::move(sj));
    }
    j["skus"] = std::move(skus);
    lines.push_back(j.dump());
  }
  write_lines(dir + "/products.jsonl", lines);

  lines.clear();
  for (const auto& q : corpus.queries) {
    ordered_json j;
    j["query_id"] = q.query_id;
    j["modality"] = to_string(q.modality);
    j["intent_category"] = q.intent_category;
    j["anchor_product"] = q.anchor_product;
    if (q.has_text()) j["text_tokens"] = q.text_tokens;
    if (q.has_image()) j["image_feature"] = std::vector<float>(q.image_feature.begin(), q.image_feature.end());
    lines.push_back(j.dump());
  }
  write_lines(dir + "/queries.jsonl", lines);

  lines.clear();
  lines.reserve(corpus.interactions.size());
  for (const auto& it : corpus.interactions) {
    ordered_json j;
    j["query_id"] = it.query_id;
    j["product_id"] = it.product_id;
    j["sku_id"] = it.sku_id;
    j["behavior"] = to_string(it.behavior);
    j["scenario"] = it.scenario;
    j["timestamp"] = it.timestamp;
    lines.push_back(j.dump());
  }
  write_lines(dir + "/interactions.jsonl", lines);
}

Corpus load_corpus(const std::string& dir) {
  Corpus corpus;
  {
    std::ifstream meta(dir + "/corpus_meta.json");
    if (!meta) fail(ErrorCategory::kIo, "cannot open " + dir + "/corpus_meta.json");
    try {
      corpus.config = config_from_json(ordered_json::parse(meta));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::kIntegrity, std::string("corpus_meta.json: ") + e.what());
    }
  }
  read_lines(dir + "/products.jsonl", [&](const ordered_json& j) {
    CorpusRecord p;
    p.product_id = j.at("product_id").get<ProductId>();
    p.leaf_category = j.at("leaf_category").get<int>();
    p.popularity = j.at("popularity").get<double>();
    p.title_tokens = j.at("title_tokens").get<std::vector<TokenId>>();
    p.attribute_entities = j.at("attribute_entities").get<std::vector<TokenId>>();
    for (const auto& sj : j.at("skus")) {
      Sku s;
      s.sku_id = sj.at("sku_id").get<SkuId>();
      const auto img = sj.at("image").get<std::vector<float>>();
      s.image.assign(img.begin(), img.end());
      p.skus.push_back(std::move(s));
    }
    corpus.products.push_back(std::move(p));
  });
  read_lines(dir + "/queries.jsonl", [&](const ordered_json& j) {
    QueryRecord q;
    q.query_id = j.at("query_id").get<QueryId>();
    q.modality = parse_modality(j.at("modality").get<std::string>());
    q.intent_category = j.at("intent_category").get<int>();
    q.anchor_product = j.at("anchor_product").get<ProductId>();
    if (q.has_text()) q.text_tokens = j.at("text_tokens").get<std::vector<TokenId>>();
    if (q.has_image()) {
      const auto img = j.at("image_feature").get<std::vector<float>>();
      q.image_feature.assign(img.begin(), img.end());
    }
    corpus.queries.push_back(std::move(q));
  });
  const std::string inter = dir + "/interactions.jsonl";
  if (std::filesystem::exists(inter)) {
    read_lines(inter, [&](const ordered_json& j) {
      InteractionPair it;
      it.query_id = j.at("query_id").get<QueryId>();
      it.product_id = j.at("product_id").get<ProductId>();
      it.sku_id = j.at("sku_id").get<SkuId>();
      it.behavior = parse_behavior(j.at("behavior").get<std::string>());
      it.scenario = j.at("scenario").get<int>();
      it.timestamp = j.at("timestamp").get<std::int64_t>();
      corpus.interactions.push_back(it);
    });
  }
  corpus.reindex();
  for (std::size_t i = 0; i < corpus.queries.size(); ++i) {
    if (corpus.queries[i].query_id != i) fail(ErrorCategory::kDataIntegrity, "query ids must be dense and ordered");
  }
  for (const auto& it : corpus.interactions) {
    corpus.query(it.query_id);
    const auto owner = corpus.product_of_sku(it.sku_id);
    if (!owner || *owner != it.product_id) {
      fail(ErrorCategory::kDataIntegrity, "interaction sku does not belong to its product");
    }
  }
  return corpus;
}

bool is_held_out(QueryId id, std::uint64_t seed, double fraction) {
  const std::uint64_t h = mix64(id ^ mix64(seed + 0x5eed));
  return static_cast<double>(h >> 11) * 0x1.0p-53 < fraction;
}

}  // namespace mmrep
