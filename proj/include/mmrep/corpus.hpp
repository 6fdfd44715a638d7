#pragma once

// Synthetic e-commerce corpus: products with several SKU images and a title,
// queries in three modalities, and a popularity-skewed interaction log.
//
// Files (one JSON object per line, fixed key order):
//   corpus_meta.json    generation config and vocabulary layout
//   products.jsonl      {"product_id","leaf_category","popularity","title_tokens",
//                        "attribute_entities","skus":[{"sku_id","image"}]}
//   queries.jsonl       {"query_id","modality","intent_category","anchor_product",
//                        "text_tokens"?,"image_feature"?}
//   interactions.jsonl  {"query_id","product_id","sku_id","behavior","scenario","timestamp"}

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmrep/numerics.hpp"

namespace mmrep {

using TokenId = std::int32_t;
using ProductId = std::uint64_t;
using SkuId = std::uint64_t;
using QueryId = std::uint64_t;

enum class QueryModality { kText, kImage, kTextImage };
enum class Behavior { kClick, kFavorite, kCart, kPurchase };

// How the item side of a training pair is rendered to the encoder.
enum class ItemView { kRicherText, kImage, kTitleImage, kRicherTextImage };

std::string_view to_string(QueryModality m);
std::string_view to_string(Behavior b);
std::string_view to_string(ItemView v);
QueryModality parse_modality(std::string_view s);
Behavior parse_behavior(std::string_view s);
ItemView parse_item_view(std::string_view s);

// The nine cross-modal retrieval scenarios of the first training stage.
struct Scenario {
  std::string_view name;
  QueryModality query;
  ItemView item;
  double default_share;  // relative sample count, billions
};

inline constexpr std::size_t kScenarioCount = 9;
const std::array<Scenario, kScenarioCount>& scenarios();
std::array<double, kScenarioCount> default_scenario_mix();

struct Sku {
  SkuId sku_id = 0;
  std::vector<double> image;
};

struct CorpusRecord {
  ProductId product_id = 0;
  int leaf_category = 0;
  double popularity = 0.0;
  std::vector<TokenId> title_tokens;
  std::vector<TokenId> attribute_entities;  // subset of title_tokens from the lexicon
  std::vector<Sku> skus;

  std::size_t sku_index(SkuId sku) const;  // throws kDataIntegrity if absent
};

struct QueryRecord {
  QueryId query_id = 0;
  QueryModality modality = QueryModality::kText;
  int intent_category = 0;
  ProductId anchor_product = 0;  // product the query was composed from
  std::vector<TokenId> text_tokens;
  std::vector<double> image_feature;

  bool has_text() const noexcept { return modality != QueryModality::kImage; }
  bool has_image() const noexcept { return modality != QueryModality::kText; }
};

struct InteractionPair {
  QueryId query_id = 0;
  ProductId product_id = 0;
  SkuId sku_id = 0;
  Behavior behavior = Behavior::kClick;
  int scenario = 0;
  std::int64_t timestamp = 0;
};

struct CorpusConfig {
  std::uint64_t seed = 7;
  std::size_t n_products = 10000;
  std::size_t n_queries = 2000;
  int categories = 50;
  // Leaf categories are grouped into families whose centroids sit close
  // together; 0 or 1 disables grouping.
  int category_families = 10;
  int image_dim = 32;
  double family_spread = 1.0;
  double leaf_spread = 0.45;
  // Multiplier on all per-product, per-SKU and per-query perturbations.
  double noise = 1.0;
  double product_spread = 0.30;
  double sku_spread = 0.12;
  double query_view_noise = 0.30;
  double popularity_exponent = 1.2;
  double category_skew = 0.5;
  int n_attributes = 200;
  int n_words = 2000;
  int words_per_category = 30;
  int attributes_per_category = 12;
  double off_topic_rate = 0.2;
  int min_skus = 1;
  int max_skus = 4;
  int min_title_len = 6;
  int max_title_len = 12;
  int min_title_attributes = 1;
  int max_title_attributes = 5;
  int min_query_len = 2;
  int max_query_len = 6;

  // Token layout: [0, C) category tokens, then the attribute lexicon, then words.
  TokenId category_token(int category) const { return category; }
  TokenId attribute_begin() const { return categories; }
  TokenId attribute_end() const { return categories + n_attributes; }
  TokenId word_begin() const { return attribute_end(); }
  int vocab_size() const { return categories + n_attributes + n_words; }
  bool is_attribute(TokenId t) const { return t >= attribute_begin() && t < attribute_end(); }

  void validate() const;
};

struct InteractionConfig {
  std::uint64_t seed = 7;
  std::size_t n_pairs = 200000;
  std::array<double, 4> behavior_mix = {0.6, 0.15, 0.15, 0.1};  // click, favorite, cart, purchase
  std::array<double, kScenarioCount> scenario_mix = default_scenario_mix();
  double label_noise = 0.05;
  // Probability that a category-matched pair lands on the query's anchor product.
  double anchor_affinity = 0.3;

  void validate() const;
};

class Corpus {
 public:
  CorpusConfig config;
  std::vector<CorpusRecord> products;  // products[i].product_id == i
  std::vector<QueryRecord> queries;    // queries[i].query_id == i
  std::vector<InteractionPair> interactions;

  const CorpusRecord& product(ProductId id) const;
  const QueryRecord& query(QueryId id) const;
  std::optional<ProductId> product_of_sku(SkuId sku) const;
  // Product ids per leaf category, ascending.
  const std::vector<std::vector<ProductId>>& products_by_category() const { return by_category_; }

  // Rebuilds lookup tables after products are replaced.
  void reindex();

 private:
  std::vector<ProductId> sku_to_product_;
  std::vector<std::vector<ProductId>> by_category_;
};

Corpus generate_corpus(const CorpusConfig& config);

// Draws n_pairs interactions for the given eligible queries (all queries
// when the list is empty). Timestamps are strictly increasing.
std::vector<InteractionPair> generate_interactions(const Corpus& corpus, const InteractionConfig& config,
                                                   const std::vector<QueryId>& eligible = {});

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

// Deterministic held-out split over query ids.
bool is_held_out(QueryId id, std::uint64_t seed, double fraction);

}  // namespace mmrep
