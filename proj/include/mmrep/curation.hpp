#pragma once

// Purchase-pair curation: similarity-based dedup per SKU, SKU-to-product
// merge, category distribution alignment, entity-count filtering and hard
// negative attachment. Stages run in that fixed order.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmrep/corpus.hpp"
#include "mmrep/encoder.hpp"

namespace mmrep {

struct CuratedPair {
  QueryId query_id = 0;
  ProductId product_id = 0;
  std::vector<SkuId> sku_ids;  // one before merge, the product's union after
  int scenario = 0;
  double score = 0.0;  // dedup similarity, lower is harder
};

struct TrainingTriplet {
  QueryId query_id = 0;
  ProductId positive = 0;
  std::vector<SkuId> positive_skus;  // empty means every SKU of the product
  ItemView view = ItemView::kTitleImage;
  std::optional<ProductId> hard_negative;
};

struct CategoryHistogram {
  std::map<int, std::uint64_t> counts;

  std::uint64_t total() const;
  double proportion(int category) const;
  static CategoryHistogram of(const std::vector<CuratedPair>& pairs, const Corpus& corpus);
};

using PairScorer = std::function<double(const CuratedPair&)>;

// Bag-of-tokens and image cosine on raw features, averaged over the
// modalities both sides share.
PairScorer raw_feature_scorer(const Corpus& corpus);
// Cosine between encoded query and encoded item under a checkpoint.
PairScorer encoder_scorer(const Corpus& corpus, const EncoderParams& params);

// Keeps, per purchased SKU, the pair with the lowest score (ties: lowest
// query id). Survivors keep their input order.
std::vector<CuratedPair> dedup_by_similarity(const std::vector<CuratedPair>& pairs, const PairScorer& scorer);

// One pair per product carrying the union of the merged pairs' SKUs.
// Throws kDataIntegrity for a SKU that resolves to no product.
std::vector<CuratedPair> merge_skus(const std::vector<CuratedPair>& pairs, const Corpus& corpus);

struct AlignResult {
  std::vector<CuratedPair> pairs;
  std::vector<std::string> warnings;
};

// Resamples per category to the target proportions while preserving the
// total count. Under-represented categories are topped up by duplicating a
// pair with a freshly drawn query of the same intent category. Target mass
// on categories absent from the input is reported and redistributed.
AlignResult align_distribution(const std::vector<CuratedPair>& pairs, const CategoryHistogram& target,
                               const Corpus& corpus, std::uint64_t seed,
                               const std::vector<QueryId>& query_pool = {});

// Distinct lexicon tokens in (query text ∪ item title) must exceed min_entities.
std::size_t entity_count(const CuratedPair& pair, const Corpus& corpus);
std::vector<CuratedPair> entity_filter(const std::vector<CuratedPair>& pairs, const Corpus& corpus,
                                       std::size_t min_entities = 2);

struct AttachResult {
  std::vector<TrainingTriplet> triplets;
  std::size_t shortfall = 0;  // pairs left without a hard negative
};

AttachResult attach_hard_negatives(const std::vector<CuratedPair>& pairs, const Corpus& corpus, std::uint64_t seed);

struct StageCount {
  std::string stage;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct CurationReport {
  std::vector<StageCount> stages;
  std::vector<std::string> warnings;
  std::size_t hard_negative_shortfall = 0;

  std::string to_json() const;
};

struct CurationConfig {
  std::uint64_t seed = 7;
  std::size_t min_entities = 2;
  bool purchases_only = true;
};

struct CurationResult {
  std::vector<TrainingTriplet> triplets;
  CurationReport report;
};

// Full pipeline over the interactions of the eligible queries.
CurationResult run_curation(const Corpus& corpus, const std::vector<InteractionPair>& interactions,
                            const PairScorer& scorer, const CategoryHistogram& target, const CurationConfig& config,
                            const std::vector<QueryId>& query_pool = {});

// Stage-one pairs: every interaction becomes a triplet without a hard negative.
std::vector<TrainingTriplet> interaction_triplets(const Corpus& corpus, const std::vector<InteractionPair>& interactions);

// JSONL: {"query_id","positive","positive_skus","view","hard_negative"}; a
// missing hard negative is null.
void save_triplets(const std::vector<TrainingTriplet>& triplets, const std::string& path);
std::vector<TrainingTriplet> load_triplets(const std::string& path);

}  // namespace mmrep
