#pragma once

// Synthetic click data for the CTR head. Users hold 1-3 interest categories;
// their item and query behavior sequences lean toward those categories, and
// a shown target is clicked with high probability when its category is one
// of the user's interests. Records carry ids only; an EmbeddingBank resolves
// them into CtrExamples when needed.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmrep/corpus.hpp"
#include "mmrep/cube.hpp"

namespace mmrep {

struct CtrRecord {
  std::uint64_t example_id = 0;
  std::uint64_t user_id = 0;
  QueryId query_id = 0;
  ProductId target = 0;
  std::vector<ProductId> item_seq;
  std::vector<std::int64_t> item_times;
  std::vector<QueryId> query_seq;
  std::vector<std::int64_t> query_times;
  int label = 0;

  bool operator==(const CtrRecord&) const = default;
};

struct CtrDataConfig {
  std::uint64_t seed = 7;
  std::size_t n_users = 1000;
  std::size_t examples_per_user = 20;
  std::size_t sequence_length = 100;
  std::size_t query_sequence_length = 20;
  int min_interests = 1;
  int max_interests = 3;
  double in_interest_rate = 0.8;   // behavior positions drawn from interests
  double target_match_rate = 0.5;  // targets drawn from interests
  double click_match = 0.9;
  double click_other = 0.05;
  double held_out_fraction = 0.3;  // by user

  void validate() const;
};

std::vector<CtrRecord> generate_ctr_records(const Corpus& corpus, const CtrDataConfig& config);
bool ctr_held_out(const CtrRecord& record, const CtrDataConfig& config);

void save_ctr_records(const std::vector<CtrRecord>& records, const std::string& path);
std::vector<CtrRecord> load_ctr_records(const std::string& path);

// Fixed random ID embedding, unit variance per vector norm.
Eigen::VectorXd id_embedding(std::uint64_t id, int domain, int d_id, std::uint64_t seed);

using ProductLookup = std::function<std::optional<Embedding>(ProductId)>;
using QueryEncoder = std::function<Embedding(QueryId)>;

// Dense multimodal and ID embeddings for every product and query.
class EmbeddingBank {
 public:
  EmbeddingBank(const Corpus& corpus, const ProductLookup& products, const QueryEncoder& queries, int d_id,
                std::uint64_t id_seed);

  int d_id() const noexcept { return d_id_; }
  int d_mm() const noexcept { return d_mm_; }
  std::size_t missing_products() const noexcept { return missing_; }

  CtrExample example(const CtrRecord& record) const;

 private:
  int d_id_;
  int d_mm_ = 0;
  std::size_t missing_ = 0;
  Eigen::MatrixXd product_mm_;
  std::vector<std::uint8_t> product_present_;
  Eigen::MatrixXd product_id_;
  Eigen::MatrixXd query_mm_;
  Eigen::MatrixXd query_id_;
};

// "example_id,probability"
void write_predictions(const std::string& path, const std::vector<CtrRecord>& records,
                       const std::vector<double>& probabilities);

}  // namespace mmrep
