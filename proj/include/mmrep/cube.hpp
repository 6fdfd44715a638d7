#pragma once

// Content-based user behavior extraction and a logistic CTR head.
//
// Each behavior position b gets s_b = cos(anchor, r_b). Weights are
// softmax_b(a * s_b + c) with a scalar (a, c) per head, and the fused ID and
// multimodal vectors are the weighted sums of e_b and r_b. The item head uses
// the target's multimodal embedding as anchor; the query head mirrors it with
// the current query over the query behavior sequence.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmrep/numerics.hpp"

namespace mmrep {

struct BehaviorSequence {
  std::vector<ItemId> items;
  std::vector<std::int64_t> timestamps;
  Eigen::MatrixXd id_emb;           // d_id x L
  Eigen::MatrixXd mm_emb;           // d_mm x L, zero column where absent
  std::vector<std::uint8_t> present;  // multimodal embedding available

  std::size_t length() const noexcept { return items.size(); }
  double absent_fraction() const;
  // Time-ordered positions and consistent shapes; throws kContract.
  void validate() const;
};

struct FuseHead {
  double a = 1.0;
  double c = 0.0;
};

struct CubeParams {
  FuseHead item_head;
  FuseHead query_head;
  Eigen::VectorXd w;  // CTR head weights over the feature vector
  double b = 0.0;

  static CubeParams zeros(int d_id, int d_mm);
  bool all_finite() const;
};

struct CtrExample {
  std::uint64_t example_id = 0;
  Eigen::VectorXd query;      // query multimodal embedding
  ItemId target = 0;
  Eigen::VectorXd target_id;  // target ID embedding
  Eigen::VectorXd target_mm;  // zero when absent
  bool target_present = true;
  BehaviorSequence item_seq;
  BehaviorSequence query_seq;
  int label = 0;
};

// Cosine per position; positions without a multimodal embedding score 0.
std::vector<double> similarity_sequence(const Eigen::VectorXd& anchor, const BehaviorSequence& seq);

struct FuseResult {
  Eigen::VectorXd fused;
  std::vector<double> weights;
  bool empty = false;  // L = 0: fused is the zero vector of the given dim
};

// softmax(a * s + c) weighted sum of the columns of `values`.
FuseResult fuse(std::span<const double> s, const Eigen::MatrixXd& values, const FuseHead& head);
std::vector<double> fuse_weights(std::span<const double> s, const FuseHead& head);

struct CubeOptions {
  // ID-only ablation: similarities are treated as 0 and every multimodal
  // feature is zeroed.
  bool use_multimodal = true;
};

int feature_dim(int d_id, int d_mm);
std::vector<std::string> feature_names(int d_id, int d_mm);

// Layout: e'_item, r'_item, e'_query, r'_query, target id, target mm, query,
// cos(query, r'_item), cos(query, r'_query), cos(target, r'_item),
// cos(target, r'_query), cos(query, target), then flags: item sequence
// empty, query sequence empty, item absent fraction, query absent fraction,
// target absent.
Eigen::VectorXd ctr_features(const CubeParams& params, const CtrExample& x, const CubeOptions& options = {});

double predict_ctr(const CubeParams& params, const CtrExample& x, const CubeOptions& options = {});

// Log-loss of one example and its gradient with respect to every parameter.
struct CtrGradient {
  double loss = 0.0;
  double probability = 0.0;
  double d_item_a = 0.0;
  double d_item_c = 0.0;
  double d_query_a = 0.0;
  double d_query_c = 0.0;
  Eigen::VectorXd d_w;
  double d_b = 0.0;
};
CtrGradient ctr_gradient(const CubeParams& params, const CtrExample& x, const CubeOptions& options = {});

struct CtrTrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double learning_rate = 0.5;
  std::uint64_t seed = 7;
  CubeOptions options;
};

struct CtrTrainResult {
  CubeParams params;
  std::vector<double> loss_curve;  // mean log-loss per mini-batch
  std::vector<std::string> warnings;
};

// Supplies the n-th example; lets callers build examples lazily.
using ExampleSource = std::function<CtrExample(std::size_t)>;

CtrTrainResult train_ctr(CubeParams initial, std::size_t n_examples, const ExampleSource& examples,
                         const std::vector<int>& labels, const CtrTrainConfig& config);

std::vector<double> predict_all(const CubeParams& params, std::size_t n_examples, const ExampleSource& examples,
                                const CubeOptions& options = {});

}  // namespace mmrep
