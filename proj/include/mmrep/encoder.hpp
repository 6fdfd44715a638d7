#pragma once

// Small trainable multimodal encoder. Every input piece (a title token or an
// image feature vector) is projected to d_tok, passed through a shared
// two-layer MLP, mean-pooled across pieces and L2-normalized. Pooling makes
// the output independent of piece order.
//
// Checkpoint layout (little-endian):
//   char[8]  "MOONENC1"
//   u32      vocab, image_dim, d_tok, hidden, d_full
//   f32[]    token table      vocab x d_tok      (row-major)
//   f32[]    image projection image_dim x d_tok  (row-major)
//   f32[]    layer 1 weight   d_tok x hidden, then bias[hidden]
//   f32[]    layer 2 weight   hidden x d_full, then bias[d_full]

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmrep/corpus.hpp"
#include "mmrep/numerics.hpp"

namespace mmrep {

struct EncoderDims {
  int vocab = 0;
  int image_dim = 0;
  int d_tok = 32;
  int hidden = 64;
  int d_full = 128;

  bool operator==(const EncoderDims&) const = default;
};

struct EncoderParams {
  EncoderDims dims;
  // Matrices are stored output x input so that column-major storage equals
  // the row-major input x output layout of the checkpoint.
  Eigen::MatrixXd token_table;  // d_tok x vocab
  Eigen::MatrixXd image_proj;   // d_tok x image_dim
  Eigen::MatrixXd w1;           // hidden x d_tok
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // d_full x hidden
  Eigen::VectorXd b2;

  static EncoderParams zeros(const EncoderDims& dims);
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static EncoderParams init(const EncoderDims& dims, std::uint64_t seed);

  std::size_t parameter_count() const;
  void set_zero();
  bool all_finite() const;

  // Visits every parameter block in checkpoint order.
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    fn(token_table.data(), static_cast<std::size_t>(token_table.size()));
    fn(image_proj.data(), static_cast<std::size_t>(image_proj.size()));
    fn(w1.data(), static_cast<std::size_t>(w1.size()));
    fn(b1.data(), static_cast<std::size_t>(b1.size()));
    fn(w2.data(), static_cast<std::size_t>(w2.size()));
    fn(b2.data(), static_cast<std::size_t>(b2.size()));
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    const_cast<EncoderParams*>(this)->for_each_block(
        [&](double* p, std::size_t n) { fn(static_cast<const double*>(p), n); });
  }

  // Flat view by global index, used by finite-difference checks.
  double& at(std::size_t flat_index);
};

// One encoder input. Image spans must outlive the call.
struct EncoderInput {
  std::vector<TokenId> tokens;
  std::vector<std::span<const double>> images;

  std::size_t pieces() const noexcept { return tokens.size() + images.size(); }
};

struct ForwardCache {
  std::vector<TokenId> tokens;
  std::vector<std::span<const double>> images;
  Eigen::MatrixXd x;       // d_tok x pieces
  Eigen::MatrixXd hidden;  // post-activation, hidden x pieces
  Eigen::VectorXd pooled_hidden;
  Eigen::VectorXd output;  // unit norm
  double norm = 0.0;
};

// Forward pass keeping activations for backward(). Throws kContract on
// empty input and kZeroVector if the pooled output is exactly zero.
ForwardCache forward(const EncoderParams& params, const EncoderInput& input);

// Accumulates d(loss)/d(params) into grads given d(loss)/d(output).
void backward(const EncoderParams& params, const ForwardCache& cache, const Eigen::VectorXd& grad_output,
              EncoderParams& grads);

Embedding encode(const EncoderParams& params, const EncoderInput& input);

struct MrlConfig {
  std::vector<int> dims;
  std::vector<double> weights;

  static MrlConfig single(int d_full) { return {{d_full}, {1.0}}; }
  static MrlConfig defaults(int d_full);  // {d/8, d/4, d/2, d} with unit weights
  void validate(int d_full) const;
};

// View m = first m components, renormalized. Throws kContract if a dim
// exceeds the embedding, kZeroVector for an all-zero prefix.
std::vector<Embedding> mrl_views(const Embedding& e, const MrlConfig& cfg);
Embedding mrl_view(std::span<const double> e, int m);

// Rendering of corpus records into encoder inputs.
EncoderInput render_item(const CorpusRecord& product, ItemView view, const CorpusConfig& config,
                         std::span<const SkuId> skus = {});
EncoderInput render_query(const QueryRecord& query);

void save_checkpoint(const EncoderParams& params, const std::string& path);
EncoderParams load_checkpoint(const std::string& path);

EncoderDims dims_for(const CorpusConfig& config, int d_tok = 32, int hidden = 64, int d_full = 128);

}  // namespace mmrep
