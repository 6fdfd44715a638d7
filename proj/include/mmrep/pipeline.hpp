#pragma once

// End-to-end pipeline: corpus -> curation -> two-stage training -> export
// into the representation table -> retrieval and CTR evaluation.
// Configuration is a flat key=value map so it can be read from a file,
// overridden on the command line and echoed back verbatim.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmrep/corpus.hpp"
#include "mmrep/ctr_data.hpp"
#include "mmrep/cube.hpp"
#include "mmrep/curation.hpp"
#include "mmrep/encoder.hpp"
#include "mmrep/evalharness.hpp"
#include "mmrep/trainer.hpp"
#include "mmrep/versioned_table.hpp"

namespace mmrep {

struct PipelineConfig {
  std::uint64_t seed = 7;
  CorpusConfig corpus;
  InteractionConfig interactions;
  double held_out_fraction = 0.2;  // queries kept out of training
  CurationConfig curation;
  double data_fraction = 1.0;      // share of training triplets used

  int d_tok = 32;
  int hidden = 64;
  int d_full = 128;
  MrlConfig mrl;  // empty: defaults for d_full

  bool stage1_enabled = true;
  TrainerConfig stage1;
  TrainerConfig stage2;

  ItemView export_view = ItemView::kTitleImage;
  DType export_dtype = DType::kF32;

  CtrDataConfig ctr;
  CtrTrainConfig ctr_train;
  int d_id = 16;
  double ctr_initial_a = 5.0;

  PipelineConfig();
  // Sets every component seed from one master seed.
  void set_seed(std::uint64_t s);
  void validate() const;
};

std::vector<std::string> config_keys();
// Every key with its current value, in a fixed order.
std::vector<std::pair<std::string, std::string>> to_key_values(const PipelineConfig& config);
// Unknown keys and malformed values throw kContract.
void set_key_value(PipelineConfig& config, const std::string& key, const std::string& value);
// "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> read_key_value_file(const std::string& path);
std::string format_key_values(const PipelineConfig& config);

struct PipelineData {
  Corpus corpus;
  std::vector<QueryId> train_queries;
  std::vector<QueryId> held_out;
  std::vector<InteractionPair> interactions;
  std::vector<CtrRecord> ctr_records;
};

PipelineData prepare_data(const PipelineConfig& config);

// A data directory holds corpus/ and ctr_records.jsonl. The query split is
// recomputed from the seed on load.
void save_data(const PipelineData& data, const std::string& dir);
PipelineData load_data(const PipelineConfig& config, const std::string& dir);

// Category histogram of CTR exposures (record targets), the alignment target.
CategoryHistogram exposure_histogram(const PipelineData& data);

CurationResult curate(const PipelineConfig& config, const PipelineData& data);

// Deterministic subset of ceil(fraction * n) triplets (at least one global batch).
std::vector<TrainingTriplet> take_fraction(const std::vector<TrainingTriplet>& triplets, double fraction,
                                           std::size_t minimum, std::uint64_t seed);

EncoderParams initial_encoder(const PipelineConfig& config, const PipelineData& data);

struct EncoderRun {
  EncoderParams initial;
  EncoderParams after_stage1;
  EncoderParams final_params;
  TrainOutcome stage1;
  TrainOutcome stage2;
  CurationReport curation;
};

// on_step sees cumulative step numbers: stage-2 steps continue after stage 1.
EncoderRun train_encoder(const PipelineConfig& config, const PipelineData& data, const StepCallback& on_step = {});
// Same, with stage-2 triplets supplied instead of curated here.
EncoderRun train_encoder(const PipelineConfig& config, const PipelineData& data,
                         const std::vector<TrainingTriplet>& stage2_triplets, const StepCallback& on_step = {});

// Encodes every product in the export view, upserts and flushes once.
std::unique_ptr<VersionedTable> export_embeddings(const EncoderParams& params, const Corpus& corpus, ItemView view,
                                                  TableOptions options);

struct RecallEval {
  std::vector<MetricReport> reports;  // one per cutoff
  std::size_t queries = 0;
  double recall_at(std::size_t k) const;
};

RecallEval eval_recall(const EncoderParams& params, const CandidateSet& candidates, const Corpus& corpus,
                       const std::vector<QueryId>& queries, RecallMode mode = RecallMode::kTopKPrecision,
                       const std::vector<std::size_t>& cutoffs = {1, 5, 10, 20, 50});

struct CtrEval {
  double auc = 0.5;
  double auc_id_only = 0.5;
  CubeParams params;
  std::vector<double> loss_curve;
  std::vector<CtrRecord> test_records;
  std::vector<double> test_predictions;
  std::vector<std::string> warnings;
};

CtrEval eval_ctr(const PipelineConfig& config, const PipelineData& data, const VersionedTable& table,
                 const EncoderParams& params, bool with_ablation = true);

// Held-out image-query Recall@1 (top-k precision) and held-out CTR AUC.
MetricPoint evaluate_checkpoint(const PipelineConfig& config, const PipelineData& data, const EncoderParams& params);

struct PipelineResult {
  RecallEval recall_image;
  RecallEval recall_all;
  CtrEval ctr;
  EncoderRun run;
};

// Runs everything and writes the artifacts into out_dir.
PipelineResult run_pipeline(const PipelineConfig& config, const std::string& out_dir);

SweepTable pipeline_sweep(const SweepSpec& spec, const PipelineConfig& config);

}  // namespace mmrep
