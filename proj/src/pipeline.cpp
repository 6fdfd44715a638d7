#include "mmrep/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "mmrep/errors.hpp"
#include "mmrep/random.hpp"

namespace mmrep {

PipelineConfig::PipelineConfig() {
  stage1.stage = TrainStage::kInfoNce;
  stage1.use_hard_negatives = false;
  stage1.queue_depth = 0;
  stage1.steps = 200;
  stage1.learning_rate = 0.002;
  stage2.stage = TrainStage::kCircle;
  stage2.use_hard_negatives = true;
  stage2.queue_depth = 5;
  stage2.steps = 500;
  // The summed circle loss over hundreds of negatives at a small temperature
  // produces gradients two to three orders larger than InfoNCE.
  stage2.learning_rate = 5e-6;
  set_seed(seed);
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  corpus.seed = s;
  interactions.seed = s;
  curation.seed = s;
  stage1.seed = s;
  stage2.seed = s;
  ctr.seed = s;
  ctr_train.seed = s;
}

void PipelineConfig::validate() const {
  corpus.validate();
  interactions.validate();
  require(held_out_fraction > 0.0 && held_out_fraction < 1.0, "held_out_fraction must lie in (0,1)");
  require(data_fraction > 0.0 && data_fraction <= 1.0, "data_fraction must lie in (0,1]");
  require(d_tok >= 1 && hidden >= 1 && d_full >= 1, "encoder dims must be positive");
  if (!mrl.dims.empty()) mrl.validate(d_full);
  stage1.validate();
  stage2.validate();
  ctr.validate();
  require(d_id >= 1, "d_id must be positive");
  require(ctr_train.epochs >= 1 && ctr_train.batch_size >= 1 && ctr_train.learning_rate > 0.0,
          "ctr training settings must be positive");
}

// ---------------------------------------------------------------- key=value

namespace {

std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(ItemView v) { return std::string(to_string(v)); }
std::string format_value(DType v) { return std::string(to_string(v)); }
std::string format_value(TrainStage v) { return std::string(to_string(v)); }

std::string format_value(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
  requires std::is_integral_v<T>
std::string format_value(T v) {
  return std::to_string(v);
}

template <typename Range>
std::string format_list(const Range& r) {
  std::string out;
  for (const auto& v : r) {
    if (!out.empty()) out += ',';
    out += format_value(v);
  }
  return out;
}

std::string format_value(const std::vector<int>& v) { return format_list(v); }
std::string format_value(const std::vector<double>& v) { return format_list(v); }
template <std::size_t N>
std::string format_value(const std::array<double, N>& v) {
  return format_list(v);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  fail(ErrorCategory::kContract, "invalid value for " + key + ": '" + value + "'");
}

double parse_double(const std::string& key, const std::string& s) {
  if (s.empty()) bad_value(key, s);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) bad_value(key, s);
  return v;
}

template <typename T>
T parse_integral(const std::string& key, const std::string& s) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad_value(key, s);
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& s) {
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    bad_value(key, s);
  } else if constexpr (std::is_integral_v<T>) {
    return parse_integral<T>(key, s);
  } else if constexpr (std::is_same_v<T, double>) {
    return parse_double(key, s);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return s;
  } else if constexpr (std::is_same_v<T, ItemView>) {
    return parse_item_view(s);
  } else if constexpr (std::is_same_v<T, DType>) {
    return parse_dtype(s);
  } else if constexpr (std::is_same_v<T, TrainStage>) {
    return parse_stage(s);
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::vector<int> out;
    for (const auto& p : split_list(s)) out.push_back(parse_integral<int>(key, p));
    return out;
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    std::vector<double> out;
    for (const auto& p : split_list(s)) out.push_back(parse_double(key, p));
    return out;
  } else {
    // std::array<double, N>
    const auto parts = split_list(s);
    T out{};
    if (parts.size() != out.size()) bad_value(key, s);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = parse_double(key, parts[i]);
    return out;
  }
}

struct Entry {
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <typename Access>
Entry entry(std::string key, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<PipelineConfig&>()))>;
  return Entry{key, [access](const PipelineConfig& c) { return format_value(access(const_cast<PipelineConfig&>(c))); },
               [access, key](PipelineConfig& c, const std::string& v) { access(c) = parse_value<T>(key, v); }};
}

template <typename Stage>
void trainer_entries(std::vector<Entry>& e, const std::string& p, Stage stage) {
  e.push_back(entry(p + ".steps", [stage](PipelineConfig& c) -> auto& { return stage(c).steps; }));
  e.push_back(entry(p + ".stage", [stage](PipelineConfig& c) -> auto& { return stage(c).stage; }));
  e.push_back(entry(p + ".batch_per_shard", [stage](PipelineConfig& c) -> auto& { return stage(c).batch_per_shard; }));
  e.push_back(entry(p + ".shards", [stage](PipelineConfig& c) -> auto& { return stage(c).shards; }));
  e.push_back(entry(p + ".queue_depth", [stage](PipelineConfig& c) -> auto& { return stage(c).queue_depth; }));
  e.push_back(entry(p + ".tau", [stage](PipelineConfig& c) -> auto& { return stage(c).tau; }));
  e.push_back(entry(p + ".learning_rate", [stage](PipelineConfig& c) -> auto& { return stage(c).learning_rate; }));
  e.push_back(entry(p + ".use_hard_negatives",
                    [stage](PipelineConfig& c) -> auto& { return stage(c).use_hard_negatives; }));
  e.push_back(entry(p + ".seed", [stage](PipelineConfig& c) -> auto& { return stage(c).seed; }));
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> e;
    using C = PipelineConfig;
    e.push_back(Entry{"seed", [](const C& c) { return format_value(c.seed); },
                      [](C& c, const std::string& v) { c.set_seed(parse_value<std::uint64_t>("seed", v)); }});
    e.push_back(entry("corpus.seed", [](C& c) -> auto& { return c.corpus.seed; }));
    e.push_back(entry("corpus.n_products", [](C& c) -> auto& { return c.corpus.n_products; }));
    e.push_back(entry("corpus.n_queries", [](C& c) -> auto& { return c.corpus.n_queries; }));
    e.push_back(entry("corpus.categories", [](C& c) -> auto& { return c.corpus.categories; }));
    e.push_back(entry("corpus.category_families", [](C& c) -> auto& { return c.corpus.category_families; }));
    e.push_back(entry("corpus.image_dim", [](C& c) -> auto& { return c.corpus.image_dim; }));
    e.push_back(entry("corpus.family_spread", [](C& c) -> auto& { return c.corpus.family_spread; }));
    e.push_back(entry("corpus.leaf_spread", [](C& c) -> auto& { return c.corpus.leaf_spread; }));
    e.push_back(entry("corpus.noise", [](C& c) -> auto& { return c.corpus.noise; }));
    e.push_back(entry("corpus.product_spread", [](C& c) -> auto& { return c.corpus.product_spread; }));
    e.push_back(entry("corpus.sku_spread", [](C& c) -> auto& { return c.corpus.sku_spread; }));
    e.push_back(entry("corpus.query_view_noise", [](C& c) -> auto& { return c.corpus.query_view_noise; }));
    e.push_back(entry("corpus.popularity_exponent", [](C& c) -> auto& { return c.corpus.popularity_exponent; }));
    e.push_back(entry("corpus.category_skew", [](C& c) -> auto& { return c.corpus.category_skew; }));
    e.push_back(entry("corpus.n_attributes", [](C& c) -> auto& { return c.corpus.n_attributes; }));
    e.push_back(entry("corpus.n_words", [](C& c) -> auto& { return c.corpus.n_words; }));
    e.push_back(entry("corpus.words_per_category", [](C& c) -> auto& { return c.corpus.words_per_category; }));
    e.push_back(
        entry("corpus.attributes_per_category", [](C& c) -> auto& { return c.corpus.attributes_per_category; }));
    e.push_back(entry("corpus.off_topic_rate", [](C& c) -> auto& { return c.corpus.off_topic_rate; }));
    e.push_back(entry("corpus.min_skus", [](C& c) -> auto& { return c.corpus.min_skus; }));
    e.push_back(entry("corpus.max_skus", [](C& c) -> auto& { return c.corpus.max_skus; }));
    e.push_back(entry("corpus.min_title_len", [](C& c) -> auto& { return c.corpus.min_title_len; }));
    e.push_back(entry("corpus.max_title_len", [](C& c) -> auto& { return c.corpus.max_title_len; }));
    e.push_back(entry("corpus.min_title_attributes", [](C& c) -> auto& { return c.corpus.min_title_attributes; }));
    e.push_back(entry("corpus.max_title_attributes", [](C& c) -> auto& { return c.corpus.max_title_attributes; }));
    e.push_back(entry("corpus.min_query_len", [](C& c) -> auto& { return c.corpus.min_query_len; }));
    e.push_back(entry("corpus.max_query_len", [](C& c) -> auto& { return c.corpus.max_query_len; }));
    e.push_back(entry("interactions.seed", [](C& c) -> auto& { return c.interactions.seed; }));
    e.push_back(entry("interactions.n_pairs", [](C& c) -> auto& { return c.interactions.n_pairs; }));
    e.push_back(entry("interactions.behavior_mix", [](C& c) -> auto& { return c.interactions.behavior_mix; }));
    e.push_back(entry("interactions.scenario_mix", [](C& c) -> auto& { return c.interactions.scenario_mix; }));
    e.push_back(entry("interactions.label_noise", [](C& c) -> auto& { return c.interactions.label_noise; }));
    e.push_back(entry("interactions.anchor_affinity", [](C& c) -> auto& { return c.interactions.anchor_affinity; }));
    e.push_back(entry("held_out_fraction", [](C& c) -> auto& { return c.held_out_fraction; }));
    e.push_back(entry("curation.seed", [](C& c) -> auto& { return c.curation.seed; }));
    e.push_back(entry("curation.min_entities", [](C& c) -> auto& { return c.curation.min_entities; }));
    e.push_back(entry("curation.purchases_only", [](C& c) -> auto& { return c.curation.purchases_only; }));
    e.push_back(entry("data_fraction", [](C& c) -> auto& { return c.data_fraction; }));
    e.push_back(entry("encoder.d_tok", [](C& c) -> auto& { return c.d_tok; }));
    e.push_back(entry("encoder.hidden", [](C& c) -> auto& { return c.hidden; }));
    e.push_back(entry("encoder.d_full", [](C& c) -> auto& { return c.d_full; }));
    e.push_back(entry("mrl.dims", [](C& c) -> auto& { return c.mrl.dims; }));
    e.push_back(entry("mrl.weights", [](C& c) -> auto& { return c.mrl.weights; }));
    e.push_back(entry("stage1.enabled", [](C& c) -> auto& { return c.stage1_enabled; }));
    trainer_entries(e, "stage1", [](C& c) -> TrainerConfig& { return c.stage1; });
    trainer_entries(e, "stage2", [](C& c) -> TrainerConfig& { return c.stage2; });
    e.push_back(entry("export.view", [](C& c) -> auto& { return c.export_view; }));
    e.push_back(entry("export.dtype", [](C& c) -> auto& { return c.export_dtype; }));
    e.push_back(entry("ctr.seed", [](C& c) -> auto& { return c.ctr.seed; }));
    e.push_back(entry("ctr.n_users", [](C& c) -> auto& { return c.ctr.n_users; }));
    e.push_back(entry("ctr.examples_per_user", [](C& c) -> auto& { return c.ctr.examples_per_user; }));
    e.push_back(entry("ctr.sequence_length", [](C& c) -> auto& { return c.ctr.sequence_length; }));
    e.push_back(entry("ctr.query_sequence_length", [](C& c) -> auto& { return c.ctr.query_sequence_length; }));
    e.push_back(entry("ctr.min_interests", [](C& c) -> auto& { return c.ctr.min_interests; }));
    e.push_back(entry("ctr.max_interests", [](C& c) -> auto& { return c.ctr.max_interests; }));
    e.push_back(entry("ctr.in_interest_rate", [](C& c) -> auto& { return c.ctr.in_interest_rate; }));
    e.push_back(entry("ctr.target_match_rate", [](C& c) -> auto& { return c.ctr.target_match_rate; }));
    e.push_back(entry("ctr.click_match", [](C& c) -> auto& { return c.ctr.click_match; }));
    e.push_back(entry("ctr.click_other", [](C& c) -> auto& { return c.ctr.click_other; }));
    e.push_back(entry("ctr.held_out_fraction", [](C& c) -> auto& { return c.ctr.held_out_fraction; }));
    e.push_back(entry("ctr.d_id", [](C& c) -> auto& { return c.d_id; }));
    e.push_back(entry("ctr.initial_a", [](C& c) -> auto& { return c.ctr_initial_a; }));
    e.push_back(entry("ctr_train.seed", [](C& c) -> auto& { return c.ctr_train.seed; }));
    e.push_back(entry("ctr_train.epochs", [](C& c) -> auto& { return c.ctr_train.epochs; }));
    e.push_back(entry("ctr_train.batch_size", [](C& c) -> auto& { return c.ctr_train.batch_size; }));
    e.push_back(entry("ctr_train.learning_rate", [](C& c) -> auto& { return c.ctr_train.learning_rate; }));
    return e;
  }();
  return table;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.push_back(e.key);
  return out;
}

std::vector<std::pair<std::string, std::string>> to_key_values(const PipelineConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries()) out.emplace_back(e.key, e.get(config));
  return out;
}

void set_key_value(PipelineConfig& config, const std::string& key, const std::string& value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(config, value);
      return;
    }
  }
  fail(ErrorCategory::kContract, "unknown config key: " + key);
}

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kIo, "cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCategory::kContract, path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::string format_key_values(const PipelineConfig& config) {
  std::string out;
  for (const auto& [k, v] : to_key_values(config)) out += k + " = " + v + "\n";
  return out;
}

// ---------------------------------------------------------------- stages

PipelineData prepare_data(const PipelineConfig& config) {
  config.validate();
  PipelineData d;
  d.corpus = generate_corpus(config.corpus);
  for (const auto& q : d.corpus.queries) {
    (is_held_out(q.query_id, config.seed, config.held_out_fraction) ? d.held_out : d.train_queries)
        .push_back(q.query_id);
  }
  d.interactions = generate_interactions(d.corpus, config.interactions, d.train_queries);
  d.corpus.interactions = d.interactions;
  d.ctr_records = generate_ctr_records(d.corpus, config.ctr);
  return d;
}

void save_data(const PipelineData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_corpus(data.corpus, dir + "/corpus");
  save_ctr_records(data.ctr_records, dir + "/ctr_records.jsonl");
}

PipelineData load_data(const PipelineConfig& config, const std::string& dir) {
  config.validate();
  PipelineData d;
  d.corpus = load_corpus(dir + "/corpus");
  for (const auto& q : d.corpus.queries) {
    (is_held_out(q.query_id, config.seed, config.held_out_fraction) ? d.held_out : d.train_queries)
        .push_back(q.query_id);
  }
  d.interactions = d.corpus.interactions;
  d.ctr_records = load_ctr_records(dir + "/ctr_records.jsonl");
  return d;
}

CategoryHistogram exposure_histogram(const PipelineData& data) {
  CategoryHistogram h;
  for (const auto& r : data.ctr_records) ++h.counts[data.corpus.product(r.target).leaf_category];
  return h;
}

CurationResult curate(const PipelineConfig& config, const PipelineData& data) {
  return run_curation(data.corpus, data.interactions, raw_feature_scorer(data.corpus), exposure_histogram(data),
                      config.curation, data.train_queries);
}

std::vector<TrainingTriplet> take_fraction(const std::vector<TrainingTriplet>& triplets, double fraction,
                                           std::size_t minimum, std::uint64_t seed) {
  if (fraction >= 1.0) return triplets;
  const auto want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(triplets.size())));
  const std::size_t n = std::min(triplets.size(), std::max(want, minimum));
  std::vector<std::size_t> idx(triplets.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, 71);
  rng.shuffle(idx);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<TrainingTriplet> out;
  out.reserve(n);
  for (std::size_t i : idx) out.push_back(triplets[i]);
  return out;
}

EncoderParams initial_encoder(const PipelineConfig& config, const PipelineData& data) {
  return EncoderParams::init(dims_for(data.corpus.config, config.d_tok, config.hidden, config.d_full), config.seed);
}

EncoderRun train_encoder(const PipelineConfig& config, const PipelineData& data, const StepCallback& on_step) {
  CurationResult curated = curate(config, data);
  EncoderRun run = train_encoder(config, data, curated.triplets, on_step);
  run.curation = std::move(curated.report);
  return run;
}

EncoderRun train_encoder(const PipelineConfig& config, const PipelineData& data,
                         const std::vector<TrainingTriplet>& stage2_triplets, const StepCallback& on_step) {
  EncoderRun run;
  run.initial = initial_encoder(config, data);
  EncoderParams params = run.initial;
  if (config.stage1_enabled && config.stage1.steps > 0) {
    TrainerConfig s1 = config.stage1;
    s1.mrl = config.mrl;
    const auto triplets = take_fraction(interaction_triplets(data.corpus, data.interactions), config.data_fraction,
                                        s1.global_batch(), config.seed);
    run.stage1 = train(s1, triplets, data.corpus, params, on_step);
    params = run.stage1.params;
  }
  run.after_stage1 = params;

  TrainerConfig s2 = config.stage2;
  s2.mrl = config.mrl;
  const auto triplets = take_fraction(stage2_triplets, config.data_fraction, s2.global_batch(), config.seed + 1);
  const std::uint64_t offset = run.stage1.curve.size();
  StepCallback shifted;
  if (on_step) shifted = [&](std::uint64_t step, const EncoderParams& p) { on_step(offset + step, p); };
  if (s2.steps > 0) {
    run.stage2 = train(s2, triplets, data.corpus, params, shifted);
    params = run.stage2.params;
  }
  run.final_params = std::move(params);
  return run;
}

std::unique_ptr<VersionedTable> export_embeddings(const EncoderParams& params, const Corpus& corpus, ItemView view,
                                                  TableOptions options) {
  options.dim = static_cast<std::uint32_t>(params.dims.d_full);
  if (options.initial_buckets < corpus.products.size() / 2) options.initial_buckets = corpus.products.size() / 2;
  auto table = std::make_unique<VersionedTable>(std::move(options));
  for (const auto& p : corpus.products) {
    const ForwardCache fc = forward(params, render_item(p, view, corpus.config));
    table->upsert(p.product_id, std::span<const double>(fc.output.data(), static_cast<std::size_t>(fc.output.size())));
  }
  table->flush();
  return table;
}

double RecallEval::recall_at(std::size_t k) const {
  const std::string name = "Recall@" + std::to_string(k);
  for (const auto& r : reports) {
    if (r.name == name) return r.value;
  }
  fail(ErrorCategory::kContract, "recall cutoff not evaluated: " + std::to_string(k));
}

RecallEval eval_recall(const EncoderParams& params, const CandidateSet& candidates, const Corpus& corpus,
                       const std::vector<QueryId>& queries, RecallMode mode, const std::vector<std::size_t>& cutoffs) {
  require(!cutoffs.empty(), "eval_recall: no cutoffs");
  RecallEval out;
  out.queries = queries.size();
  const std::size_t k_max = *std::max_element(cutoffs.begin(), cutoffs.end());
  const Retrieval r = retrieve(encode_queries(params, corpus, queries), candidates, k_max);
  const auto relevance = category_relevance(corpus, queries);
  for (std::size_t k : cutoffs) out.reports.push_back(recall_at_k(r.rankings, relevance, k, mode));
  return out;
}

CtrEval eval_ctr(const PipelineConfig& config, const PipelineData& data, const VersionedTable& table,
                 const EncoderParams& params, bool with_ablation) {
  const Corpus& corpus = data.corpus;
  EmbeddingBank bank(
      corpus, [&](ProductId p) { return table.get(p); },
      [&](QueryId q) { return encode(params, render_query(corpus.query(q))); }, config.d_id, config.seed);

  std::vector<const CtrRecord*> train_set;
  std::vector<const CtrRecord*> test_set;
  for (const auto& r : data.ctr_records) (ctr_held_out(r, config.ctr) ? test_set : train_set).push_back(&r);
  require(!train_set.empty() && !test_set.empty(), "eval_ctr: empty train or held-out split");
  std::vector<int> train_labels;
  std::vector<int> test_labels;
  for (const auto* r : train_set) train_labels.push_back(r->label);
  for (const auto* r : test_set) test_labels.push_back(r->label);
  const ExampleSource train_src = [&](std::size_t i) { return bank.example(*train_set[i]); };
  const ExampleSource test_src = [&](std::size_t i) { return bank.example(*test_set[i]); };

  CtrEval out;
  auto run = [&](bool multimodal, std::vector<double>& preds) {
    CubeParams init = CubeParams::zeros(config.d_id, bank.d_mm());
    init.item_head.a = config.ctr_initial_a;
    init.query_head.a = config.ctr_initial_a;
    CtrTrainConfig tc = config.ctr_train;
    tc.options.use_multimodal = multimodal;
    CtrTrainResult res = train_ctr(std::move(init), train_set.size(), train_src, train_labels, tc);
    preds = predict_all(res.params, test_set.size(), test_src, tc.options);
    return res;
  };
  CtrTrainResult main = run(true, out.test_predictions);
  out.auc = auc(out.test_predictions, test_labels);
  out.params = main.params;
  out.loss_curve = main.loss_curve;
  out.warnings = main.warnings;
  if (bank.missing_products() > 0) {
    out.warnings.push_back(std::to_string(bank.missing_products()) + " products lack a multimodal embedding");
  }
  for (const auto* r : test_set) out.test_records.push_back(*r);
  if (with_ablation) {
    std::vector<double> id_preds;
    run(false, id_preds);
    out.auc_id_only = auc(id_preds, test_labels);
  }
  return out;
}

MetricPoint evaluate_checkpoint(const PipelineConfig& config, const PipelineData& data, const EncoderParams& params) {
  const auto table = export_embeddings(params, data.corpus, config.export_view, TableOptions{});
  const CandidateSet candidates = all_products_from_table(*table, data.corpus);
  const auto queries = held_out_queries(data.corpus, config.seed, config.held_out_fraction, QueryModality::kImage);
  MetricPoint p;
  p.metric = eval_recall(params, candidates, data.corpus, queries, RecallMode::kTopKPrecision, {1}).recall_at(1);
  p.auc = eval_ctr(config, data, *table, params, false).auc;
  return p;
}

namespace {

std::string recall_csv(const std::string& label, const RecallEval& e) {
  std::string out;
  char buf[64];
  out += label + "," + std::to_string(e.queries);
  for (const auto& r : e.reports) {
    std::snprintf(buf, sizeof buf, ",%.6f", r.value);
    out += buf;
  }
  return out + "\n";
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_text((out / "config.txt").string(), format_key_values(config));

  PipelineResult result;
  PipelineData data = prepare_data(config);
  save_data(data, out_dir);

  result.run = train_encoder(config, data);
  write_text((out / "curation_report.json").string(), result.run.curation.to_json());
  if (!result.run.stage1.curve.empty()) {
    write_loss_curve((out / "loss_stage1.csv").string(), result.run.stage1.curve);
    save_checkpoint(result.run.after_stage1, (out / "encoder_stage1.ckpt").string());
  }
  write_loss_curve((out / "loss_stage2.csv").string(), result.run.stage2.curve);
  save_checkpoint(result.run.final_params, (out / "encoder.ckpt").string());

  TableOptions opts;
  opts.dtype = config.export_dtype;
  opts.seed = config.seed;
  const auto table = export_embeddings(result.run.final_params, data.corpus, config.export_view, opts);
  save_snapshot(*table, (out / "embeddings.snap").string());

  const CandidateSet candidates = all_products_from_table(*table, data.corpus);
  const std::vector<std::size_t> cutoffs(std::begin(kReportCutoffs), std::end(kReportCutoffs));
  const auto image_q = held_out_queries(data.corpus, config.seed, config.held_out_fraction, QueryModality::kImage);
  result.recall_image = eval_recall(result.run.final_params, candidates, data.corpus, image_q,
                                    RecallMode::kTopKPrecision, cutoffs);
  result.recall_all = eval_recall(result.run.final_params, candidates, data.corpus, data.held_out,
                                  RecallMode::kTopKPrecision, cutoffs);
  std::string recall = "queries,count";
  for (std::size_t k : cutoffs) recall += ",Recall@" + std::to_string(k);
  recall += "\n" + recall_csv("image", result.recall_image) + recall_csv("all", result.recall_all);
  write_text((out / "recall.csv").string(), recall);

  result.ctr = eval_ctr(config, data, *table, result.run.final_params, true);
  write_predictions((out / "predictions.csv").string(), result.ctr.test_records, result.ctr.test_predictions);
  char buf[160];
  std::snprintf(buf, sizeof buf, "auc,auc_id_only\n%.6f,%.6f\n", result.ctr.auc, result.ctr.auc_id_only);
  write_text((out / "ctr.csv").string(), buf);

  std::ostringstream s;
  s << "held-out image queries: " << result.recall_image.queries << "\n";
  std::snprintf(buf, sizeof buf, "Recall@1 (image queries): %.4f\n", result.recall_image.recall_at(1));
  s << buf;
  std::snprintf(buf, sizeof buf, "Recall@1 (all held-out queries): %.4f\n", result.recall_all.recall_at(1));
  s << buf;
  std::snprintf(buf, sizeof buf, "CTR AUC: %.4f (ID-only %.4f)\n", result.ctr.auc, result.ctr.auc_id_only);
  s << buf;
  for (const auto& w : result.run.stage2.warnings) s << "warning: " << w << "\n";
  for (const auto& w : result.run.curation.warnings) s << "warning: " << w << "\n";
  for (const auto& w : result.ctr.warnings) s << "warning: " << w << "\n";
  write_text((out / "summary.txt").string(), s.str());
  return result;
}

SweepTable pipeline_sweep(const SweepSpec& spec, const PipelineConfig& config) {
  // The sequence-length axis trains once per seed and compares the stage-1
  // and final checkpoints at every length.
  std::map<std::uint64_t, EncoderRun> trained;
  auto run_for = [&](const PipelineConfig& c, const PipelineData& data, std::uint64_t seed) -> const EncoderRun& {
    auto it = trained.find(seed);
    if (it == trained.end()) it = trained.emplace(seed, train_encoder(c, data)).first;
    return it->second;
  };
  auto configure = [&](double value, std::uint64_t seed) {
    PipelineConfig c = config;
    c.set_seed(seed);
    c.ctr.sequence_length = static_cast<std::size_t>(value);
    return c;
  };
  const SweepPoint point = [&](double value, std::uint64_t seed) {
    PipelineConfig c = config;
    c.set_seed(seed);
    switch (spec.axis) {
      case SweepAxis::kNegatives:
        c.stage2.queue_depth = static_cast<std::size_t>(value) - 1;
        break;
      case SweepAxis::kDatasetFraction:
        c.data_fraction = value;
        break;
      case SweepAxis::kSequenceLength:
        c.ctr.sequence_length = static_cast<std::size_t>(value);
        break;
    }
    const PipelineData data = prepare_data(c);
    if (spec.axis == SweepAxis::kSequenceLength) return evaluate_checkpoint(c, data, run_for(c, data, seed).final_params);
    return evaluate_checkpoint(c, data, train_encoder(c, data).final_params);
  };
  if (spec.axis != SweepAxis::kSequenceLength) return run_sweep(spec, point);
  const SweepPoint baseline = [&](double value, std::uint64_t seed) {
    const PipelineConfig c = configure(value, seed);
    const PipelineData data = prepare_data(c);
    return evaluate_checkpoint(c, data, run_for(c, data, seed).after_stage1);
  };
  return run_sweep(spec, point, baseline);
}

}  // namespace mmrep
