// mmrep: one binary, one subcommand per lifecycle step.
//
// Exit status: 0 ok, 1 other failure, 2 usage/config error, 3 I/O, 4 divergence.
// Failures print one line: error: category=<name> message=<text>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmrep/cuckoo_index.hpp"
#include "mmrep/errors.hpp"
#include "mmrep/pipeline.hpp"
#include "mmrep/random.hpp"
#include "mmrep/realtime_ingest.hpp"

namespace fs = std::filesystem;
using namespace mmrep;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by every subcommand that reads the pipeline configuration.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::uint64_t seed = 7;
  CLI::Option* seed_opt = nullptr;
};

void ensure_parent(const std::string& file) {
  const fs::path p(file);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string config_footer() {
  std::string s = "\nConfiguration keys (--set key=value or --config FILE), with defaults:\n";
  for (const auto& [k, v] : to_key_values(PipelineConfig{})) s += "  " + k + " = " + v + "\n";
  return s;
}

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.file, "key = value file; unknown keys are rejected");
  cmd->add_option("--set", f.sets, "override one key, key=value (repeatable)");
  f.seed_opt = cmd->add_option("--seed", f.seed, "master seed; every component seed derives from it")
                   ->capture_default_str();
  cmd->footer(config_footer());
}

// Precedence: defaults < config file < --set < --seed. A "seed" key is applied
// before the per-component seeds so explicit overrides of those survive.
PipelineConfig resolve(const ConfigFlags& f) {
  try {
    PipelineConfig c;
    std::vector<std::pair<std::string, std::string>> kv;
    if (!f.file.empty()) {
      for (auto& p : read_key_value_file(f.file)) kv.emplace_back(p.first, p.second);
    }
    for (const auto& s : f.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : kv) {
      if (k == "seed") set_key_value(c, k, v);
    }
    for (const auto& [k, v] : kv) {
      if (k != "seed") set_key_value(c, k, v);
    }
    if (f.seed_opt->count() > 0) c.set_seed(f.seed);
    c.validate();
    return c;
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::kIo) throw;
    throw UsageError(e.what());
  }
}

void prepare_out(const std::string& out, const PipelineConfig& c) {
  fs::create_directories(out);
  write_text(out + "/config.txt", format_key_values(c));
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void print_curve_tail(const char* label, const TrainOutcome& o) {
  if (o.curve.empty()) return;
  const auto& r = o.curve.back();
  std::printf("%s: %zu steps, final loss %.4f, negatives %zu, positive sim %.3f\n", label, o.curve.size(), r.loss,
              r.negatives_used, r.positive_similarity);
  for (const auto& w : o.warnings) std::printf("warning: %s\n", w.c_str());
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UsageError("not a number list: " + s);
    }
  }
  return out;
}

// ---------------------------------------------------------------- data

int cmd_gen_data(const ConfigFlags& f, const std::string& out) {
  const PipelineConfig c = resolve(f);
  prepare_out(out, c);
  const PipelineData d = prepare_data(c);
  save_data(d, out);
  std::printf("products %zu, queries %zu (held out %zu), interactions %zu, ctr records %zu\n", d.corpus.products.size(),
              d.corpus.queries.size(), d.held_out.size(), d.interactions.size(), d.ctr_records.size());
  return 0;
}

int cmd_curate(const ConfigFlags& f, const std::string& data_dir, const std::string& out) {
  const PipelineConfig c = resolve(f);
  prepare_out(out, c);
  const PipelineData d = load_data(c, data_dir);
  const CurationResult r = curate(c, d);
  save_triplets(r.triplets, join(out, "triplets.jsonl"));
  write_text(join(out, "curation_report.json"), r.report.to_json());
  for (const auto& s : r.report.stages) std::printf("%-14s %8zu -> %8zu\n", s.stage.c_str(), s.in, s.out);
  std::printf("hard-negative shortfall %zu\n", r.report.hard_negative_shortfall);
  for (const auto& w : r.report.warnings) std::printf("warning: %s\n", w.c_str());
  return 0;
}

int cmd_train(const ConfigFlags& f, const std::string& data_dir, const std::string& triplets_path,
              const std::string& out) {
  PipelineConfig c = resolve(f);
  prepare_out(out, c);
  if (c.stage1.divergence_dump.empty()) c.stage1.divergence_dump = join(out, "diverged_stage1.ckpt");
  if (c.stage2.divergence_dump.empty()) c.stage2.divergence_dump = join(out, "diverged_stage2.ckpt");
  const PipelineData d = load_data(c, data_dir);
  const auto triplets = load_triplets(triplets_path);
  const EncoderRun run = train_encoder(c, d, triplets);
  if (!run.stage1.curve.empty()) {
    write_loss_curve(join(out, "loss_stage1.csv"), run.stage1.curve);
    save_checkpoint(run.after_stage1, join(out, "encoder_stage1.ckpt"));
  }
  write_loss_curve(join(out, "loss_stage2.csv"), run.stage2.curve);
  save_checkpoint(run.final_params, join(out, "encoder.ckpt"));
  print_curve_tail("stage 1", run.stage1);
  print_curve_tail("stage 2", run.stage2);
  return 0;
}

int cmd_export(const ConfigFlags& f, const std::string& data_dir, const std::string& ckpt, const std::string& out) {
  const PipelineConfig c = resolve(f);
  prepare_out(out, c);
  const PipelineData d = load_data(c, data_dir);
  const EncoderParams params = load_checkpoint(ckpt);
  TableOptions opts;
  opts.dtype = c.export_dtype;
  opts.seed = c.seed;
  const auto table = export_embeddings(params, d.corpus, c.export_view, opts);
  save_snapshot(*table, join(out, "embeddings.snap"));
  std::printf("exported %zu embeddings (dim %u, %s, view %s) at table version %llu\n", table->size(), table->dim(),
              std::string(to_string(table->dtype())).c_str(), std::string(to_string(c.export_view)).c_str(),
              static_cast<unsigned long long>(table->table_version()));
  return 0;
}

// ---------------------------------------------------------------- center

void print_table(const VersionedTable& t) {
  std::printf("table_version %llu, dim %u, dtype %s, entries %zu (memory %zu, disk %zu), state_hash %016llx\n",
              static_cast<unsigned long long>(t.table_version()), t.dim(), std::string(to_string(t.dtype())).c_str(),
              t.size(), t.memory_size(), t.disk_size(), static_cast<unsigned long long>(t.state_hash()));
}

struct SnapshotArgs {
  std::string in;
  std::string out;
  std::string data;
  std::uint64_t prune_below = 0;
};

int cmd_center_snapshot(const ConfigFlags& f, const SnapshotArgs& a) {
  const PipelineConfig c = resolve(f);
  auto table = load_snapshot(a.in);
  print_table(*table);
  if (a.prune_below > 0) {
    if (a.data.empty()) throw UsageError("--prune-below needs --data for exposure counts");
    const PipelineData d = load_data(c, a.data);
    std::map<std::uint64_t, std::uint64_t> freq;
    for (const auto& r : d.ctr_records) ++freq[r.target];
    const std::size_t demoted = table->prune_long_tail(a.prune_below, [&](std::uint64_t k) {
      const auto it = freq.find(k);
      return it == freq.end() ? std::uint64_t{0} : it->second;
    });
    std::printf("demoted %zu long-tail keys to disk\n", demoted);
    print_table(*table);
  }
  if (!a.out.empty()) {
    ensure_parent(a.out);
    save_snapshot(*table, a.out);
  }
  return 0;
}

struct DeltaArgs {
  std::string base;
  std::string target;
  std::string apply;
  std::string out;
};

int cmd_center_delta(const DeltaArgs& a) {
  if (a.target.empty() == a.apply.empty()) throw UsageError("center delta needs exactly one of --target or --apply");
  auto base = load_snapshot(a.base);
  ensure_parent(a.out);
  if (!a.apply.empty()) {
    const DeltaLog delta = load_delta(a.apply, base->dim(), base->dtype());
    base->apply_delta(delta);
    save_snapshot(*base, a.out);
    std::printf("applied %zu operations\n", delta.entries.size());
    print_table(*base);
    return 0;
  }
  const auto target = load_snapshot(a.target);
  if (target->dim() != base->dim() || target->dtype() != base->dtype()) {
    fail(ErrorCategory::kContract, "center delta: base and target differ in dim or dtype");
  }
  std::map<std::uint64_t, StoredRecord> old;
  for (auto& [k, r] : base->scan()) old.emplace(k, std::move(r));
  for (const auto& [k, r] : target->scan()) {
    const auto it = old.find(k);
    const bool same = it != old.end() && it->second.scale == r.scale && it->second.values == r.values &&
                      it->second.codes == r.codes;
    if (!same) base->upsert(k, to_embedding(r, target->dtype()));
    if (it != old.end()) old.erase(it);
  }
  for (const auto& kv : old) base->remove(kv.first);
  DeltaLog delta;
  base->flush(&delta);
  save_delta(delta, base->dim(), base->dtype(), a.out);
  std::printf("delta over base version %llu: %zu operations\n", static_cast<unsigned long long>(delta.base_version),
              delta.entries.size());
  return 0;
}

struct IngestArgs {
  std::string base;
  std::string out;
  std::size_t records = 1000;
  std::uint32_t dim = 64;
  int interval_ms = 1000;
  std::size_t capacity = 1024;
};

int cmd_center_ingest(const ConfigFlags& f, const IngestArgs& a) {
  const PipelineConfig c = resolve(f);
  std::unique_ptr<VersionedTable> table;
  if (a.base.empty()) {
    TableOptions o;
    o.dim = a.dim;
    o.dtype = c.export_dtype;
    table = std::make_unique<VersionedTable>(o);
  } else {
    table = load_snapshot(a.base);
  }
  Rng rng = Rng::derive(c.seed, 71);
  IngestMetrics m;
  {
    RealtimeIngestor ing(*table, IngestConfig{std::chrono::milliseconds(a.interval_ms), a.capacity});
    for (std::size_t i = 0; i < a.records; ++i) {
      std::vector<double> v(table->dim());
      for (auto& x : v) x = rng.normal();
      ing.submit(rng.below(4 * a.records + 1), std::move(v));
    }
    ing.stop();
    m = ing.metrics();
  }
  std::printf("accepted %zu, backpressure signals %zu, published %zu, flushes %zu\n", m.accepted, m.rejected,
              m.published, m.flushes);
  std::printf("visibility latency ms: p50 %.1f, p95 %.1f, p99 %.1f\n", m.percentile_ms(50), m.percentile_ms(95),
              m.percentile_ms(99));
  print_table(*table);
  if (!a.out.empty()) {
    ensure_parent(a.out);
    save_snapshot(*table, a.out);
  }
  return 0;
}

int cmd_center_bench(const ConfigFlags& f, std::size_t ops) {
  if (ops == 0) throw UsageError("--ops must be positive");
  const PipelineConfig c = resolve(f);
  using Clock = std::chrono::steady_clock;
  Rng rng = Rng::derive(c.seed, 73);
  std::vector<std::uint64_t> keys(ops);
  for (auto& k : keys) k = rng.next_u64();

  CuckooIndex<std::uint64_t> index(1024, c.seed);
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < ops; ++i) index.insert(keys[i], i);
  const double insert_s = std::chrono::duration<double>(Clock::now() - t0).count();

  std::vector<double> lat_ns(ops);
  std::uint64_t found = 0;
  const auto t1 = Clock::now();
  for (std::size_t i = 0; i < ops; ++i) {
    const std::uint64_t k = keys[rng.below(ops)];
    const auto s = Clock::now();
    found += index.find(k) != nullptr;
    lat_ns[i] = std::chrono::duration<double, std::nano>(Clock::now() - s).count();
  }
  const double lookup_s = std::chrono::duration<double>(Clock::now() - t1).count();
  std::sort(lat_ns.begin(), lat_ns.end());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(ops)));
  std::printf("inserts: %zu in %.3f s (%.0f ops/sec), resizes %zu, load factor %.3f\n", ops, insert_s,
              static_cast<double>(ops) / insert_s, index.resizes(), index.load_factor());
  std::printf("lookups: %zu in %.3f s (%.0f ops/sec), hits %llu, p99 latency %.0f ns, max probes %zu\n", ops, lookup_s,
              static_cast<double>(ops) / lookup_s, static_cast<unsigned long long>(found),
              lat_ns[std::max<std::size_t>(rank, 1) - 1], index.max_probes());
  return 0;
}

// ---------------------------------------------------------------- evaluation

std::unique_ptr<VersionedTable> table_or_export(const std::string& snap, const EncoderParams& params,
                                                const PipelineConfig& c, const Corpus& corpus) {
  if (!snap.empty()) return load_snapshot(snap);
  TableOptions o;
  o.dtype = c.export_dtype;
  o.seed = c.seed;
  return export_embeddings(params, corpus, c.export_view, o);
}

int cmd_train_ctr(const ConfigFlags& f, const std::string& data_dir, const std::string& ckpt, const std::string& snap,
                  const std::string& out) {
  const PipelineConfig c = resolve(f);
  prepare_out(out, c);
  const PipelineData d = load_data(c, data_dir);
  const EncoderParams params = load_checkpoint(ckpt);
  const auto table = table_or_export(snap, params, c, d.corpus);
  const CtrEval e = eval_ctr(c, d, *table, params, true);
  write_predictions(join(out, "predictions.csv"), e.test_records, e.test_predictions);
  char buf[128];
  std::snprintf(buf, sizeof buf, "auc,auc_id_only\n%.6f,%.6f\n", e.auc, e.auc_id_only);
  write_text(join(out, "ctr.csv"), buf);
  std::string curve = "epoch,loss\n";
  for (std::size_t i = 0; i < e.loss_curve.size(); ++i) curve += std::to_string(i) + "," + std::to_string(e.loss_curve[i]) + "\n";
  write_text(join(out, "ctr_loss.csv"), curve);
  nlohmann::ordered_json head;
  head["item_head"] = {{"a", e.params.item_head.a}, {"c", e.params.item_head.c}};
  head["query_head"] = {{"a", e.params.query_head.a}, {"c", e.params.query_head.c}};
  head["bias"] = e.params.b;
  head["weights"] = std::vector<double>(e.params.w.data(), e.params.w.data() + e.params.w.size());
  write_text(join(out, "ctr_head.json"), head.dump(2) + "\n");
  std::printf("held-out AUC %.4f (ID-only %.4f), %zu test examples\n", e.auc, e.auc_id_only, e.test_records.size());
  for (const auto& w : e.warnings) std::printf("warning: %s\n", w.c_str());
  return 0;
}

int cmd_eval_recall(const ConfigFlags& f, const std::string& data_dir, const std::string& ckpt,
                    const std::string& snap, const std::string& mode_text, const std::string& ks_text,
                    const std::string& out) {
  const PipelineConfig c = resolve(f);
  prepare_out(out, c);
  RecallMode mode;
  if (mode_text == "top-k-precision") {
    mode = RecallMode::kTopKPrecision;
  } else if (mode_text == "hit-recall") {
    mode = RecallMode::kHitRecall;
  } else {
    throw UsageError("--mode must be top-k-precision or hit-recall");
  }
  std::vector<std::size_t> ks;
  for (double k : parse_doubles(ks_text)) {
    if (k < 1 || k != std::floor(k)) throw UsageError("--k values must be positive integers");
    ks.push_back(static_cast<std::size_t>(k));
  }
  const PipelineData d = load_data(c, data_dir);
  const EncoderParams params = load_checkpoint(ckpt);
  const auto table = table_or_export(snap, params, c, d.corpus);
  const CandidateSet cand = all_products_from_table(*table, d.corpus);
  const auto image_q = held_out_queries(d.corpus, c.seed, c.held_out_fraction, QueryModality::kImage);
  std::string csv = "queries,count";
  for (std::size_t k : ks) csv += ",Recall@" + std::to_string(k);
  csv += "\n";
  for (const auto& [label, qs] : {std::pair<std::string, const std::vector<QueryId>*>{"image", &image_q},
                                  std::pair<std::string, const std::vector<QueryId>*>{"all", &d.held_out}}) {
    const RecallEval e = eval_recall(params, cand, d.corpus, *qs, mode, ks);
    csv += label + "," + std::to_string(e.queries);
    std::printf("%-6s queries %4zu:", label.c_str(), e.queries);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      char buf[48];
      std::snprintf(buf, sizeof buf, ",%.6f", e.reports[i].value);
      csv += buf;
      std::printf("  R@%zu %.4f", ks[i], e.reports[i].value);
    }
    std::printf("\n");
    csv += "\n";
  }
  write_text(join(out, "recall.csv"), csv);
  return 0;
}

int cmd_exchange_rate(const MetricPoint& base, const MetricPoint& treat, const std::string& out) {
  const ExchangeRateReport r = exchange_rate(base, treat);
  const std::string csv = ExchangeRateReport::csv_header() + "\n" + r.csv_row() + "\n";
  std::fputs(csv.c_str(), stdout);
  if (!out.empty()) {
    ensure_parent(out);
    write_text(out, csv);
  }
  return 0;
}

int cmd_sweep(const ConfigFlags& f, const std::string& axis, const std::string& grid, const std::string& seeds,
              const std::string& out) {
  const PipelineConfig c = resolve(f);
  SweepSpec spec;
  try {
    spec.axis = parse_axis(axis);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  spec.grid = parse_doubles(grid);
  spec.seeds.clear();
  for (double s : parse_doubles(seeds)) {
    if (s < 0 || s != std::floor(s)) throw UsageError("--seeds must be non-negative integers");
    spec.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  prepare_out(out, c);
  const SweepTable t = pipeline_sweep(spec, c);
  write_text(join(out, "sweep.csv"), t.to_csv());
  write_text(join(out, "sweep_summary.txt"), t.summary());
  std::fputs(t.summary().c_str(), stdout);
  return 0;
}

int cmd_run(const ConfigFlags& f, const std::string& out) {
  const PipelineConfig c = resolve(f);
  run_pipeline(c, out);
  std::ifstream summary(join(out, "summary.txt"));
  std::cout << summary.rdbuf();
  return 0;
}

void print_error(std::string_view category, std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::fprintf(stderr, "error: category=%.*s message=%s\n", static_cast<int>(category.size()), category.data(),
               message.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal representation pipeline: data, curation, training, serving store, CTR and evaluation."};
  app.require_subcommand(1);
  app.fallthrough(false);

  int status = 0;
  std::function<int()> action;

  // gen-data
  ConfigFlags gen_f;
  std::string gen_out = "data";
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus, interactions and CTR records");
  add_config_flags(gen, gen_f);
  gen->add_option("--out", gen_out, "output data directory")->capture_default_str();
  gen->callback([&] { action = [&] { return cmd_gen_data(gen_f, gen_out); }; });

  // curate
  ConfigFlags cur_f;
  std::string cur_data = "data", cur_out = "curated";
  auto* cur = app.add_subcommand("curate", "Dedup, merge, align, filter and attach hard negatives");
  add_config_flags(cur, cur_f);
  cur->add_option("--data", cur_data, "data directory from gen-data")->capture_default_str();
  cur->add_option("--out", cur_out, "output directory")->capture_default_str();
  cur->callback([&] { action = [&] { return cmd_curate(cur_f, cur_data, cur_out); }; });

  // train
  ConfigFlags tr_f;
  std::string tr_data = "data", tr_triplets = "curated/triplets.jsonl", tr_out = "model";
  auto* tr = app.add_subcommand("train", "Two-stage contrastive training of the encoder");
  add_config_flags(tr, tr_f);
  tr->add_option("--data", tr_data, "data directory from gen-data")->capture_default_str();
  tr->add_option("--triplets", tr_triplets, "curated stage-2 triplets")->capture_default_str();
  tr->add_option("--out", tr_out, "output directory")->capture_default_str();
  tr->callback([&] { action = [&] { return cmd_train(tr_f, tr_data, tr_triplets, tr_out); }; });

  // export-embeddings
  ConfigFlags ex_f;
  std::string ex_data = "data", ex_ckpt = "model/encoder.ckpt", ex_out = "center";
  auto* ex = app.add_subcommand("export-embeddings", "Encode every product into a versioned table snapshot");
  add_config_flags(ex, ex_f);
  ex->add_option("--data", ex_data, "data directory from gen-data")->capture_default_str();
  ex->add_option("--checkpoint", ex_ckpt, "encoder checkpoint")->capture_default_str();
  ex->add_option("--out", ex_out, "output directory (embeddings.snap)")->capture_default_str();
  ex->callback([&] { action = [&] { return cmd_export(ex_f, ex_data, ex_ckpt, ex_out); }; });

  // center
  auto* center = app.add_subcommand("center", "Representation store maintenance");
  center->require_subcommand(1);

  ConfigFlags snap_f;
  SnapshotArgs snap_a;
  auto* snap = center->add_subcommand("snapshot", "Verify and summarize a snapshot; optionally prune and rewrite");
  add_config_flags(snap, snap_f);
  snap->add_option("--in", snap_a.in, "snapshot file")->required();
  snap->add_option("--out", snap_a.out, "rewrite the snapshot here");
  snap->add_option("--data", snap_a.data, "data directory supplying exposure counts for pruning");
  snap->add_option("--prune-below", snap_a.prune_below, "demote keys with fewer exposures (0 = off)")
      ->capture_default_str();
  snap->callback([&] { action = [&] { return cmd_center_snapshot(snap_f, snap_a); }; });

  DeltaArgs delta_a;
  auto* delta = center->add_subcommand("delta", "Diff two snapshots into a delta, or apply a delta to a snapshot");
  delta->add_option("--base", delta_a.base, "base snapshot")->required();
  delta->add_option("--target", delta_a.target, "target snapshot to diff against");
  delta->add_option("--apply", delta_a.apply, "delta file to apply to the base");
  delta->add_option("--out", delta_a.out, "delta file (diff) or snapshot (apply)")->required();
  delta->callback([&] { action = [&] { return cmd_center_delta(delta_a); }; });

  ConfigFlags ing_f;
  IngestArgs ing_a;
  auto* ing = center->add_subcommand("ingest", "Stream random updates through the real-time ingestor");
  add_config_flags(ing, ing_f);
  ing->add_option("--base", ing_a.base, "starting snapshot (default: empty table)");
  ing->add_option("--dim", ing_a.dim, "embedding dim for an empty table")->capture_default_str();
  ing->add_option("--records", ing_a.records, "updates to submit")->capture_default_str();
  ing->add_option("--flush-interval-ms", ing_a.interval_ms, "flush interval")->capture_default_str()->check(
      CLI::PositiveNumber);
  ing->add_option("--capacity", ing_a.capacity, "ingest queue capacity")->capture_default_str()->check(
      CLI::PositiveNumber);
  ing->add_option("--out", ing_a.out, "write the final snapshot here");
  ing->callback([&] { action = [&] { return cmd_center_ingest(ing_f, ing_a); }; });

  ConfigFlags bench_f;
  std::size_t bench_ops = 100000;
  auto* bench = center->add_subcommand("bench", "Throughput and lookup latency of the cuckoo memory tier");
  add_config_flags(bench, bench_f);
  bench->add_option("--ops", bench_ops, "inserts and lookups to time")->capture_default_str();
  bench->callback([&] { action = [&] { return cmd_center_bench(bench_f, bench_ops); }; });

  // train-ctr
  ConfigFlags ctr_f;
  std::string ctr_data = "data", ctr_ckpt = "model/encoder.ckpt", ctr_snap = "center/embeddings.snap",
              ctr_out = "ctr";
  auto* ctr = app.add_subcommand("train-ctr", "Train the CTR head on fused behavior sequences; report AUC");
  add_config_flags(ctr, ctr_f);
  ctr->add_option("--data", ctr_data, "data directory from gen-data")->capture_default_str();
  ctr->add_option("--checkpoint", ctr_ckpt, "encoder checkpoint for query embeddings")->capture_default_str();
  ctr->add_option("--table", ctr_snap, "item embedding snapshot (empty: encode now)")->capture_default_str();
  ctr->add_option("--out", ctr_out, "output directory")->capture_default_str();
  ctr->callback([&] { action = [&] { return cmd_train_ctr(ctr_f, ctr_data, ctr_ckpt, ctr_snap, ctr_out); }; });

  // eval-recall
  ConfigFlags ev_f;
  std::string ev_data = "data", ev_ckpt = "model/encoder.ckpt", ev_snap, ev_mode = "top-k-precision",
              ev_k = "1,5,10,20,50", ev_out = "eval";
  auto* ev = app.add_subcommand("eval-recall", "Recall@k on held-out queries");
  add_config_flags(ev, ev_f);
  ev->add_option("--data", ev_data, "data directory from gen-data")->capture_default_str();
  ev->add_option("--checkpoint", ev_ckpt, "encoder checkpoint")->capture_default_str();
  ev->add_option("--table", ev_snap, "candidate snapshot (default: encode now)");
  ev->add_option("--mode", ev_mode, "top-k-precision or hit-recall")->capture_default_str();
  ev->add_option("--k", ev_k, "comma-separated cutoffs")->capture_default_str();
  ev->add_option("--out", ev_out, "output directory")->capture_default_str();
  ev->callback([&] { action = [&] { return cmd_eval_recall(ev_f, ev_data, ev_ckpt, ev_snap, ev_mode, ev_k, ev_out); }; });

  // exchange-rate
  MetricPoint xr_base, xr_treat;
  std::string xr_out;
  auto* xr = app.add_subcommand("exchange-rate", "AUC permille gained per point of the intermediate metric");
  xr->add_option("--baseline-metric", xr_base.metric, "baseline metric as a fraction")->required();
  xr->add_option("--baseline-auc", xr_base.auc, "baseline AUC")->required();
  xr->add_option("--treatment-metric", xr_treat.metric, "treatment metric as a fraction")->required();
  xr->add_option("--treatment-auc", xr_treat.auc, "treatment AUC")->required();
  xr->add_option("--out", xr_out, "also write the CSV row here");
  xr->callback([&] { action = [&] { return cmd_exchange_rate(xr_base, xr_treat, xr_out); }; });

  // sweep
  ConfigFlags sw_f;
  std::string sw_axis = "negatives", sw_grid = "1,2,4,6", sw_seeds = "7,8,9", sw_out = "sweep";
  auto* sw = app.add_subcommand("sweep", "Scaling sweep with exchange rates between neighbouring points");
  add_config_flags(sw, sw_f);
  sw->add_option("--axis", sw_axis, "negatives | sequence_length | dataset_fraction")->capture_default_str();
  sw->add_option("--grid", sw_grid, "ascending comma-separated values")->capture_default_str();
  sw->add_option("--seeds", sw_seeds, "comma-separated seeds")->capture_default_str();
  sw->add_option("--out", sw_out, "output directory")->capture_default_str();
  sw->callback([&] { action = [&] { return cmd_sweep(sw_f, sw_axis, sw_grid, sw_seeds, sw_out); }; });

  // run
  ConfigFlags run_f;
  std::string run_out = "run";
  auto* run = app.add_subcommand("run", "Whole pipeline in one process");
  add_config_flags(run, run_f);
  run->add_option("--out", run_out, "output directory")->capture_default_str();
  run->callback([&] { action = [&] { return cmd_run(run_f, run_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    print_error("usage", e.what());
    const CLI::App* deepest = &app;
    while (!deepest->get_subcommands().empty()) deepest = deepest->get_subcommands().front();
    std::cerr << deepest->help();
    return 2;
  }

  try {
    status = action ? action() : 2;
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const Error& e) {
    print_error(to_string(e.category()), e.what());
    switch (e.category()) {
      case ErrorCategory::kIo:
        return 3;
      case ErrorCategory::kDivergence:
        return 4;
      default:
        return 1;
    }
  } catch (const fs::filesystem_error& e) {
    print_error(to_string(ErrorCategory::kIo), e.what());
    return 3;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return status;
}
