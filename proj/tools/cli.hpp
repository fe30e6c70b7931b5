#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tdg/tdg.hpp"

namespace tdg::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kValidationFailure = 1, kUsageError = 2, kRuntimeFault = 3 };

namespace fs = std::filesystem;

inline std::string sha256_file(const fs::path& path) {
  const std::string bytes = read_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed for " + path.string());
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Record of one invocation. Everything except `created_at` is a function of
// the inputs, so manifests of repeated runs differ only in that field.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  Json resolved_config = Json::object();
  std::vector<fs::path> inputs;
  std::vector<std::uint64_t> seeds;
  std::vector<fs::path> outputs;

  Json to_json() const {
    Json j;
    j["command"] = command;
    j["arguments"] = arguments;
    j["resolved_config"] = resolved_config;
    Json in = Json::array();
    for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    j["inputs"] = std::move(in);
    j["seeds"] = seeds;
    j["tool_version"] = kToolVersion;
    Json out = Json::array();
    for (const auto& p : outputs) out.push_back(p.string());
    j["outputs"] = std::move(out);
    j["created_at"] = utc_timestamp();
    return j;
  }

  void write(const fs::path& dir) const { write_file_atomic(dir / "manifest.json", to_json().dump(2) + "\n"); }
};

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what(), {e.what()});
  }
}

inline std::vector<fs::path> as_paths(const std::vector<std::string>& xs) { return {xs.begin(), xs.end()}; }

inline Corpus concat(std::initializer_list<const Corpus*> parts) {
  Corpus all;
  for (const Corpus* c : parts) all.insert(all.end(), c->begin(), c->end());
  return all;
}

// A synth config file holds generator settings plus an optional "splits"
// object mapping split names to document counts. Split i is generated with
// seed + i.
struct SynthPlan {
  SynthConfig generator;
  std::vector<std::pair<std::string, std::size_t>> splits;
};

inline SynthPlan synth_plan_from_json(Json j) {
  SynthPlan plan;
  if (j.contains("splits")) {
    for (auto it = j["splits"].begin(); it != j["splits"].end(); ++it) {
      plan.splits.emplace_back(it.key(), it.value().get<std::size_t>());
    }
    j.erase("splits");
    if (plan.splits.empty()) throw Error("synth config: empty splits");
  }
  plan.generator = synth_config_from_json(j);
  return plan;
}

inline Json synth_plan_to_json(const SynthPlan& plan) {
  Json j = synth_config_to_json(plan.generator);
  if (!plan.splits.empty()) {
    Json s = Json::object();
    for (const auto& [name, n] : plan.splits) s[name] = n;
    j["splits"] = std::move(s);
  }
  return j;
}

struct Options {
  // shared
  std::string out;
  std::string config;
  std::vector<std::string> dp_labels;
  std::string corpus, train, valid, test;
  // train
  std::string variant, update_order, decode_order;
  std::vector<std::uint64_t> seeds;
  std::size_t epochs = 0, batch_docs = 0, warmup_epochs = 0;
  double lr = 0.0;
  // synth
  std::uint64_t seed = 0;
  // predict / evaluate
  std::vector<std::string> checkpoints, predictions;
  bool aggregate = false;
};

inline std::vector<std::string> argv_tail(int argc, const char* const* argv) {
  std::vector<std::string> a;
  for (int i = 1; i < argc; ++i) a.emplace_back(argv[i]);
  return a;
}

// ---------------------------------------------------------------------------

inline int cmd_validate(const Options& o, RunManifest m, std::ostream& out) {
  m.inputs.push_back(o.corpus);
  for (const auto& p : o.dp_labels) m.inputs.push_back(p);
  m.outputs.push_back(fs::path(o.out) / "validation.json");
  m.write(o.out);

  std::vector<std::string> violations;
  Corpus corpus;
  try {
    DecodedCorpus decoded = decode_corpus(read_file(o.corpus), o.corpus);
    violations = std::move(decoded.violations);
    corpus = std::move(decoded.documents);
  } catch (const ValidationError& e) {
    violations = e.violations();
  }
  if (!o.dp_labels.empty() && violations.empty()) {
    try {
      load_dp_labels(as_paths(o.dp_labels), corpus);
    } catch (const ValidationError& e) {
      for (const auto& v : e.violations()) violations.push_back(v);
    } catch (const CoverageError& e) {
      violations.emplace_back(e.what());
    }
  }
  Json report;
  report["corpus"] = o.corpus;
  report["documents"] = corpus.size();
  report["violations"] = violations;
  write_file_atomic(m.outputs.front(), dump(report));
  for (const auto& v : violations) out << v << "\n";
  out << (violations.empty() ? "ok" : std::to_string(violations.size()) + " violation(s)") << "\n";
  return violations.empty() ? kOk : kValidationFailure;
}

inline int cmd_synth(const Options& o, RunManifest m, std::ostream& out) {
  SynthPlan plan = synth_plan_from_json(read_json(o.config));
  m.inputs.push_back(o.config);
  m.resolved_config = synth_plan_to_json(plan);
  m.seeds = {o.seed};
  auto splits = plan.splits;
  if (splits.empty()) splits.emplace_back("corpus", plan.generator.documents);
  const fs::path dir(o.out);
  for (const auto& [name, n] : splits) {
    m.outputs.push_back(dir / (name + ".jsonl"));
    m.outputs.push_back(dir / (name + ".dp.tsv"));
  }
  m.write(dir);
  for (std::size_t i = 0; i < splits.size(); ++i) {
    SynthConfig cfg = plan.generator;
    cfg.id_prefix = plan.splits.empty() ? cfg.id_prefix : splits[i].first;
    cfg.documents = splits[i].second;
    SyntheticData data = generate_synthetic_corpus(cfg, o.seed + i);
    write_corpus(dir / (splits[i].first + ".jsonl"), data.corpus);
    write_file_atomic(dir / (splits[i].first + ".dp.tsv"), serialize_dp_labels(data.labels, data.corpus));
    out << splits[i].first << ": " << data.corpus.size() << " documents\n";
  }
  return kOk;
}

// Defaults, then the config file, then explicit flags.
inline TrainConfig resolve_train_config(const Options& o, const CLI::App& sub) {
  TrainConfig cfg;
  if (!o.config.empty()) cfg = train_config_from_json(read_json(o.config), cfg);
  auto given = [&](const char* name) { return sub.count(name) > 0; };
  auto bad = [](const std::string& what) { throw CLI::ValidationError(what); };
  if (given("--variant")) {
    auto v = parse_variant(o.variant);
    if (!v) bad("unknown variant '" + o.variant + "'");
    cfg.variant = *v;
  }
  if (given("--update-order")) {
    auto v = parse_update_order(o.update_order);
    if (!v) bad("unknown update order '" + o.update_order + "'");
    cfg.update_order = *v;
  }
  if (given("--decode-order")) {
    auto v = parse_decode_order(o.decode_order);
    if (!v) bad("unknown decode order '" + o.decode_order + "'");
    cfg.decode_order = *v;
  }
  if (given("--seeds")) cfg.seeds = o.seeds;
  if (given("--epochs")) cfg.max_epochs = o.epochs;
  if (given("--batch-docs")) cfg.batch_size_docs = o.batch_docs;
  if (given("--lr")) cfg.peak_lr = o.lr;
  if (given("--warmup-epochs")) cfg.warmup_epochs = o.warmup_epochs;
  try {
    cfg.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
  return cfg;
}

inline std::optional<DpLabelMap> load_labels_for(const Options& o, const Corpus& known, const Corpus& required) {
  if (o.dp_labels.empty()) return std::nullopt;
  DpLabelMap labels = load_dp_labels(as_paths(o.dp_labels), known, false);
  labels.require_coverage(required);
  return labels;
}

inline int cmd_train(const Options& o, const CLI::App& sub, RunManifest m, std::ostream& out) {
  const TrainConfig cfg = resolve_train_config(o, sub);
  m.resolved_config = train_config_to_json(cfg);
  m.seeds = cfg.seeds;
  for (const auto& p : {o.config, o.train, o.valid}) if (!p.empty()) m.inputs.push_back(p);
  for (const auto& p : o.dp_labels) m.inputs.push_back(p);
  const fs::path dir(o.out);
  m.outputs.push_back(dir / "train_config.json");
  for (auto seed : cfg.seeds) {
    m.outputs.push_back(dir / ("seed_" + std::to_string(seed)) / "checkpoint.json");
    m.outputs.push_back(dir / ("seed_" + std::to_string(seed)) / "history.json");
  }

  const Corpus train_corpus = parse_corpus(o.train);
  const Corpus valid_corpus = parse_corpus(o.valid);
  const Corpus both = concat({&train_corpus, &valid_corpus});
  if (cfg.variant != Variant::baseline && o.dp_labels.empty()) {
    throw CLI::ValidationError("--dp-labels is required for variant " + std::string(to_string(cfg.variant)));
  }
  const auto labels = load_labels_for(o, both, cfg.variant == Variant::dp_feature ? both : train_corpus);
  m.write(dir);
  write_file_atomic(m.outputs.front(), dump(m.resolved_config));

  for (auto seed : cfg.seeds) {
    const fs::path seed_dir = dir / ("seed_" + std::to_string(seed));
    TrainResult r = train(cfg, train_corpus, valid_corpus, labels ? &*labels : nullptr, seed,
                          [&](const EpochRecord& e) {
                            out << "seed " << seed << " epoch " << e.epoch << " ranking_loss " << e.ranking_loss;
                            if (e.dp_loss) out << " dp_loss " << *e.dp_loss;
                            out << " valid_accuracy " << e.valid_accuracy << "\n";
                          });
    write_file_atomic(seed_dir / "checkpoint.json", checkpoint_to_json(r.checkpoint).dump() + "\n");
    write_file_atomic(seed_dir / "history.json", dump(history_to_json(r.history)));
    out << "seed " << seed << " best_epoch " << r.history.best_epoch << "\n";
  }
  return kOk;
}

inline int cmd_predict(const Options& o, const CLI::App& sub, RunManifest m, std::ostream& out) {
  const fs::path dir(o.out);
  std::vector<Checkpoint> checkpoints;
  for (const auto& p : o.checkpoints) {
    m.inputs.push_back(p);
    checkpoints.push_back(checkpoint_from_json(read_json(p)));
    m.seeds.push_back(checkpoints.back().seed);
    m.outputs.push_back(dir / ("predictions_seed_" + std::to_string(checkpoints.back().seed) + ".jsonl"));
  }
  m.inputs.push_back(o.test);
  for (const auto& p : o.dp_labels) m.inputs.push_back(p);
  const Corpus corpus = parse_corpus(o.test);
  const auto labels = load_labels_for(o, corpus, corpus);

  Json resolved = Json::array();
  std::vector<std::pair<Variant, DecodeOrder>> settings;
  for (const Checkpoint& ck : checkpoints) {
    const TrainConfig tc = train_config_from_json(ck.training_config);
    DecodeOrder order = tc.decode_order;
    if (sub.count("--decode-order")) {
      auto v = parse_decode_order(o.decode_order);
      if (!v) throw CLI::ValidationError("unknown decode order '" + o.decode_order + "'");
      order = *v;
    }
    if (tc.variant == Variant::dp_feature && !labels) {
      throw CLI::ValidationError("--dp-labels is required for dp_feature checkpoints");
    }
    settings.emplace_back(tc.variant, order);
    resolved.push_back({{"seed", ck.seed}, {"variant", to_string(tc.variant)}, {"decode_order", to_string(order)}});
  }
  m.resolved_config = {{"checkpoints", resolved}};
  m.write(dir);
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto graphs =
        predict_corpus(checkpoints[i].model, corpus, settings[i].first, labels ? &*labels : nullptr, settings[i].second);
    write_file_atomic(m.outputs[i], serialize_predictions(corpus, graphs));
    out << m.outputs[i].string() << ": " << graphs.size() << " graphs\n";
  }
  return kOk;
}

inline int cmd_evaluate(const Options& o, const CLI::App& sub, RunManifest m, std::ostream& out) {
  if (sub.count("--seeds") && o.seeds.size() != o.predictions.size()) {
    throw CLI::ValidationError("--seeds must give one seed per predictions file");
  }
  const fs::path dir(o.out);
  for (const auto& p : o.predictions) m.inputs.push_back(p);
  m.inputs.push_back(o.test);
  m.seeds = o.seeds;
  const std::string corpus_id = fs::path(o.test).stem().string();
  m.resolved_config = {{"corpus", corpus_id}, {"variant", o.variant}, {"aggregate", o.aggregate}};
  for (std::size_t i = 0; i < o.predictions.size(); ++i) {
    const std::string tag = o.seeds.empty() ? std::to_string(i) : "seed_" + std::to_string(o.seeds[i]);
    m.outputs.push_back(dir / ("metrics_" + tag + ".json"));
  }
  if (o.aggregate) m.outputs.push_back(dir / "metrics_aggregate.json");

  const Corpus gold = parse_corpus(o.test);
  m.write(dir);
  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < o.predictions.size(); ++i) {
    const auto graphs = parse_predictions(read_file(o.predictions[i]), gold, o.predictions[i]);
    MetricsReport r = partitioned_prf(graphs, gold, corpus_id, o.variant);
    if (!o.seeds.empty()) r.seed = o.seeds[i];
    write_file_atomic(m.outputs[i], dump(metrics_to_json(r)));
    out << o.predictions[i] << ": accuracy " << as_percent(r.accuracy) << "\n";
    reports.push_back(std::move(r));
  }
  if (o.aggregate) {
    const AggregatedReport agg = aggregate_seeds(reports);
    write_file_atomic(m.outputs.back(), dump(metrics_to_json(agg)));
    out << "aggregate accuracy " << as_percent(agg.accuracy.mean) << " +/- " << as_percent(agg.accuracy.std) << "\n";
  }
  return kOk;
}

inline int cmd_analyze(const Options& o, RunManifest m, std::ostream& out) {
  const fs::path dir(o.out);
  m.inputs.push_back(o.corpus);
  for (const auto& p : o.dp_labels) m.inputs.push_back(p);
  const std::vector<std::string> names = {"timex_parent", "event_reftimex", "event_reftimex_content",
                                          "event_refevent_content"};
  for (const auto& n : names) m.outputs.push_back(dir / (n + ".csv"));
  m.outputs.push_back(dir / "tables.txt");
  m.outputs.push_back(dir / "summary.json");
  m.resolved_config = {{"corpus", o.corpus}, {"split", fs::path(o.corpus).stem().string()}};

  const Corpus corpus = parse_corpus(o.corpus);
  const DpLabelMap labels = load_dp_labels(as_paths(o.dp_labels), corpus);
  m.write(dir);
  const std::vector<DistributionTable> tables = {
      timex_parent_distribution(corpus, labels), event_reftimex_distribution(corpus, labels),
      event_reftimex_content_matrix(corpus, labels), event_refevent_content_matrix(corpus, labels)};
  std::string text;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    write_file_atomic(m.outputs[i], render_csv(tables[i]));
    text += render_text(tables[i]) + "\n";
  }
  write_file_atomic(dir / "tables.txt", text);

  Json summary;
  summary["corpus"] = o.corpus;
  summary["split"] = fs::path(o.corpus).stem().string();
  summary["documents"] = corpus.size();
  summary["checks"] = Json::array();
  for (const SummaryCheck& c : summary_checks(tables.front())) {
    summary["checks"].push_back({{"name", c.name}, {"evaluable", c.evaluable}, {"passed", c.passed}, {"detail", c.detail}});
    out << c.name << ": " << (!c.evaluable ? "not evaluable" : c.passed ? "holds" : "does not hold") << " (" << c.detail
        << ")\n";
  }
  write_file_atomic(dir / "summary.json", dump(summary));
  out << text;
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Temporal dependency graph parsing toolkit", "tdg"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  Options o;

  auto out_opt = [&](CLI::App* s) { s->add_option("--out", o.out, "Output directory")->required(); };
  auto labels_opt = [&](CLI::App* s) {
    s->add_option("--dp-labels", o.dp_labels, "Discourse label TSV file(s), comma separated")
        ->delimiter(',')
        ->check(CLI::ExistingFile);
  };

  auto* validate = app.add_subcommand("validate", "Check a corpus (and optional labels) against the invariants");
  validate->add_option("--corpus", o.corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  labels_opt(validate);
  out_opt(validate);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with discourse labels");
  synth->add_option("--config", o.config, "Synth config JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--seed", o.seed, "Generator seed")->default_val(0);
  out_opt(synth);

  auto* trainc = app.add_subcommand("train", "Train one model per seed");
  trainc->add_option("--config", o.config, "Training config JSON")->check(CLI::ExistingFile);
  trainc->add_option("--train", o.train, "Training corpus JSONL")->required()->check(CLI::ExistingFile);
  trainc->add_option("--valid", o.valid, "Validation corpus JSONL")->required()->check(CLI::ExistingFile);
  trainc->add_option("--variant", o.variant, "baseline, dp_feature or dp_distill");
  trainc->add_option("--update-order", o.update_order, "dp_then_rank, rank_then_dp or joint");
  trainc->add_option("--decode-order", o.decode_order, "score, document or rescan");
  trainc->add_option("--seeds", o.seeds, "Seeds, comma separated")->delimiter(',');
  trainc->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::PositiveNumber);
  trainc->add_option("--batch-docs", o.batch_docs, "Documents per batch")->check(CLI::PositiveNumber);
  trainc->add_option("--lr", o.lr, "Peak learning rate")->check(CLI::PositiveNumber);
  trainc->add_option("--warmup-epochs", o.warmup_epochs, "Linear warmup epochs");
  labels_opt(trainc);
  out_opt(trainc);

  auto* predict = app.add_subcommand("predict", "Decode a corpus with trained checkpoints");
  predict->add_option("--checkpoint", o.checkpoints, "Checkpoint JSON file(s), comma separated")
      ->required()
      ->delimiter(',')
      ->check(CLI::ExistingFile);
  predict->add_option("--test", o.test, "Corpus JSONL to decode")->required()->check(CLI::ExistingFile);
  predict->add_option("--decode-order", o.decode_order, "Override the checkpoint's decode order");
  labels_opt(predict);
  out_opt(predict);

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against gold graphs");
  evaluate->add_option("--predictions", o.predictions, "Prediction JSONL file(s), comma separated")
      ->required()
      ->delimiter(',')
      ->check(CLI::ExistingFile);
  evaluate->add_option("--test", o.test, "Gold corpus JSONL")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--seeds", o.seeds, "Seed of each predictions file, comma separated")->delimiter(',');
  evaluate->add_option("--variant", o.variant, "Variant label recorded in the metrics");
  evaluate->add_flag("--aggregate", o.aggregate, "Also write mean and std over all files");
  out_opt(evaluate);

  auto* analyze = app.add_subcommand("analyze", "Discourse distribution tables for a labelled corpus");
  analyze->add_option("--corpus", o.corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  analyze->add_option("--dp-labels", o.dp_labels, "Discourse label TSV file(s), comma separated")
      ->required()
      ->delimiter(',')
      ->check(CLI::ExistingFile);
  out_opt(analyze);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  RunManifest m;
  m.command = app.get_subcommands().front()->get_name();
  m.arguments = argv_tail(argc, argv);
  try {
    fs::create_directories(o.out);
    if (validate->parsed()) return cmd_validate(o, m, out);
    if (synth->parsed()) return cmd_synth(o, m, out);
    if (trainc->parsed()) return cmd_train(o, *trainc, m, out);
    if (predict->parsed()) return cmd_predict(o, *predict, m, out);
    if (evaluate->parsed()) return cmd_evaluate(o, *evaluate, m, out);
    return cmd_analyze(o, m, out);
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ValidationError& e) {
    err << "validation failure: " << e.what() << "\n";
    for (const auto& v : e.violations()) err << "  " << v << "\n";
    return kValidationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFault;
  }
}

}  // namespace tdg::cli
