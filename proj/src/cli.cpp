#include "sersal/cli.hpp"

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "sersal/data.hpp"
#include "sersal/error.hpp"
#include "sersal/evaluation.hpp"
#include "sersal/io.hpp"
#include "sersal/network_provider.hpp"
#include "sersal/simulated_oracle.hpp"

namespace sersal {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

fs::path existing_file(const fs::path& base, const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw ConfigError(std::string("run config lacks \"") + key + "\"");
  fs::path p = resolve(base, j.at(key).get<std::string>());
  if (!fs::exists(p)) throw ConfigError(std::string(key) + " file not found: " + p.string());
  return p;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  try {
    c.data = existing_file(base_dir, j, "data");
    c.schema = existing_file(base_dir, j, "schema");
    c.state_dir = resolve(base_dir, j.value("state_dir", c.state_dir.string()));
    c.output_dir = j.contains("output_dir")
                       ? resolve(base_dir, j.at("output_dir").get<std::string>())
                       : c.state_dir / "out";
    c.seed = j.value("seed", c.seed);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0))
      throw ConfigError("test_fraction must lie in (0, 1)");

    if (!j.contains("provider")) throw ConfigError("run config lacks a \"provider\" block");
    c.provider = j.at("provider");
    const std::string kind = c.provider.value("kind", std::string());
    if (kind == "simulated") {
      if (c.provider.contains("oracle"))
        c.provider["oracle"] = existing_file(base_dir, c.provider, "oracle").string();
      else if (!c.provider.contains("config"))
        throw ConfigError("simulated provider needs \"oracle\" or \"config\"");
    } else if (kind == "network") {
      NetworkProviderConfig::from_json(c.provider);
    } else {
      throw ConfigError("provider kind must be \"simulated\" or \"network\", got '" + kind + "'");
    }

    TrainConfig defaults;
    defaults.seed = c.seed;
    c.train = j.contains("train") ? TrainConfig::from_json(j.at("train"), defaults) : defaults;
    if (j.contains("policy")) c.policy = QualityControlPolicy::from_json(j.at("policy"));
    if (j.contains("annotate")) {
      const json& a = j.at("annotate");
      c.annotate.retry_limit = a.value("retry_limit", c.annotate.retry_limit);
      c.annotate.max_in_flight = a.value("max_in_flight", c.annotate.max_in_flight);
      c.annotate.backoff_ms = a.value("backoff_ms", c.annotate.backoff_ms);
      if (c.annotate.retry_limit < 1 || c.annotate.max_in_flight < 1 || c.annotate.backoff_ms < 0)
        throw ConfigError("annotate: retry_limit and max_in_flight must be >= 1");
    }
    if (j.contains("evaluation")) {
      const json& e = j.at("evaluation");
      c.allow_gold_labels = e.value("allow_gold_labels", c.allow_gold_labels);
      c.baseline_trials = e.value("baseline_trials", c.baseline_trials);
      c.shapley_samples = e.value("shapley_samples", c.shapley_samples);
      if (e.contains("holdout")) c.holdout = existing_file(base_dir, e, "holdout");
      if (c.baseline_trials < 1 || c.shapley_samples < 1)
        throw ConfigError("evaluation: baseline_trials and shapley_samples must be >= 1");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.train.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::shared_ptr<AnnotatorProvider> make_provider(const json& block) {
  const std::string kind = block.value("kind", std::string());
  if (kind == "simulated") {
    const SimulatedOracleConfig cfg =
        block.contains("config")
            ? SimulatedOracleConfig::from_json(block.at("config"))
            : SimulatedOracleConfig::load(block.at("oracle").get<std::string>());
    return std::make_shared<SimulatedOracle>(cfg);
  }
  if (kind == "network")
    return std::make_shared<NetworkProvider>(NetworkProviderConfig::from_json(block));
  throw ConfigError("unknown provider kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string state_dir;
  bool resume = false;
  std::vector<std::string> ablate;
  std::optional<std::uint64_t> row;
  std::string interrupt_after;
};

void info(const std::string& msg) { std::cerr << "sersal: " << msg << "\n"; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw StateError("cannot create " + path.parent_path().string() + ": " + ec.message());
  write_file_atomic(path, text);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string predictions_csv(const Matrix& probs, std::span<const std::uint64_t> ids) {
  std::string out = "row_id,neg,pos\n";
  char buf[96];
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g\n", static_cast<unsigned long long>(ids[i]),
                  probs(i, 0), probs(i, 1));
    out += buf;
  }
  return out;
}

std::vector<double> positive_column(const Matrix& probs) {
  std::vector<double> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = probs(i, 1);
  return out;
}

class Session {
 public:
  Session(RunConfig cfg) : cfg_(std::move(cfg)), lock_(cfg_.state_dir) {}

  const RunConfig& cfg() const { return cfg_; }

  // Reloads the data, selects the persisted split, locks gold labels unless
  // allowed, and standardizes with training statistics.
  const Split& split() {
    if (split_) return *split_;
    const fs::path meta_path = cfg_.state_dir / "split.json";
    if (!fs::exists(meta_path))
      throw ConfigError("no split in " + cfg_.state_dir.string() + "; run ingest first");
    const json meta = json::parse(read_file(meta_path));
    schema_ = load_schema(cfg_.schema);
    if (meta.at("schema_fingerprint").get<std::uint64_t>() != schema_.fingerprint())
      throw ConfigError("schema changed since ingest");
    if (meta.at("data_sha256").get<std::string>() != sha256_hex(read_file(cfg_.data)))
      throw ConfigError("data file changed since ingest");
    const Dataset ds = load_csv(cfg_.data, schema_);
    ledger_ = ds.gold_ledger();
    if (!cfg_.allow_gold_labels) ledger_->lock();
    const auto train_ids = meta.at("train_ids").get<std::vector<std::uint64_t>>();
    const auto test_ids = meta.at("test_ids").get<std::vector<std::uint64_t>>();
    raw_ = Split{select_ids(ds, train_ids), select_ids(ds, test_ids),
                 meta.at("seed").get<std::uint64_t>(), meta.at("stratified").get<bool>()};
    std::vector<std::string> warnings;
    split_ = standardize(raw_, &warnings);
    for (const auto& w : warnings) info(w);
    return *split_;
  }

  std::size_t gold_reads() const { return ledger_ ? ledger_->reads() : 0; }

  // Test-split gold labels for the evaluation family of commands.
  const std::vector<int>& test_gold() {
    require_gold("evaluation");
    return split().test.gold_labels();
  }
  const std::vector<int>& train_gold() {
    require_gold("evaluation");
    return split().train.gold_labels();
  }

  std::optional<Holdout> holdout() {
    if (!cfg_.holdout) return std::nullopt;
    split();
    const Dataset h = load_csv(*cfg_.holdout, schema_);
    if (h.vocabularies() != raw_.train.vocabularies())
      throw ConfigError("holdout categorical values differ from the training data");
    // The holdout belongs to the operator, not to the split under study.
    const std::vector<int> labels = h.gold_labels();
    return Holdout{FeatureScaler::fit(raw_.train).transform(h.without_gold_labels()), labels};
  }

  void require_gold(const char* what) const {
    if (!cfg_.allow_gold_labels)
      throw ConfigError(std::string(what) +
                        " reads gold labels; set evaluation.allow_gold_labels to true");
  }

  fs::path out(const std::string& name) const { return cfg_.output_dir / name; }
  fs::path state(const std::string& name) const { return cfg_.state_dir / name; }

 private:
  RunConfig cfg_;
  DirectoryLock lock_;
  FeatureSchema schema_;
  Split raw_;
  std::optional<Split> split_;
  std::shared_ptr<GoldLabelLedger> ledger_;
};

int cmd_ingest(Session& s) {
  const RunConfig& c = s.cfg();
  const FeatureSchema schema = load_schema(c.schema);
  const std::string bytes = read_file(c.data);
  const Dataset ds = load_csv(c.data, schema);
  const Split split = stratified_split(ds, c.test_fraction, c.seed);

  const auto& gold = ds.gold_labels();
  std::size_t pos = 0;
  for (int g : gold) pos += g == 1;
  const std::size_t neg = gold.size() - pos;
  const double pn = neg > 0 ? static_cast<double>(pos) / static_cast<double>(neg) : 0.0;

  write_json(s.state("split.json"), {{"seed", split.seed},
                                     {"test_fraction", c.test_fraction},
                                     {"stratified", split.stratified},
                                     {"schema_fingerprint", schema.fingerprint()},
                                     {"data_sha256", sha256_hex(bytes)},
                                     {"train_ids", split.train.ids()},
                                     {"test_ids", split.test.ids()}});
  const json summary = {{"rows", ds.size()},
                        {"features", ds.num_features()},
                        {"numerical", schema.num_numerical()},
                        {"categorical", schema.num_categorical()},
                        {"positives", pos},
                        {"negatives", neg},
                        {"pn_ratio", pn},
                        {"train_rows", split.train.size()},
                        {"test_rows", split.test.size()},
                        {"seed", split.seed}};
  write_json(s.state("summary.json"), summary);
  std::printf("N=%zu F=%zu P/N=%.2f train=%zu test=%zu\n", ds.size(), ds.num_features(), pn,
              split.train.size(), split.test.size());
  return kExitOk;
}

int cmd_annotate(Session& s) {
  const Split& split = s.split();
  const auto provider = make_provider(s.cfg().provider);
  if (!provider->can_score()) throw ConfigError(provider->identity() + " cannot score rows");
  const std::size_t reads = s.gold_reads();
  AnnotationResult r;
  try {
    r = annotate_dataset(*provider, split.train, s.cfg().annotate);
  } catch (const AnnotationAborted& e) {
    write_json(s.state("annotate/failures.json"),
               {{"aborted", e.what()}, {"unreached_ids", e.unreached_ids()}});
    throw;
  }
  write_text(s.state("annotate/annotations.csv"),
                    annotations_to_csv(r.labels, split.train.ids()));
  write_json(s.state("annotate/failures.json"),
             {{"provider", provider->identity()},
              {"rows", r.labels.size()},
              {"failed_ids", r.failed_ids},
              {"diagnostics", r.diagnostics},
              {"gold_label_reads", s.gold_reads() - reads}});
  std::printf("annotated %zu rows, %zu failed\n", r.labels.size(), r.failed_ids.size());
  return kExitOk;
}

SoftLabelSet load_annotations(Session& s) {
  const fs::path p = s.state("annotate/annotations.csv");
  if (!fs::exists(p)) throw ConfigError("no annotations in " + p.string() + "; run annotate first");
  std::vector<std::uint64_t> ids;
  SoftLabelSet labels = annotations_from_csv(read_file(p), ids);
  if (ids != s.split().train.ids())
    throw StateError("annotations do not match the training rows; rerun annotate");
  return labels;
}

int cmd_teach(Session& s) {
  const Split& split = s.split();
  const SoftLabelSet labels = load_annotations(s);
  const std::size_t reads = s.gold_reads();
  const TeachResult r = teach(split.train, labels, s.cfg().train);
  const std::uint64_t fp = split.train.schema().fingerprint();
  write_text(s.state("teach/model_a.ckpt"), serialize_model(r.pair.a, fp));
  write_text(s.state("teach/model_b.ckpt"), serialize_model(r.pair.b, fp));
  json report = r.report.to_json();
  report["gold_label_reads"] = s.gold_reads() - reads;
  write_json(s.state("teach/teach_report.json"), report);
  write_text(s.out("teach_predictions.csv"),
                    predictions_csv(r.pair.predict(split.test), split.test.ids()));
  std::printf("taught with T=%g on %zu rows (D_es %zu rows)\n", r.report.chosen_temperature,
              split.train.size(), r.des.size());
  return kExitOk;
}

std::pair<int, LoopPhase> parse_interrupt(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("--interrupt-after expects LOOP:PHASE");
  try {
    return {std::stoi(text.substr(0, colon)), loop_phase_from_string(text.substr(colon + 1))};
  } catch (const std::logic_error&) {
    throw ConfigError("--interrupt-after expects LOOP:PHASE, got '" + text + "'");
  }
}

int cmd_loop(Session& s, const Flags& flags) {
  const Split& split = s.split();
  const RunConfig& c = s.cfg();
  std::optional<Holdout> holdout = s.holdout();
  std::optional<std::vector<int>> test_gold;
  if (c.allow_gold_labels) test_gold = s.test_gold();

  LoopOptions o;
  o.train = c.train;
  o.policy = c.policy;
  o.annotate = c.annotate;
  o.state_dir = s.state("loop");
  o.resume = flags.resume;
  o.holdout = holdout ? &*holdout : nullptr;
  o.test_gold = test_gold ? &*test_gold : nullptr;
  o.log = info;
  if (!flags.interrupt_after.empty()) {
    const auto stop = parse_interrupt(flags.interrupt_after);
    o.interrupt_after = [stop](int t, LoopPhase p) { return t == stop.first && p == stop.second; };
  }

  const std::size_t reads = s.gold_reads();
  const LoopResult r = run_loop(split, make_provider(c.provider), o);
  const std::size_t loop_reads = s.gold_reads() - reads;

  write_text(s.out("predictions.csv"), predictions_csv(r.test_predictions, split.test.ids()));
  std::vector<LoopMetricsRow> rows;
  json metrics = json::array();
  for (const auto& m : r.state.metrics) {
    rows.push_back({m.t, m.des_accuracy, m.des_loss, m.external_auc, m.student_test_auc,
                    m.annotator_test_auc});
    metrics.push_back(m.to_json());
  }
  emit_loop_metrics(rows, c.output_dir);
  write_json(s.out("loop_summary.json"), {{"t_final", r.state.t},
                                          {"stop_reason", r.state.stop_reason},
                                          {"annotate_calls", r.state.annotate_calls},
                                          {"finetune_calls", r.state.finetune_calls},
                                          {"providers", r.state.provider_identities},
                                          {"gold_label_reads", loop_reads},
                                          {"metrics", metrics}});
  if (test_gold) {
    const EvalReport rep = evaluate(positive_column(r.test_predictions), *test_gold,
                                    "loop " + std::to_string(r.state.t) + " ensemble", c.seed,
                                    c.baseline_trials);
    write_json(s.out("eval_report.json"), rep.to_json());
    std::printf("loop finished at t=%d, test AUC %s\n", r.state.t, fmt("%.4f", rep.auc).c_str());
  } else {
    std::printf("loop finished at t=%d: %s\n", r.state.t, r.state.stop_reason.c_str());
  }
  return kExitOk;
}

// Trained pairs in loop order, with the annotations each was taught on.
struct Trained {
  std::vector<ModelPair> pairs;
  std::vector<SoftLabelSet> annotations;
  std::string origin;
};

Trained load_trained(Session& s) {
  const std::uint64_t fp = s.split().train.schema().fingerprint();
  Trained t;
  if (fs::exists(s.state("loop/state.json"))) {
    LoopState st = restore_state(s.state("loop"), fp);
    t.pairs = std::move(st.checkpoints);
    t.annotations = std::move(st.annotations);
    t.origin = "loop";
  } else if (fs::exists(s.state("teach/model_a.ckpt"))) {
    t.pairs.push_back(ModelPair{deserialize_model(read_file(s.state("teach/model_a.ckpt")), fp),
                                deserialize_model(read_file(s.state("teach/model_b.ckpt")), fp)});
    t.annotations.push_back(load_annotations(s));
    t.origin = "teach";
  }
  if (t.pairs.empty())
    throw ConfigError("no trained checkpoints in " + s.cfg().state_dir.string() +
                      "; run teach or loop first");
  return t;
}

int cmd_eval(Session& s) {
  s.require_gold("eval");
  const Split& split = s.split();
  const Trained t = load_trained(s);
  const RunConfig& c = s.cfg();
  const Matrix probs = t.pairs.back().predict(split.test);
  const EvalReport student = evaluate(positive_column(probs), s.test_gold(),
                                      t.origin + " ensemble, loop " + std::to_string(t.pairs.size()),
                                      c.seed, c.baseline_trials);
  const SoftLabelSet& first = t.annotations.front();
  const EvalReport annotator = evaluate(first.positive(), s.train_gold(), "annotator, loop 1",
                                        c.seed, c.baseline_trials, &first);
  write_json(s.out("eval_report.json"),
             {{"student", student.to_json()}, {"annotator", annotator.to_json()}});
  emit_confidence_bins(annotator.confidence_bins, c.output_dir);
  std::printf("student test AUC %s, annotator train AUC %s\n", fmt("%.4f", student.auc).c_str(),
              fmt("%.4f", annotator.auc).c_str());
  return kExitOk;
}

int cmd_shapley(Session& s, const Flags& flags) {
  const Split& split = s.split();
  const Trained t = load_trained(s);
  const RunConfig& c = s.cfg();
  std::size_t row = 0;
  if (flags.row) {
    const auto& ids = split.test.ids();
    const auto it = std::find(ids.begin(), ids.end(), *flags.row);
    if (it == ids.end()) throw ConfigError("row " + std::to_string(*flags.row) + " is not a test row");
    row = static_cast<std::size_t>(it - ids.begin());
  }
  const auto x = split.test.row(row);
  std::vector<std::string> names;
  for (const auto& col : split.test.schema().columns) names.push_back(col.name);
  for (std::size_t k = 0; k < t.pairs.size(); ++k) {
    const ModelPair& pair = t.pairs[k];
    const ScalarModel f = [&pair](std::span<const double> v) {
      Matrix m(1, v.size());
      std::copy(v.begin(), v.end(), m.row(0).begin());
      return pair.predict(m)(0, 1);
    };
    ShapleyEstimate est = mc_shapley(f, split.train.values(), x, c.shapley_samples, c.seed);
    est.feature_names = names;
    emit_shapley(est, static_cast<int>(k + 1), c.output_dir);
    json j = est.to_json();
    j["row_id"] = split.test.ids()[row];
    write_json(s.out("shapley_loop" + std::to_string(k + 1) + ".json"), j);
  }
  std::printf("Shapley values for row %llu over %zu loop(s)\n",
              static_cast<unsigned long long>(split.test.ids()[row]), t.pairs.size());
  return kExitOk;
}

int cmd_plot(Session& s) {
  const RunConfig& c = s.cfg();
  if (!fs::exists(s.state("loop/state.json")))
    throw ConfigError("no loop state in " + s.state("loop").string() + "; run loop first");
  const LoopState st = restore_state(s.state("loop"), s.split().train.schema().fingerprint());
  std::vector<LoopMetricsRow> rows;
  for (const auto& m : st.metrics)
    rows.push_back({m.t, m.des_accuracy, m.des_loss, m.external_auc, m.student_test_auc,
                    m.annotator_test_auc});
  emit_loop_metrics(rows, c.output_dir);
  if (c.allow_gold_labels && !st.annotations.empty())
    emit_confidence_bins(confidence_bin_report(st.annotations.front(), s.train_gold(),
                                               default_confidence_edges()),
                         c.output_dir);
  std::printf("wrote %zu loop rows to %s\n", rows.size(),
              (c.output_dir / "loop_metrics.csv").string().c_str());
  return kExitOk;
}

void apply_ablations(RunConfig& c, const std::vector<std::string>& ablate) {
  for (const auto& a : ablate) {
    if (a == "no-early-stopping")
      c.train.early_stopping = false;
    else if (a == "hard-labels")
      c.train.hard_labels = true;
    else if (a == "no-mixup")
      c.train.use_mixup = false;
    else
      throw ConfigError("unknown ablation '" + a + "'");
  }
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Noisy-label distillation of LLM annotations into a small tabular model"};
  app.require_subcommand(1);
  Flags flags;
  app.add_option("--config", flags.config, "Run configuration (JSON)")->required();
  app.add_option("--seed", flags.seed, "Override the run seed");
  app.add_option("--state-dir", flags.state_dir, "Override the state directory");
  app.add_flag("--resume", flags.resume, "Continue an interrupted loop");
  app.add_option("--ablate", flags.ablate, "no-early-stopping, hard-labels, or no-mixup")
      ->check(CLI::IsMember({"no-early-stopping", "hard-labels", "no-mixup"}));
  app.add_option("--row", flags.row, "Test row id explained by shapley");
  app.add_option("--interrupt-after", flags.interrupt_after,
                 "Stop the loop after LOOP:PHASE (annotate, teach, decide, finetune)");

  const char* names[][2] = {{"ingest", "Load the data and persist a stratified split"},
                            {"annotate", "Annotate the training rows"},
                            {"teach", "Teach the student on the annotations"},
                            {"loop", "Run the full annotate/teach/reverse-tune loop"},
                            {"eval", "Evaluate the latest student (reads gold labels)"},
                            {"shapley", "Monte Carlo Shapley values per loop"},
                            {"plot", "Write plot-data files"}};
  for (const auto& n : names) app.add_subcommand(n[0], n[1])->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    RunConfig cfg = RunConfig::load(flags.config);
    if (flags.seed) {
      cfg.seed = *flags.seed;
      cfg.train.seed = *flags.seed;
    }
    if (!flags.state_dir.empty()) {
      const bool default_out = cfg.output_dir == cfg.state_dir / "out";
      cfg.state_dir = flags.state_dir;
      if (default_out) cfg.output_dir = cfg.state_dir / "out";
    }
    apply_ablations(cfg, flags.ablate);

    Session s(std::move(cfg));
    if (cmd == "ingest") return cmd_ingest(s);
    if (cmd == "annotate") return cmd_annotate(s);
    if (cmd == "teach") return cmd_teach(s);
    if (cmd == "loop") return cmd_loop(s, flags);
    if (cmd == "eval") return cmd_eval(s);
    if (cmd == "shapley") return cmd_shapley(s, flags);
    if (cmd == "plot") return cmd_plot(s);
    return kExitOther;
  } catch (const ConfigError& e) {
    info(std::string("configuration error: ") + e.what());
    return kExitConfig;
  } catch (const GoldLabelAccessError& e) {
    info(std::string("gold label access refused: ") + e.what());
    return kExitConfig;
  } catch (const ProviderError& e) {
    info(std::string("provider error: ") + e.what());
    return kExitProvider;
  } catch (const TrainingError& e) {
    info(std::string("training error: ") + e.what());
    return kExitTraining;
  } catch (const LoopInterrupted& e) {
    info(std::string(e.what()) + "; rerun with --resume");
    return kExitOther;
  } catch (const json::exception& e) {
    info(std::string("malformed state file: ") + e.what());
    return kExitOther;
  } catch (const std::exception& e) {
    info(std::string("error: ") + e.what());
    return kExitOther;
  }
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<std::string> storage = args;
  storage.insert(storage.begin(), "sersal");
  std::vector<char*> argv;
  for (auto& a : storage) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sersal
