#include "laat/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "config_json.hpp"
#include "laat/checkpoint.hpp"
#include "laat/errors.hpp"
#include "laat/gradcheck.hpp"
#include "laat/synthetic.hpp"

namespace laat {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  training.validate();
  if (train_path.empty()) throw ConfigError("missing training corpus path");
  if (validation_path.empty()) throw ConfigError("missing validation corpus path");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (output_dir.empty()) throw ConfigError("missing output directory");
}

std::string RunConfig::to_json() const {
  json j{{"model", laat_config_to_json(model)},
         {"training", train_config_to_json(training)},
         {"joint_model", joint_model},
         {"data",
          {{"train", train_path},
           {"validation", validation_path},
           {"test", test_path},
           {"embeddings", embeddings_path},
           {"max_len", max_len}}},
         {"output_dir", output_dir},
         {"seeds", seeds}};
  return j.dump(2);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  RunConfig c;
  try {
    if (j.contains("model")) c.model = laat_config_from_json(j["model"]);
    if (j.contains("training")) c.training = train_config_from_json(j["training"]);
    c.joint_model = j.value("joint_model", c.joint_model);
    if (j.contains("data")) {
      const auto& d = j["data"];
      c.train_path = d.value("train", c.train_path);
      c.validation_path = d.value("validation", c.validation_path);
      c.test_path = d.value("test", c.test_path);
      c.embeddings_path = d.value("embeddings", c.embeddings_path);
      c.max_len = d.value("max_len", c.max_len);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<uint64_t>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string resolve_output_dir(const std::string& configured) {
  if (const char* env = std::getenv("LAAT_OUT_DIR"); env && *env) return env;
  return configured;
}

namespace {

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

}  // namespace

void run_gen_corpus(const std::string& spec_path, const std::string& out_dir_in,
                    uint64_t seed, std::ostream& log) {
  const SyntheticSpec spec = load_synthetic_spec(spec_path);
  const std::string out_dir = resolve_output_dir(out_dir_in);
  ensure_dir(out_dir);

  SyntheticCorpus synth = generate_synthetic_corpus(spec, seed);
  auto splits = split_by_patient(synth.corpus, spec.split_fractions, seed);

  write_corpus(splits[0], (fs::path(out_dir) / "train.jsonl").string());
  write_corpus(splits[1], (fs::path(out_dir) / "validation.jsonl").string());
  write_corpus(splits[2], (fs::path(out_dir) / "test.jsonl").string());
  write_planted_metadata(synth.planted,
                         (fs::path(out_dir) / "planted.jsonl").string());
  write_text(fs::path(out_dir) / "corpus_spec.json", synthetic_spec_to_json(spec));

  log << "generated " << synth.corpus.size() << " documents -> " << out_dir
      << " (train " << splits[0].size() << ", validation " << splits[1].size()
      << ", test " << splits[2].size() << ")\n";
}

namespace {

struct PreparedData {
  TokenVocab tokens;
  CodeVocabulary codes;
  Tensor embedding_matrix;
  int embed_dim = 0;
  std::vector<ProcessedDocument> train, validation, test;
};

PreparedData prepare_data(const RunConfig& config) {
  Corpus train_corpus = read_corpus(config.train_path);
  if (train_corpus.empty()) throw ConfigError("training corpus is empty");
  Corpus val_corpus = read_corpus(config.validation_path);
  if (val_corpus.empty()) throw ConfigError("validation corpus is empty");

  PreparedData d;
  d.codes = build_code_vocabulary(train_corpus);

  const std::vector<std::string> corpus_tokens =
      collect_corpus_tokens(train_corpus, config.max_len);
  if (!config.embeddings_path.empty()) {
    EmbeddingTable pretrained = load_embeddings(config.embeddings_path,
                                                config.training.seed);
    EmbeddingTable table = build_embedding_table(
        corpus_tokens, pretrained.dim, config.training.seed, &pretrained);
    d.tokens = table.vocab;
    d.embedding_matrix = table.matrix;
    d.embed_dim = table.dim;
  } else {
    EmbeddingTable table = build_embedding_table(
        corpus_tokens, config.model.embed_dim, config.training.seed, nullptr);
    d.tokens = table.vocab;
    d.embedding_matrix = table.matrix;
    d.embed_dim = table.dim;
  }

  int dropped = 0;
  d.train = process_corpus(train_corpus, d.tokens, d.codes, config.max_len, &dropped);
  d.validation = process_corpus(val_corpus, d.tokens, d.codes, config.max_len, &dropped);
  if (!config.test_path.empty()) {
    Corpus test_corpus = read_corpus(config.test_path);
    d.test = process_corpus(test_corpus, d.tokens, d.codes, config.max_len, &dropped);
  }
  if (dropped > 0)
    std::cerr << "warning: dropped " << dropped
              << " code assignments outside the training label space\n";
  return d;
}

LaatConfig resolve_model_config(const RunConfig& config, const PreparedData& d) {
  LaatConfig mc = config.model;
  mc.vocab_size = d.tokens.size();
  mc.embed_dim = d.embed_dim;
  mc.num_labels = d.codes.num_raw();
  if (config.joint_model) {
    if (d.codes.num_normalized() >= d.codes.num_raw())
      throw ConfigError(
          "corpus carries no code hierarchy (every raw code is its own "
          "category); JointLAAT needs normalized codes with several children");
    JointConfig jc;
    jc.num_normalized_labels = d.codes.num_normalized();
    jc.projection_size = config.model.joint ? config.model.joint->projection_size
                                            : JointConfig{}.projection_size;
    mc.joint = jc;
  } else {
    mc.joint.reset();
  }
  mc.validate();
  return mc;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TrainOutcome run_train(const RunConfig& config_in, std::ostream& log) {
  RunConfig config = config_in;
  config.output_dir = resolve_output_dir(config.output_dir);
  config.validate();
  if (config.seeds.empty()) config.seeds = {config.training.seed};

  const fs::path out(config.output_dir);
  ensure_dir(out / "checkpoints");
  ensure_dir(out / "logs");
  ensure_dir(out / "reports");

  PreparedData data = prepare_data(config);
  const LaatConfig model_config = resolve_model_config(config, data);

  {
    RunConfig resolved = config;
    resolved.model = model_config;
    write_text(out / "config.json", resolved.to_json());
  }

  TrainOutcome outcome;
  std::vector<double> val_micro, val_macro, test_micro, test_macro;

  for (uint64_t seed : config.seeds) {
    TrainConfig tc = config.training;
    tc.seed = seed;

    Rng init = Rng(seed).substream("init");
    LaatModel model(model_config, init);
    model.set_embedding_matrix(data.embedding_matrix);

    const std::string tag = "seed_" + std::to_string(seed);
    const std::string ckpt_path = (out / "checkpoints" / (tag + ".ckpt")).string();

    std::ofstream train_log(out / "logs" / ("train_" + tag + ".jsonl"));
    if (!train_log) throw IoError("cannot write training log for " + tag);

    FitHooks hooks;
    hooks.on_improved = [&](const LaatModel& best, int) {
      save_checkpoint(ckpt_path, best, data.tokens, data.codes);
    };

    FitResult fit_result = fit(model, data.train, data.validation,
                               data.codes.raw_codes, tc, &train_log, hooks);
    if (!fs::exists(ckpt_path))  // zero epochs or nothing improved
      save_checkpoint(ckpt_path, *fit_result.best_model, data.tokens, data.codes);

    // Recompute from the persisted best model: identical to the recorded
    // best epoch because evaluation is pure.
    MetricReport val_report =
        fit_result.history.empty()
            ? evaluate(*fit_result.best_model, data.validation,
                       data.codes.raw_codes, tc.threshold)
            : fit_result.best_val_report;
    write_text(out / "reports" / ("validation_" + tag + ".json"),
               val_report.to_json());

    outcome.checkpoint_paths.push_back(ckpt_path);
    outcome.best_val_micro_f1.push_back(val_report.micro_f1);
    val_micro.push_back(val_report.micro_f1);
    val_macro.push_back(val_report.macro_f1);

    log << tag << ": best epoch " << fit_result.best_epoch << ", validation "
        << val_report.table_row() << '\n';

    if (!data.test.empty()) {
      MetricReport test_report = evaluate(*fit_result.best_model, data.test,
                                          data.codes.raw_codes, tc.threshold);
      write_text(out / "reports" / ("test_" + tag + ".json"),
                 test_report.to_json());
      test_micro.push_back(test_report.micro_f1);
      test_macro.push_back(test_report.macro_f1);
      log << tag << ": test " << test_report.table_row() << '\n';
    }
  }

  if (config.seeds.size() > 1) {
    json summary{{"seeds", config.seeds},
                 {"validation_micro_f1",
                  {{"mean", mean_of(val_micro)}, {"std", std_of(val_micro)}}},
                 {"validation_macro_f1",
                  {{"mean", mean_of(val_macro)}, {"std", std_of(val_macro)}}}};
    if (!test_micro.empty()) {
      summary["test_micro_f1"] = {{"mean", mean_of(test_micro)},
                                  {"std", std_of(test_micro)}};
      summary["test_macro_f1"] = {{"mean", mean_of(test_macro)},
                                  {"std", std_of(test_macro)}};
    }
    outcome.summary_path = (out / "reports" / "summary.json").string();
    write_text(outcome.summary_path, summary.dump(2));
    log << "seed summary: validation micro-F1 " << mean_of(val_micro) << " +- "
        << std_of(val_micro) << '\n';
  }
  return outcome;
}

MetricReport run_evaluate(const std::string& checkpoint_path,
                          const std::string& corpus_path, double threshold,
                          const std::string& out_dir_in, std::ostream& log) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  Corpus corpus = read_corpus(corpus_path);
  if (corpus.empty()) throw ConfigError("evaluation corpus is empty");

  int dropped = 0;
  std::vector<ProcessedDocument> docs =
      process_corpus(corpus, ckpt.tokens, ckpt.codes, kDefaultMaxLen, &dropped);
  if (dropped > 0)
    std::cerr << "warning: dropped " << dropped
              << " code assignments outside the checkpoint label space\n";
  bool any_gold = false;
  for (const auto& d : docs)
    for (uint8_t y : d.gold_raw) any_gold |= (y != 0);
  if (!any_gold)
    throw ConfigError(
        "corpus shares no codes with the checkpoint label space; vocabulary "
        "mismatch between checkpoint and corpus");

  MetricReport report =
      evaluate(ckpt.model, docs, ckpt.codes.raw_codes, threshold);

  const std::string out_dir = resolve_output_dir(out_dir_in);
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(fs::path(out_dir) / "evaluation.json", report.to_json());
    write_text(fs::path(out_dir) / "evaluation.txt", report.text_report());
  }
  log << report.table_row() << '\n';
  return report;
}

void run_predict(const std::string& checkpoint_path, const std::string& text,
                 int top_k, bool dump_attention, std::ostream& out) {
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);

  const std::vector<std::string> tokens = preprocess(text, kDefaultMaxLen);
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(ckpt.tokens.id_or_unk(t));

  Tape tape;
  tape.set_enabled(false);
  Rng unused(0);
  ForwardTrace trace =
      ckpt.model.config().joint
          ? forward_joint(tape, ckpt.model, ids, static_cast<int>(ids.size()),
                          false, unused)
          : forward_laat(tape, ckpt.model, ids, static_cast<int>(ids.size()),
                         false, unused);

  const auto& probs = trace.probabilities.data();
  std::vector<int> order(probs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return a < b;
  });
  const int take = std::min<int>(top_k, static_cast<int>(order.size()));

  if (dump_attention) {
    json preds = json::array();
    for (int r = 0; r < take; ++r) {
      const int l = order[r];
      std::vector<double> row(tokens.size());
      for (size_t t = 0; t < tokens.size(); ++t)
        row[t] = trace.attention.at(l, static_cast<int>(t));
      preds.push_back({{"code", ckpt.codes.raw_codes[l]},
                       {"probability", probs[l]},
                       {"attention", row}});
    }
    out << json{{"tokens", tokens}, {"predictions", preds}}.dump(2) << '\n';
  } else {
    for (int r = 0; r < take; ++r) {
      const int l = order[r];
      out << (r + 1) << '\t' << ckpt.codes.raw_codes[l] << '\t' << probs[l]
          << '\n';
    }
  }
}

bool run_gradcheck(uint64_t seed, double tolerance, std::ostream& out) {
  // Tiny but fully wired models so the check covers every group quickly.
  LaatConfig flat;
  flat.vocab_size = 10;
  flat.embed_dim = 4;
  flat.hidden_size = 3;
  flat.attention_dim = 3;
  flat.num_labels = 4;
  flat.dropout_p = 0.0;

  LaatConfig joint = flat;
  joint.joint = JointConfig{2, 2};

  bool all_ok = true;
  for (const auto& [name, cfg] :
       {std::pair<std::string, LaatConfig>{"laat", flat},
        std::pair<std::string, LaatConfig>{"jointlaat", joint}}) {
    GradCheckReport report = gradcheck_model(cfg, seed, /*doc_len=*/5);
    out << name << ":\n";
    for (const auto& g : report.groups) {
      const bool ok = g.max_rel_error <= tolerance;
      all_ok &= ok;
      out << "  " << (ok ? "ok  " : "FAIL") << "  " << g.name << "  max rel err "
          << g.max_rel_error << "  (" << g.entries << " entries)\n";
    }
  }
  out << (all_ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance "
      << tolerance << ")\n";
  return all_ok;
}

}  // namespace laat
