// Command-line front end: gen-corpus, train, evaluate, predict, gradcheck.
// Exit codes: 0 success, 1 validation/config error, 2 runtime failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "laat/errors.hpp"
#include "laat/run.hpp"

namespace {

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<uint64_t> seeds;
  std::istringstream is(csv);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw laat::ConfigError("bad seed value '" + item + "' in --seeds");
    }
  }
  if (seeds.empty()) throw laat::ConfigError("--seeds given but empty");
  return seeds;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw laat::IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LAAT: label attention for multi-label document coding"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  std::string gen_spec, gen_out = "corpus";
  uint64_t gen_seed = 1;
  gen->add_option("--spec", gen_spec, "synthetic spec JSON file")->required();
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed, "generation seed");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_config_path, train_model = "", train_encoder = "",
              train_attention = "", train_seeds_csv = "", train_out = "";
  std::string train_train, train_val, train_test, train_emb;
  double train_lr = -1.0, train_dropout = -1.0;
  int train_epochs = -1, train_batch = -1, train_u = -1, train_da = -1,
      train_de = -1;
  uint64_t train_seed = 0;
  bool train_seed_set = false;
  train->add_option("--config", train_config_path, "run config JSON file");
  train->add_option("--model", train_model, "laat|jointlaat");
  train->add_option("--encoder", train_encoder, "bilstm|bigru|cnn");
  train->add_option("--attention", train_attention, "laat|caml");
  train->add_option("--seeds", train_seeds_csv, "comma-separated seed list");
  train->add_option("--seed", train_seed, "single seed")
      ->each([&](const std::string&) { train_seed_set = true; });
  train->add_option("--out", train_out, "output directory");
  train->add_option("--train", train_train, "training corpus");
  train->add_option("--validation", train_val, "validation corpus");
  train->add_option("--test", train_test, "test corpus (optional)");
  train->add_option("--embeddings", train_emb, "pretrained embedding file");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--epochs", train_epochs, "max epochs");
  train->add_option("--batch-size", train_batch, "batch size");
  train->add_option("--dropout", train_dropout, "dropout probability");
  train->add_option("--hidden-size", train_u, "recurrent hidden size u");
  train->add_option("--attention-dim", train_da, "attention projection d_a");
  train->add_option("--embed-dim", train_de, "embedding size");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  std::string eval_ckpt, eval_corpus, eval_out = "";
  double eval_threshold = 0.5;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--corpus", eval_corpus, "corpus file")->required();
  eval->add_option("--threshold", eval_threshold, "decision threshold");
  eval->add_option("--out", eval_out, "report output directory");

  // predict
  auto* pred = app.add_subcommand("predict", "rank codes for a document");
  std::string pred_ckpt, pred_text, pred_file;
  int pred_k = 8;
  bool pred_attention = false;
  pred->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
  pred->add_option("--text", pred_text, "document text");
  pred->add_option("--file", pred_file, "file containing the document text");
  pred->add_option("--k", pred_k, "number of codes to return");
  pred->add_flag("--attention", pred_attention,
                 "include per-code attention weights (JSON output)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  uint64_t gc_seed = 1;
  double gc_tolerance = 1e-4;
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_option("--tolerance", gc_tolerance, "max relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      laat::run_gen_corpus(gen_spec, gen_out, gen_seed, std::cout);
      return 0;
    }
    if (train->parsed()) {
      laat::RunConfig config;
      if (!train_config_path.empty())
        config = laat::RunConfig::from_file(train_config_path);
      if (!train_model.empty()) {
        if (train_model != "laat" && train_model != "jointlaat")
          throw laat::ConfigError("--model must be laat or jointlaat");
        config.joint_model = (train_model == "jointlaat");
      }
      if (!train_encoder.empty())
        config.model.encoder = laat::encoder_kind_from_string(train_encoder);
      if (!train_attention.empty())
        config.model.attention = laat::attention_kind_from_string(train_attention);
      if (!train_seeds_csv.empty()) config.seeds = parse_seed_list(train_seeds_csv);
      if (train_seed_set) {
        config.training.seed = train_seed;
        if (train_seeds_csv.empty()) config.seeds = {train_seed};
      }
      if (!train_out.empty()) config.output_dir = train_out;
      if (!train_train.empty()) config.train_path = train_train;
      if (!train_val.empty()) config.validation_path = train_val;
      if (!train_test.empty()) config.test_path = train_test;
      if (!train_emb.empty()) config.embeddings_path = train_emb;
      if (train_lr > 0.0) config.training.lr = train_lr;
      if (train_epochs >= 0) config.training.max_epochs = train_epochs;
      if (train_batch > 0) config.training.batch_size = train_batch;
      if (train_dropout >= 0.0) config.model.dropout_p = train_dropout;
      if (train_u > 0) config.model.hidden_size = train_u;
      if (train_da > 0) config.model.attention_dim = train_da;
      if (train_de > 0) config.model.embed_dim = train_de;
      laat::run_train(config, std::cout);
      return 0;
    }
    if (eval->parsed()) {
      laat::run_evaluate(eval_ckpt, eval_corpus, eval_threshold, eval_out,
                         std::cout);
      return 0;
    }
    if (pred->parsed()) {
      if (pred_text.empty() == pred_file.empty())
        throw laat::ConfigError("predict needs exactly one of --text / --file");
      const std::string text =
          pred_text.empty() ? read_file(pred_file) : pred_text;
      laat::run_predict(pred_ckpt, text, pred_k, pred_attention, std::cout);
      return 0;
    }
    if (gc->parsed()) {
      return laat::run_gradcheck(gc_seed, gc_tolerance, std::cout) ? 0 : 2;
    }
  } catch (const laat::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const laat::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const laat::EmptySequenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const laat::IndexError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
