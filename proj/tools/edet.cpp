// Command-line surface for the two-stage event detection toolkit.
//
// Subcommands: train, predict, evaluate, select-verbalizers, sample-split,
// inject-null. Exit codes: 0 success, 1 validation error, 2 runtime failure.
// All randomness routes through --seed; --threads 1 guarantees byte-identical
// reruns.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "edet/edet.hpp"

namespace {

using namespace edet;

struct CommonOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;

  void apply(RunConfig& config) const {
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
  }
};

void add_common(CLI::App* cmd, CommonOverrides& ov) {
  cmd->add_option("--seed", ov.seed, "Override the config seed");
  cmd->add_option("--threads", ov.threads, "Internal parallelism bound (1 = deterministic)");
}

int cmd_train(const std::string& config_path, const std::string& train_path,
              const std::string& ontology_path, const std::string& dev_path,
              const std::string& out_dir, const CommonOverrides& ov, bool auto_verbalizers) {
  RunConfig config = load_config(config_path);
  ov.apply(config);
  Ontology ontology = load_ontology(ontology_path);
  const Corpus train_corpus = load_corpus(train_path, ontology);

  if (auto_verbalizers) {
    Model probe = setup_model(config, ontology, train_corpus.sentences);
    const auto selected = select_verbalizers(train_corpus.sentences, ontology, *probe.encoder,
                                             config.top_n_verbalizers,
                                             ClozePrompt(config.prompt_template));
    ontology = apply_verbalizers(ontology, selected);
  }

  FewShotSplit split;
  split.train = train_corpus.sentences;
  split.seed = config.seed;

  std::vector<AnnotatedSentence> dev;
  if (!dev_path.empty()) dev = load_corpus(dev_path, ontology).sentences;

  TrainResult result = train(split, config, ontology, dev.empty() ? nullptr : &dev);
  for (const auto& e : result.history) {
    std::cout << "epoch " << e.epoch << "  id_loss " << e.id_loss << "  loc_loss " << e.loc_loss;
    if (e.dev_mention_f1 >= 0)
      std::cout << "  dev_mention_f1 " << e.dev_mention_f1 << "  dev_id_f1 "
                << e.dev_identification_f1;
    std::cout << "\n";
  }
  save_model(out_dir, result.model);
  std::cout << "model saved to " << out_dir << "\n";
  return 0;
}

int cmd_predict(const std::string& model_dir, const std::string& input_path,
                const std::string& output_path, const std::string& mode_str,
                const CommonOverrides& ov) {
  Model model = load_model(model_dir);
  CommonOverrides ov2 = ov;
  ov2.apply(model.config);
  const Corpus corpus = load_corpus(input_path, model.ontology, UnknownTypePolicy::Skip);
  const PredictionMode mode = prediction_mode_from_string(mode_str);
  const PredictionResult result =
      predict(bare_sentences(corpus.sentences), model, mode, model.config.threads);
  save_predictions(output_path, result.sentences);
  std::cout << "wrote " << result.sentences.size() << " sentences to " << output_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& pred_path, const std::string& gold_path,
                 const std::string& ontology_path, const std::string& json_out) {
  Ontology onto;
  if (!ontology_path.empty()) {
    onto = load_ontology(ontology_path);
  } else {
    // build a permissive ontology from the gold file's types
    std::ifstream in(gold_path);
    if (!in) throw ValidationError("cannot open gold file: " + gold_path);
    std::set<std::string> types;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::ordered_json::parse(line);
      if (j.contains("mentions"))
        for (const auto& m : j.at("mentions")) types.insert(m.at("type").get<std::string>());
    }
    for (const auto& t : types) onto.types.push_back(EventTypeSpec{t, {"x"}, std::nullopt, {}});
    if (onto.types.empty()) onto.types.push_back(EventTypeSpec{"__none__", {"x"}, std::nullopt, {}});
  }
  const Corpus gold = load_corpus(gold_path, onto, UnknownTypePolicy::Fail);
  const Corpus pred = load_corpus(pred_path, onto, UnknownTypePolicy::Skip);

  const ScoreReport mention_report = score_mentions(pred.sentences, gold.sentences);
  const ScoreReport id_report =
      score_identification(type_sets_of(pred.sentences), type_sets_of(gold.sentences));
  std::cout << render_report(mention_report, "event mention detection");
  std::cout << render_report(id_report, "identification (sentence, type)");
  if (!json_out.empty()) {
    nlohmann::ordered_json j;
    j["mention"] = report_to_json(mention_report);
    j["identification"] = report_to_json(id_report);
    std::ofstream out(json_out);
    if (!out) throw ValidationError("cannot write report: " + json_out);
    out << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_select_verbalizers(const std::string& config_path, const std::string& train_path,
                           const std::string& ontology_path, const std::string& out_path,
                           int top_n, const CommonOverrides& ov) {
  RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
  ov.apply(config);
  if (top_n > 0) config.top_n_verbalizers = top_n;
  const Ontology ontology = load_ontology(ontology_path);
  const Corpus train_corpus = load_corpus(train_path, ontology);
  Model probe = setup_model(config, ontology, train_corpus.sentences);
  const auto selected =
      select_verbalizers(train_corpus.sentences, ontology, *probe.encoder,
                         config.top_n_verbalizers, ClozePrompt(config.prompt_template));
  const Ontology updated = apply_verbalizers(ontology, selected);
  save_ontology(out_path, updated);
  std::cout << "wrote ontology with selected verbalizers to " << out_path << "\n";
  return 0;
}

int cmd_sample_split(const std::string& corpus_path, const std::string& ontology_path, int k,
                     std::uint64_t seed, const std::string& train_out,
                     const std::string& test_out) {
  const Ontology ontology = load_ontology(ontology_path);
  const Corpus corpus = load_corpus(corpus_path, ontology);
  const FewShotSplit split = sample_few_shot(corpus, k, seed);
  save_predictions(train_out, split.train);
  save_predictions(test_out, split.test);
  std::cout << "train " << split.train.size() << " sentences, test " << split.test.size()
            << " sentences\n";
  return 0;
}

int cmd_inject_null(const std::string& train_path, const std::string& test_path,
                    const std::string& pool_path, const std::string& ontology_path, double ratio,
                    std::uint64_t seed, bool no_test_inject, const std::string& train_out,
                    const std::string& test_out) {
  const Ontology ontology = load_ontology(ontology_path);
  FewShotSplit split;
  split.train = load_corpus(train_path, ontology).sentences;
  if (!test_path.empty()) split.test = load_corpus(test_path, ontology).sentences;
  const auto pool = load_corpus(pool_path, ontology).sentences;
  const FewShotSplit out = inject_null_instances(split, ratio, pool, seed, !no_test_inject);
  save_predictions(train_out, out.train);
  if (!test_out.empty()) save_predictions(test_out, out.test);
  std::cout << "train " << out.train.size() << " sentences";
  if (!test_out.empty()) std::cout << ", test " << out.test.size() << " sentences";
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage event detection: cloze-prompt identification + BIO CRF localization"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model and save a checkpoint");
  std::string config_path, train_path, ontology_path, dev_path, out_dir;
  bool auto_verbalizers = false;
  CommonOverrides train_ov;
  train_cmd->add_option("--config", config_path, "RunConfig JSON")->required();
  train_cmd->add_option("--train", train_path, "Training corpus JSONL")->required();
  train_cmd->add_option("--ontology", ontology_path, "Ontology JSON")->required();
  train_cmd->add_option("--dev", dev_path, "Optional dev corpus JSONL for per-epoch metrics");
  train_cmd->add_option("--out", out_dir, "Checkpoint output directory")->required();
  train_cmd->add_flag("--auto-verbalizers", auto_verbalizers,
                      "Select verbalizers from training triggers before training");
  add_common(train_cmd, train_ov);

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Run prediction with a trained model");
  std::string model_dir, input_path, output_path, mode_str = "two_stage";
  CommonOverrides predict_ov;
  predict_cmd->add_option("--model", model_dir, "Checkpoint directory")->required();
  predict_cmd->add_option("--input", input_path, "Input corpus JSONL")->required();
  predict_cmd->add_option("--output", output_path, "Predictions JSONL")->required();
  predict_cmd->add_option("--mode", mode_str, "two_stage | enumerate");
  add_common(predict_cmd, predict_ov);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against gold");
  std::string pred_path, gold_path, eval_onto_path, json_out;
  eval_cmd->add_option("--pred", pred_path, "Predictions JSONL")->required();
  eval_cmd->add_option("--gold", gold_path, "Gold corpus JSONL")->required();
  eval_cmd->add_option("--ontology", eval_onto_path, "Optional ontology JSON");
  eval_cmd->add_option("--report", json_out, "Optional JSON report output path");

  // select-verbalizers
  auto* sel_cmd = app.add_subcommand("select-verbalizers",
                                     "Pick verbalizers from training triggers (frozen encoder)");
  std::string sel_config, sel_train, sel_onto, sel_out;
  int sel_top_n = 0;
  CommonOverrides sel_ov;
  sel_cmd->add_option("--config", sel_config, "Optional RunConfig JSON");
  sel_cmd->add_option("--train", sel_train, "Training corpus JSONL")->required();
  sel_cmd->add_option("--ontology", sel_onto, "Ontology JSON")->required();
  sel_cmd->add_option("--out", sel_out, "Output ontology JSON")->required();
  sel_cmd->add_option("--top-n", sel_top_n, "Verbalizers per type");
  add_common(sel_cmd, sel_ov);

  // sample-split
  auto* split_cmd = app.add_subcommand("sample-split", "Build a K-per-type few-shot split");
  std::string split_corpus, split_onto, split_train_out, split_test_out;
  int split_k = 5;
  std::uint64_t split_seed = 42;
  split_cmd->add_option("--corpus", split_corpus, "Corpus JSONL")->required();
  split_cmd->add_option("--ontology", split_onto, "Ontology JSON")->required();
  split_cmd->add_option("--k", split_k, "Examples per type")->required();
  split_cmd->add_option("--seed", split_seed, "Sampling seed");
  split_cmd->add_option("--train-out", split_train_out, "Train split output JSONL")->required();
  split_cmd->add_option("--test-out", split_test_out, "Test split output JSONL")->required();

  // inject-null
  auto* null_cmd = app.add_subcommand("inject-null", "Inject NULL instances into a split");
  std::string null_train, null_test, null_pool, null_onto, null_train_out, null_test_out;
  double null_ratio = 0.0;
  std::uint64_t null_seed = 42;
  bool no_test_inject = false;
  null_cmd->add_option("--train", null_train, "Train split JSONL")->required();
  null_cmd->add_option("--test", null_test, "Optional test split JSONL");
  null_cmd->add_option("--pool", null_pool, "NULL sentence pool JSONL")->required();
  null_cmd->add_option("--ontology", null_onto, "Ontology JSON")->required();
  null_cmd->add_option("--ratio", null_ratio, "NULL sentences per event-bearing sentence")
      ->required();
  null_cmd->add_option("--seed", null_seed, "Sampling seed");
  null_cmd->add_flag("--no-test-inject", no_test_inject, "Do not mirror the ratio onto test");
  null_cmd->add_option("--train-out", null_train_out, "Output train JSONL")->required();
  null_cmd->add_option("--test-out", null_test_out, "Output test JSONL");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed())
      return cmd_train(config_path, train_path, ontology_path, dev_path, out_dir, train_ov,
                       auto_verbalizers);
    if (predict_cmd->parsed())
      return cmd_predict(model_dir, input_path, output_path, mode_str, predict_ov);
    if (eval_cmd->parsed()) return cmd_evaluate(pred_path, gold_path, eval_onto_path, json_out);
    if (sel_cmd->parsed())
      return cmd_select_verbalizers(sel_config, sel_train, sel_onto, sel_out, sel_top_n, sel_ov);
    if (split_cmd->parsed())
      return cmd_sample_split(split_corpus, split_onto, split_k, split_seed, split_train_out,
                              split_test_out);
    if (null_cmd->parsed())
      return cmd_inject_null(null_train, null_test, null_pool, null_onto, null_ratio, null_seed,
                             no_test_inject, null_train_out, null_test_out);
  } catch (const edet::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const edet::RuntimeFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
