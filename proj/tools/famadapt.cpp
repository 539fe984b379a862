// Command-line front end: train / translate / eval / cluster / params /
// experiment. Every failure path prints a single-line diagnostic to stderr
// and exits nonzero; success is silent apart from the requested output.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "famadapt/evalgen.hpp"
#include "famadapt/experiment.hpp"

using namespace famadapt;
namespace fs = std::filesystem;

namespace {

// Multi-line library errors (config validation lists every violation)
// collapse onto one line for the shell.
std::string one_line(const std::string& msg) {
  std::string out;
  bool pending_sep = false;
  for (char c : msg) {
    if (c == '\n') {
      pending_sep = true;
      continue;
    }
    if (pending_sep) {
      if (c == ' ' || c == '-') continue;
      out += "; ";
      pending_sep = false;
    }
    out += c;
  }
  return out;
}

int fail(const std::string& msg) {
  std::cerr << "famadapt: " << one_line(msg) << "\n";
  return 1;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::string line;
  if (path == "-") {
    while (std::getline(std::cin, line)) lines.push_back(line);
    return lines;
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot open input file: " + path);
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  if (path == "-") {
    for (const std::string& line : lines) std::cout << line << "\n";
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open output file: " + path);
  for (const std::string& line : lines) out << line << "\n";
}

std::uint64_t primary_seed(const ExperimentSpec& spec) {
  return spec.seeds.empty() ? spec.train.seed : spec.seeds.front();
}

void save_vocab(const LoadedDataset& data, const std::string& out_dir) {
  fs::create_directories(out_dir);
  data.vocab.save(out_dir + "/vocab.txt");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"family-adapter multilingual translation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::int64_t workers = 1;
  auto* opt_config = app.add_option("--config", config_path, "experiment spec (key=value lines)");
  auto* opt_seed = app.add_option("--seed", seed, "replace the spec's seed list with one seed");
  app.add_option("--out-dir", out_dir, "directory for checkpoints, logs and reports")
      ->capture_default_str();
  app.add_option("--workers", workers, "parallel cells for `experiment`")->capture_default_str();

  auto load_spec = [&](bool config_required) {
    ExperimentSpec spec;
    if (!config_path.empty()) {
      spec = ExperimentSpec::load(config_path);
    } else if (config_required) {
      throw ConfigError("this command needs --config pointing at an experiment spec");
    } else {
      spec.apply_env_overrides();
    }
    if (opt_seed->count() > 0) spec.seeds = {seed};
    return spec;
  };

  // train
  std::string train_regime;
  auto* cmd_train = app.add_subcommand("train", "train one regime end to end");
  cmd_train->fallthrough();
  cmd_train->add_option("--regime", train_regime, "family, agnostic, pair, random, gmm or full_ft")
      ->required()
      ->check(CLI::IsMember(known_regimes()));

  // translate
  std::string ckpt_path, input_path, output_path = "-", tgt_lang, vocab_path, data_dir;
  std::int64_t beam = 5;
  double length_penalty = 1.0;
  auto* cmd_translate = app.add_subcommand("translate", "decode a file with a trained checkpoint");
  cmd_translate->fallthrough();
  cmd_translate->add_option("--checkpoint", ckpt_path, "trained checkpoint file")->required();
  cmd_translate->add_option("--input", input_path, "source sentences, one per line ('-' = stdin)")
      ->required();
  cmd_translate->add_option("--output", output_path, "where translations go ('-' = stdout)")
      ->capture_default_str();
  cmd_translate->add_option("--lang", tgt_lang, "target language code")->required();
  cmd_translate->add_option("--beam", beam, "beam size; 1 decodes greedily")
      ->capture_default_str();
  cmd_translate->add_option("--length-penalty", length_penalty, "beam length normalization")
      ->capture_default_str();
  cmd_translate->add_option("--vocab", vocab_path, "vocabulary file saved by train/experiment");
  cmd_translate->add_option("--data", data_dir, "dataset directory to rebuild the vocabulary");

  // eval
  std::string eval_regime, eval_split;
  auto* cmd_eval = app.add_subcommand("eval", "BLEU per language pair for one regime");
  cmd_eval->fallthrough();
  cmd_eval->add_option("--regime", eval_regime, "regime to evaluate")
      ->required()
      ->check(CLI::IsMember(known_regimes()));
  cmd_eval->add_option("--split", eval_split, "train, valid or test (default: spec's eval_split)");

  // cluster
  auto* cmd_cluster = app.add_subcommand("cluster", "group languages by encoder embeddings");
  cmd_cluster->fallthrough();

  // params
  std::string params_registry;
  std::int64_t p_model_dim = -1, p_ff_dim = -1, p_heads = -1, p_enc = -1, p_dec = -1;
  std::int64_t p_bottleneck = -1, p_vocab = 250000, p_embad = -1;
  auto* cmd_params = app.add_subcommand("params", "adapter parameter budget per regime");
  cmd_params->fallthrough();
  cmd_params->add_option("--registry", params_registry, "language registry file");
  cmd_params->add_option("--model-dim", p_model_dim, "transformer width");
  cmd_params->add_option("--ff-dim", p_ff_dim, "feed-forward width");
  cmd_params->add_option("--heads", p_heads, "attention heads");
  cmd_params->add_option("--enc-layers", p_enc, "encoder layers");
  cmd_params->add_option("--dec-layers", p_dec, "decoder layers");
  cmd_params->add_option("--bottleneck", p_bottleneck, "adapter bottleneck width");
  cmd_params->add_option("--vocab-size", p_vocab, "vocabulary size for the backbone figure")
      ->capture_default_str();
  cmd_params->add_option("--embedding-adapters", p_embad, "1 = adapters on both embeddings");

  // experiment
  auto* cmd_experiment = app.add_subcommand("experiment", "run the full regime/sweep/seed grid");
  cmd_experiment->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "famadapt: " << one_line(e.what()) << "\n";
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  }

  try {
    if (cmd_train->parsed()) {
      ExperimentSpec spec = load_spec(true);
      spec.regimes = {train_regime};
      spec.validate();
      const LoadedDataset data = load_dataset_dir(spec.data);
      const LanguageRegistry registry = experiment_registry(spec, data);
      save_vocab(data, out_dir);
      for (const ExperimentCell& cell : experiment_grid(spec)) {
        const std::string cell_dir = out_dir + "/cells/" + cell.label;
        const CellOutcome outcome = run_cell(spec, data, registry, cell, cell_dir, &std::cout);
        for (const auto& [group, path] : outcome.checkpoints) {
          std::cout << "checkpoint " << group << ": " << path << "\n";
        }
      }
      return 0;
    }

    if (cmd_translate->parsed()) {
      if (vocab_path.empty() && data_dir.empty()) {
        throw ConfigError("translate needs --vocab or --data to recover the vocabulary");
      }
      const Vocab vocab =
          vocab_path.empty() ? load_dataset_dir(data_dir).vocab : Vocab::load(vocab_path);
      RestoredModel restored = restore_checkpoint(ckpt_path);
      const std::vector<std::string> lines = read_lines(input_path);
      write_lines(output_path, translate_lines(restored, vocab, lines, tgt_lang, beam,
                                               length_penalty));
      return 0;
    }

    if (cmd_eval->parsed()) {
      ExperimentSpec spec = load_spec(true);
      spec.regimes = {eval_regime};
      if (!eval_split.empty()) spec.eval_split = eval_split;
      spec.validate();
      const LoadedDataset data = load_dataset_dir(spec.data);
      const LanguageRegistry registry = experiment_registry(spec, data);
      std::cout << "cell\tlanguage\tbleu\n" << std::fixed << std::setprecision(3);
      for (const ExperimentCell& cell : experiment_grid(spec)) {
        const std::string cell_dir = out_dir + "/cells/" + cell.label;
        const CellOutcome outcome = run_cell(spec, data, registry, cell, cell_dir);
        double sum = 0.0;
        const auto bleu = evaluate_cell(spec, data, registry, outcome);
        for (const auto& [code, score] : bleu) {
          std::cout << cell.label << '\t' << code << '\t' << score << "\n";
          sum += score;
        }
        std::cout << cell.label << "\tavg\t" << sum / static_cast<double>(bleu.size()) << "\n";
      }
      return 0;
    }

    if (cmd_cluster->parsed()) {
      ExperimentSpec spec = load_spec(true);
      if (spec.regimes.empty()) spec.regimes = {"gmm"};  // cluster alone needs no regime list
      spec.validate();
      const LoadedDataset data = load_dataset_dir(spec.data);
      const LanguageRegistry registry = experiment_registry(spec, data);
      const std::uint64_t cluster_seed = primary_seed(spec);
      Rng model_rng = Rng(cluster_seed).fork("model");
      Seq2SeqModel model(spec.model_config(data.vocab.size()), model_rng);
      const ClusterReport report = cluster_with_model(spec, data, registry, model, cluster_seed);
      std::cout << cluster_report_text(report);
      fs::create_directories(out_dir);
      save_grouping(report.scheme, out_dir + "/grouping.txt");
      std::ofstream rep(out_dir + "/cluster_report.txt", std::ios::trunc);
      if (!rep) throw IoError("cannot write " + out_dir + "/cluster_report.txt");
      rep << cluster_report_text(report);
      std::cout << "grouping: " << out_dir << "/grouping.txt\n";
      return 0;
    }

    if (cmd_params->parsed()) {
      ExperimentSpec spec = load_spec(false);
      if (p_model_dim > 0) spec.model_dim = p_model_dim;
      if (p_ff_dim > 0) spec.ff_dim = p_ff_dim;
      if (p_heads > 0) spec.heads = p_heads;
      if (p_enc > 0) spec.enc_layers = p_enc;
      if (p_dec > 0) spec.dec_layers = p_dec;
      if (p_bottleneck > 0) spec.bottleneck = p_bottleneck;
      if (p_embad >= 0) spec.embedding_adapters = p_embad != 0;
      std::string registry_path = params_registry;
      if (registry_path.empty() && !spec.registry.empty()) registry_path = spec.registry;
      if (registry_path.empty() && !spec.data.empty()) registry_path = spec.data + "/registry.txt";
      if (registry_path.empty()) {
        throw ConfigError("params needs --registry (or a spec with registry/data set)");
      }
      const LanguageRegistry registry = LanguageRegistry::load(registry_path);
      const ModelConfig mcfg = spec.model_config(p_vocab);
      AdapterConfig acfg;
      acfg.model_dim = spec.model_dim;
      acfg.bottleneck = spec.bottleneck;
      acfg.init_scale = spec.adapter_init_scale;
      acfg.placement = mcfg.adapter_placement;

      Rng rng(0);  // family/agnostic/pair groupings ignore it
      std::map<std::string, BudgetReport> budgets;
      for (const char* name : {"agnostic", "family", "pair"}) {
        const GroupingScheme scheme = build_grouping(registry, grouping_kind_from_name(name), rng);
        budgets[name] = budget_report(mcfg, acfg, scheme);
        std::cout << "regime " << name << "\n" << budget_report_text(budgets[name]) << "\n";
      }
      const double base = static_cast<double>(budgets["agnostic"].total);
      std::cout << std::fixed << std::setprecision(2);
      std::cout << "family/agnostic total: " << static_cast<double>(budgets["family"].total) / base
                << "x\n";
      std::cout << "pair/agnostic total:   " << static_cast<double>(budgets["pair"].total) / base
                << "x\n";
      return 0;
    }

    if (cmd_experiment->parsed()) {
      ExperimentSpec spec = load_spec(true);
      spec.validate();
      const LoadedDataset data = load_dataset_dir(spec.data);
      save_vocab(data, out_dir);
      const ExperimentResult result = run_experiment(spec, out_dir, workers, &std::cout);
      std::cout << "cells trained: " << result.cells_trained
                << ", resumed: " << result.cells_resumed << "\n";
      for (const std::string& path : result.report.tsv_paths) std::cout << "report: " << path << "\n";
      for (const std::string& path : result.report.svg_paths) std::cout << "chart:  " << path << "\n";
      return 0;
    }
  } catch (const Error& e) {
    return fail(e.what());
  } catch (const std::exception& e) {
    return fail(e.what());
  }

  (void)opt_config;
  return fail("no subcommand handled; this is a bug");
}
