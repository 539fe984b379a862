#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "famadapt/cluster.hpp"
#include "famadapt/evalgen.hpp"
#include "famadapt/langreg.hpp"
#include "famadapt/model.hpp"
#include "famadapt/toydata.hpp"
#include "famadapt/trainer.hpp"

namespace famadapt {

// Training regimes the experiment runner understands. The first four map
// straight onto grouping kinds, "gmm" derives a custom grouping from encoder
// embeddings before training, and "full_ft" unfreezes the backbone and
// trains it as a single group.
const std::vector<std::string>& known_regimes();
bool is_known_regime(const std::string& name);

// Everything one experiment needs, read from a key=value text file. Scalar
// keys may appear once; list keys (regime, seed, sweep_bottleneck,
// sweep_dropout) repeat, one value per line. '#' starts a comment. Any key
// can be overridden via an environment variable FAMADAPT_<KEY IN UPPERCASE>;
// for list keys the variable holds comma-separated values and replaces the
// file's list entirely.
struct ExperimentSpec {
  std::string data;      // dataset directory, required
  std::string registry;  // optional override; empty means <data>/registry.txt

  // model
  Index model_dim = 32;
  Index ff_dim = 64;
  Index heads = 2;
  Index enc_layers = 2;
  Index dec_layers = 2;
  Index max_len = 40;
  bool embedding_adapters = true;

  // adapters
  Index bottleneck = 16;
  double adapter_init_scale = 0.01;

  // training (seed and dropout act as grid defaults; each cell overrides them)
  TrainConfig train;
  Index denoise_updates = 0;  // backbone warm-up before any regime, 0 = off

  // clustering (gmm regime)
  Index pca_dim = 2;
  Index components = 0;       // 0 = one component per registry family
  Index embed_sentences = 25; // per-language cap when embedding for gmm

  // evaluation
  Index eval_beam = 5;
  double length_penalty = 1.0;
  std::string eval_split = "test";

  // grid
  std::vector<std::string> regimes;
  std::vector<Index> sweep_bottleneck;   // empty = just `bottleneck`
  std::vector<double> sweep_dropout;     // empty = just train.dropout
  std::vector<std::uint64_t> seeds;      // empty = just train.seed

  ModelConfig model_config(Index vocab_size) const;

  // Parse only; load() also applies environment overrides. Neither
  // validates, so a front end can still fold in command-line flags.
  static ExperimentSpec parse(std::istream& in, const std::string& origin);
  static ExperimentSpec load(const std::string& path);
  void apply_env_overrides();

  // Throws ConfigError listing every violation at once.
  void validate() const;
};

// One grid point. The label doubles as the cell's directory name and its
// report column; sweep dimensions with a single value stay out of it, so a
// plain two-regime run reports as "family" vs "pair" rather than
// "family-b16-d0.1-s1".
struct ExperimentCell {
  std::string regime;
  Index bottleneck = 0;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  std::string label;
};

std::vector<ExperimentCell> experiment_grid(const ExperimentSpec& spec);

// The registry the experiment runs against: the dataset's own unless the
// spec overrides it, in which case every corpus must still be covered.
LanguageRegistry experiment_registry(const ExperimentSpec& spec, const LoadedDataset& data);

// Embeds every language through the given backbone (own tag, own
// target-side text, capped at spec.embed_sentences rows) and clusters the
// embeddings. The report's scheme is what the gmm regime trains.
ClusterReport cluster_with_model(const ExperimentSpec& spec, const LoadedDataset& data,
                                 const LanguageRegistry& registry, Seq2SeqModel& model,
                                 std::uint64_t seed);

struct CellOutcome {
  GroupingScheme scheme;
  std::map<std::string, GroupResult> groups;       // empty when resumed
  std::map<std::string, std::string> checkpoints;  // group id -> file path
  bool resumed = false;
};

// Trains one cell end to end: optional denoising warm-up of the fresh
// backbone, grouping construction (running the clustering pipeline for the
// gmm regime), train_regime, then one checkpoint per group plus a
// grouping.txt and a cell.done marker under cell_dir. When a complete
// marker from an earlier run is found and every recorded checkpoint still
// matches its fingerprint, training is skipped and the outcome is
// reconstructed from disk.
CellOutcome run_cell(const ExperimentSpec& spec, const LoadedDataset& data,
                     const LanguageRegistry& registry, const ExperimentCell& cell,
                     const std::string& cell_dir, std::ostream* log = nullptr);

// A checkpoint rebuilt into a runnable model. Checkpoints carry every
// backbone and adapter tensor plus a fingerprint describing the
// architecture, so nothing else is needed to translate.
struct RestoredModel {
  ModelConfig config;
  std::unique_ptr<Seq2SeqModel> model;
  std::unique_ptr<AdapterSet> adapters;  // null for full fine-tune checkpoints
  std::string group_id;
  bool full_finetune = false;
  std::string fingerprint;
};

RestoredModel restore_checkpoint(const std::string& path);

// Decodes one source line per input line; beam == 1 takes the greedy path.
std::vector<std::string> translate_lines(RestoredModel& restored, const Vocab& vocab,
                                         const std::vector<std::string>& lines,
                                         const std::string& tgt_lang, Index beam,
                                         double length_penalty);

// BLEU per target language on spec.eval_split, decoding each language with
// its own group's checkpoint.
std::map<std::string, double> evaluate_cell(const ExperimentSpec& spec, const LoadedDataset& data,
                                            const LanguageRegistry& registry,
                                            const CellOutcome& outcome);

struct ExperimentResult {
  RegimeResults bleu;                           // cell label -> language -> BLEU
  std::map<std::string, BudgetReport> budgets;  // cell label -> parameter budget
  ReportFiles report;
  Index cells_trained = 0;
  Index cells_resumed = 0;
};

// Runs the whole grid, scheduling cells across `workers` threads (each cell
// owns its model, so cells are independent), then emits the report bundle
// into <out_dir>/report. Rerunning with the same out_dir resumes: completed
// cells are recognized by their checkpoint fingerprints and only evaluated.
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir,
                                Index workers = 1, std::ostream* log = nullptr);

}  // namespace famadapt
