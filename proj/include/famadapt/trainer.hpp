#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "famadapt/data.hpp"
#include "famadapt/langreg.hpp"
#include "famadapt/model.hpp"
#include "famadapt/optim.hpp"
#include "famadapt/rng.hpp"

namespace famadapt {

struct TrainConfig {
  Index max_updates = 2000;
  Index warmup_updates = 200;
  double max_lr = 1e-4;
  double label_smoothing = 0.2;
  Index update_frequency = 2;   // micro-batches accumulated per update
  Index eval_interval_updates = 100;
  Index patience = 5;           // evals without improvement before stopping
  std::uint64_t seed = 1;
  double dropout = 0.1;         // applied to the model for the run's duration
  Index batch_tokens = 256;     // budget of one micro-batch
  double temperature = 1.5;     // pair sampling temperature

  // Throws ConfigError listing every violation at once.
  void validate() const;
};

// 0 at step 0, linear ramp to max_lr at warmup_updates, then inverse square
// root decay max_lr * sqrt(warmup / step).
double lr_at_step(const TrainConfig& cfg, Index step);

struct EarlyStopState {
  double best = std::numeric_limits<double>::infinity();
  Index evals_since_improvement = 0;
  bool stopped = false;
};

// Strict improvement resets the counter; ties and regressions both count
// against it. Sets `stopped` once more than `patience` consecutive
// evaluations fail to improve.
void early_stop_update(EarlyStopState& state, double metric, Index patience);

// exp of (total unsmoothed NLL / total non-pad target tokens), pooled over
// every example of every corpus. Eos is appended to each target before
// scoring. Throws DomainError when there is nothing to score.
double validate_perplexity(Seq2SeqModel& model, const std::vector<const BitextCorpus*>& corpora,
                           const Vocab& vocab);

// Complete training state at one update: every model parameter (backbone and
// attached adapters), optimizer moments, rng positions, update counter, and
// the early stopping record. The fingerprint identifies everything a resumed
// run must agree on; the update budget is deliberately excluded so a run can
// be extended.
struct Checkpoint {
  std::string fingerprint;
  std::int64_t update = 0;
  std::string sampler_rng;
  std::string dropout_rng;
  EarlyStopState early_stop;
  AdamState optim;
  std::map<std::string, Tensor> tensors;
};

void checkpoint_save(const Checkpoint& ckpt, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);

struct TrainRow {
  std::int64_t update = 0;
  double lr = 0.0;
  double loss = 0.0;  // per-token smoothed NLL over the accumulated batch
  std::optional<double> perplexity;  // present on evaluation updates
};

// Drives one adapter set (or the full model) over one group's language pairs.
// Gradients of `update_frequency` micro-batches are accumulated as token sums
// and normalized by the total token count, so changing the micro-batch split
// of a fixed batch does not change the update. Evaluation runs every
// eval_interval_updates and at the final update; the best-perplexity
// checkpoint is retained.
class GroupTrainer {
 public:
  // `set` may be null for backbone-only training. The constructor attaches
  // the set, freezes or unfreezes the backbone per `full_finetune`, and sets
  // the model's dropout from the config; the destructor detaches the set.
  GroupTrainer(Seq2SeqModel& model, AdapterSet* set, std::string group_id,
               std::vector<const BitextCorpus*> train_corpora,
               std::vector<const BitextCorpus*> valid_corpora, const Vocab& vocab,
               TrainConfig cfg, bool full_finetune = false);
  ~GroupTrainer();

  GroupTrainer(const GroupTrainer&) = delete;
  GroupTrainer& operator=(const GroupTrainer&) = delete;

  bool done() const;
  TrainRow step();                     // one optimizer update
  void run(std::ostream* log = nullptr);  // until early stop or max_updates

  // Current state, suitable for exact resume.
  Checkpoint snapshot() const;
  // Restores a snapshot; throws ConfigError when the fingerprint disagrees.
  void restore(const Checkpoint& ckpt);

  // Best-perplexity state seen so far; ContractError before any evaluation.
  const Checkpoint& best() const;

  std::int64_t update() const { return update_; }
  const EarlyStopState& early_stop() const { return early_stop_; }
  std::optional<double> last_perplexity() const { return last_ppl_; }
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  double run_micro_batch(const Batch& batch, Index* token_count);
  std::optional<double> maybe_eval();
  std::map<std::string, Parameter*> named_parameters() const;

  Seq2SeqModel& model_;
  AdapterSet* set_;
  std::string group_id_;
  std::vector<const BitextCorpus*> train_;
  std::vector<const BitextCorpus*> valid_;
  const Vocab& vocab_;
  TrainConfig cfg_;
  bool full_finetune_;
  std::string fingerprint_;
  std::vector<Parameter*> trainable_;
  BatchSampler sampler_;
  Rng dropout_rng_;
  AdamState optim_;
  EarlyStopState early_stop_;
  std::int64_t update_ = 0;
  std::optional<double> last_ppl_;
  std::optional<Checkpoint> best_;
};

struct RegimeConfig {
  TrainConfig train;
  Index bottleneck = 64;
  double adapter_init_scale = 0.01;
  bool full_finetune = false;  // requires a single-group scheme
};

struct GroupResult {
  Checkpoint best;
  std::int64_t final_update = 0;
  double best_perplexity = std::numeric_limits<double>::infinity();
  double final_perplexity = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

// Trains one fresh adapter set per group of the scheme, each on its own
// group's pairs only, sequentially on the shared frozen backbone. Corpora are
// assigned to groups by their registry-side language; a corpus whose language
// is in no group, or a group that ends up with no training pairs, is a
// CoverageError. When `log_dir` is nonempty a TSV log per group is written
// there as train_<group>.tsv.
std::map<std::string, GroupResult> train_regime(Seq2SeqModel& model,
                                                const GroupingScheme& grouping,
                                                const std::vector<const BitextCorpus*>& train_corpora,
                                                const std::vector<const BitextCorpus*>& valid_corpora,
                                                const Vocab& vocab, const RegimeConfig& cfg,
                                                const std::string& log_dir = "");

// Token drops plus an occasional adjacent swap; always keeps at least one
// token. Used to manufacture denoising inputs.
std::vector<TokenId> corrupt_tokens(const std::vector<TokenId>& ids, Rng& rng);

// Self-supervised warm-up: the full backbone learns to reconstruct each
// target sentence from a corrupted copy, giving the later-frozen weights
// nontrivial structure. No evaluation or early stopping; runs exactly
// cfg.max_updates updates and returns the final per-token loss.
double denoising_warmup(Seq2SeqModel& model, const std::vector<const BitextCorpus*>& corpora,
                        const Vocab& vocab, const TrainConfig& cfg, std::ostream* log = nullptr);

}  // namespace famadapt
