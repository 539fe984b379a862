#include "famadapt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "famadapt/error.hpp"
#include "famadapt/langreg.hpp"
#include "famadapt/ops.hpp"
#include "famadapt/serialize.hpp"

namespace famadapt {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

TrainConfig validated(TrainConfig cfg) {
  cfg.validate();
  return cfg;
}

// The per-group stream is derived from (seed, group id) only, so group order
// and worker assignment cannot change what any one group sees.
Rng group_stream(const TrainConfig& cfg, const std::string& group_id, const char* purpose) {
  return Rng(cfg.seed).fork("group/" + group_id).fork(purpose);
}

BatchSampler make_group_sampler(const std::vector<const BitextCorpus*>& train,
                                const TrainConfig& cfg, const std::string& group_id) {
  if (train.empty()) {
    throw CoverageError("group '" + group_id + "' has no training pairs");
  }
  return BatchSampler(train, make_schedule(train, cfg.temperature), cfg.batch_tokens,
                      group_stream(cfg, group_id, "sampler"));
}

std::string make_fingerprint(const ModelConfig& m, const AdapterSet* set,
                             const std::string& group_id,
                             const std::vector<const BitextCorpus*>& train,
                             const std::vector<const BitextCorpus*>& valid,
                             const TrainConfig& cfg, bool full_finetune) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "famadapt-train-1|model:" << m.vocab_size << '/' << m.model_dim << '/' << m.ff_dim
      << '/' << m.heads << '/' << m.enc_layers << '/' << m.dec_layers << '/' << m.max_len << '/'
      << static_cast<int>(m.adapter_placement) << '/' << m.use_embedding_adapters;
  out << "|group:" << group_id << "|set:";
  if (set && !set->layers.empty()) {
    out << set->set_id << '/' << set->layers.begin()->second.config.bottleneck;
  } else {
    out << '-';
  }
  // max_updates is deliberately left out so a run can be resumed with a
  // larger budget.
  out << "|full:" << full_finetune << "|cfg:" << cfg.warmup_updates << '/' << cfg.max_lr << '/'
      << cfg.label_smoothing << '/' << cfg.update_frequency << '/' << cfg.eval_interval_updates
      << '/' << cfg.patience << '/' << cfg.seed << '/' << cfg.dropout << '/' << cfg.batch_tokens
      << '/' << cfg.temperature;
  out << "|data:";
  for (const BitextCorpus* c : train) out << c->pair() << '=' << c->examples.size() << ';';
  out << '~';
  for (const BitextCorpus* c : valid) out << c->pair() << '=' << c->examples.size() << ';';
  return out.str();
}

// Forward/backward of one micro-batch under a fresh tape. The batch loss is
// the token sum of per-example mean NLLs, so accumulated gradients across
// micro-batches normalize cleanly by the total token count. Returns the
// summed loss and adds this batch's target tokens to *tokens.
double accumulate_micro_batch(Seq2SeqModel& model, const BatchSampler& sampler,
                              const Batch& batch, const Vocab& vocab, double label_smoothing,
                              Rng* dropout_rng, Index* tokens) {
  Graph graph;
  Tensor total;
  for (const BatchItem& item : batch.items) {
    const BitextCorpus& corpus = sampler.corpus(item.corpus_index);
    const Example& ex = corpus.examples[item.example_index];
    const TokenId tag = vocab.lang_tag(corpus.tgt_lang);
    Tensor enc = model.encode(ex.src, tag, true, dropout_rng);
    std::vector<TokenId> tgt = ex.tgt;
    tgt.push_back(vocab.eos_id());
    Tensor logits = model.decode_teacher_forced(enc, tgt, tag, true, dropout_rng);
    Tensor nll = label_smoothed_nll(logits, tgt, label_smoothing, vocab.pad_id());
    Tensor term = scale(nll, static_cast<double>(tgt.size()));
    total = total.defined() ? add(total, term) : term;
    *tokens += static_cast<Index>(tgt.size());
  }
  graph.backward(total);
  return total.item();
}

void write_row(std::ostream& log, const TrainRow& row) {
  log << row.update << '\t' << std::setprecision(10) << row.lr << '\t' << row.loss << '\t';
  if (row.perplexity) {
    log << *row.perplexity;
  } else {
    log << '-';
  }
  log << '\n';
}

const std::string* find_group(const GroupingScheme& scheme, const std::string& code) {
  for (const auto& [group_id, members] : scheme.groups) {
    if (std::binary_search(members.begin(), members.end(), code)) return &group_id;
  }
  return nullptr;
}

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (max_updates < 1) problems.push_back("max_updates must be >= 1");
  if (warmup_updates < 1) problems.push_back("warmup_updates must be >= 1");
  if (warmup_updates > max_updates) problems.push_back("warmup_updates must not exceed max_updates");
  if (!(max_lr > 0.0)) problems.push_back("max_lr must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    problems.push_back("label_smoothing must be in [0, 1)");
  }
  if (update_frequency < 1) problems.push_back("update_frequency must be >= 1");
  if (eval_interval_updates < 1) problems.push_back("eval_interval_updates must be >= 1");
  if (patience < 1) problems.push_back("patience must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) problems.push_back("dropout must be in [0, 1)");
  if (batch_tokens < 1) problems.push_back("batch_tokens must be >= 1");
  if (!(temperature > 0.0)) problems.push_back("temperature must be positive");
  if (!problems.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

double lr_at_step(const TrainConfig& cfg, Index step) {
  if (step <= 0) return 0.0;
  if (step <= cfg.warmup_updates) {
    return cfg.max_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_updates);
  }
  return cfg.max_lr * std::sqrt(static_cast<double>(cfg.warmup_updates) / static_cast<double>(step));
}

void early_stop_update(EarlyStopState& state, double metric, Index patience) {
  if (metric < state.best) {
    state.best = metric;
    state.evals_since_improvement = 0;
  } else {
    ++state.evals_since_improvement;
  }
  state.stopped = state.evals_since_improvement > patience;
}

double validate_perplexity(Seq2SeqModel& model, const std::vector<const BitextCorpus*>& corpora,
                           const Vocab& vocab) {
  double total_nll = 0.0;
  Index total_tokens = 0;
  for (const BitextCorpus* corpus : corpora) {
    const TokenId tag = vocab.lang_tag(corpus->tgt_lang);
    for (const Example& ex : corpus->examples) {
      Tensor enc = model.encode(ex.src, tag, false);
      std::vector<TokenId> tgt = ex.tgt;
      tgt.push_back(vocab.eos_id());
      Tensor logits = model.decode_teacher_forced(enc, tgt, tag, false);
      Tensor nll = label_smoothed_nll(logits, tgt, 0.0, vocab.pad_id());
      total_nll += nll.item() * static_cast<double>(tgt.size());
      total_tokens += static_cast<Index>(tgt.size());
    }
  }
  if (total_tokens == 0) throw DomainError("perplexity over an empty validation set");
  return std::exp(total_nll / static_cast<double>(total_tokens));
}

void checkpoint_save(const Checkpoint& ckpt, const std::string& path) {
  BinaryWriter w;
  w.u8('F');
  w.u8('A');
  w.u8('D');
  w.u8('P');
  w.u32(kCheckpointVersion);
  w.str(ckpt.fingerprint);
  w.i64(ckpt.update);
  w.str(ckpt.sampler_rng);
  w.str(ckpt.dropout_rng);
  w.f64(ckpt.early_stop.best);
  w.i64(ckpt.early_stop.evals_since_improvement);
  w.u8(ckpt.early_stop.stopped ? 1 : 0);
  w.i64(ckpt.optim.step);
  w.u64(ckpt.optim.slots.size());
  for (const auto& [name, slot] : ckpt.optim.slots) {
    w.str(name);
    w.doubles(slot.m);
    w.doubles(slot.v);
  }
  w.u64(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) w.i64(t.dim(i));
    w.doubles(t.values());
  }
  w.finish(path);
}

Checkpoint checkpoint_load(const std::string& path) {
  BinaryReader r(path);
  if (r.u8() != 'F' || r.u8() != 'A' || r.u8() != 'D' || r.u8() != 'P') {
    throw ParseError(path + ": not a checkpoint file");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.fingerprint = r.str();
  c.update = r.i64();
  c.sampler_rng = r.str();
  c.dropout_rng = r.str();
  c.early_stop.best = r.f64();
  c.early_stop.evals_since_improvement = r.i64();
  c.early_stop.stopped = r.u8() != 0;
  c.optim.step = r.i64();
  const std::uint64_t num_slots = r.u64();
  for (std::uint64_t i = 0; i < num_slots; ++i) {
    std::string name = r.str();
    AdamState::Slot slot;
    slot.m = r.doubles();
    slot.v = r.doubles();
    c.optim.slots.emplace(std::move(name), std::move(slot));
  }
  const std::uint64_t num_tensors = r.u64();
  for (std::uint64_t i = 0; i < num_tensors; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.i64();
    std::vector<double> values = r.doubles();
    if (shape_numel(shape) != static_cast<Index>(values.size())) {
      throw ParseError(path + ": tensor '" + name + "' shape disagrees with its payload");
    }
    c.tensors.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw ParseError(path + ": trailing bytes after checkpoint payload");
  return c;
}

GroupTrainer::GroupTrainer(Seq2SeqModel& model, AdapterSet* set, std::string group_id,
                           std::vector<const BitextCorpus*> train_corpora,
                           std::vector<const BitextCorpus*> valid_corpora, const Vocab& vocab,
                           TrainConfig cfg, bool full_finetune)
    : model_(model),
      set_(set),
      group_id_(std::move(group_id)),
      train_(std::move(train_corpora)),
      valid_(std::move(valid_corpora)),
      vocab_(vocab),
      cfg_(validated(std::move(cfg))),
      full_finetune_(full_finetune),
      sampler_(make_group_sampler(train_, cfg_, group_id_)),
      dropout_rng_(group_stream(cfg_, group_id_, "dropout")) {
  if (!set_ && !full_finetune_) {
    throw ConfigError("group '" + group_id_ +
                      "': neither an adapter set nor full fine-tuning was requested");
  }
  model_.set_dropout(cfg_.dropout);
  model_.attach_adapter_set(set_);
  if (full_finetune_) {
    model_.unfreeze_backbone();
  } else {
    model_.freeze_backbone();
  }
  if (full_finetune_) trainable_ = model_.backbone_parameters();
  if (set_) {
    auto adapter_params = set_->parameters();
    trainable_.insert(trainable_.end(), adapter_params.begin(), adapter_params.end());
  }
  fingerprint_ =
      make_fingerprint(model_.config(), set_, group_id_, train_, valid_, cfg_, full_finetune_);
}

GroupTrainer::~GroupTrainer() {
  if (set_ && model_.active_adapters() == set_) model_.attach_adapter_set(nullptr);
}

bool GroupTrainer::done() const {
  return early_stop_.stopped || update_ >= cfg_.max_updates;
}

TrainRow GroupTrainer::step() {
  if (done()) throw ContractError("group '" + group_id_ + "': step() after training finished");
  zero_gradients(trainable_);
  double loss_sum = 0.0;
  Index tokens = 0;
  for (Index micro = 0; micro < cfg_.update_frequency; ++micro) {
    loss_sum += accumulate_micro_batch(model_, sampler_, sampler_.next(), vocab_,
                                       cfg_.label_smoothing, &dropout_rng_, &tokens);
  }
  scale_gradients(trainable_, 1.0 / static_cast<double>(tokens));
  ++update_;
  const double lr = lr_at_step(cfg_, update_);
  adam_step(trainable_, optim_, AdamConfig{}, lr);

  TrainRow row;
  row.update = update_;
  row.lr = lr;
  row.loss = loss_sum / static_cast<double>(tokens);
  row.perplexity = maybe_eval();
  return row;
}

std::optional<double> GroupTrainer::maybe_eval() {
  const bool due = update_ % cfg_.eval_interval_updates == 0 || update_ == cfg_.max_updates;
  if (!due) return std::nullopt;
  const double ppl = validate_perplexity(model_, valid_, vocab_);
  last_ppl_ = ppl;
  const double previous_best = early_stop_.best;
  early_stop_update(early_stop_, ppl, cfg_.patience);
  if (ppl < previous_best) best_ = snapshot();
  return ppl;
}

void GroupTrainer::run(std::ostream* log) {
  if (log) *log << "update\tlr\tloss\tperplexity\n";
  while (!done()) {
    TrainRow row = step();
    if (log) write_row(*log, row);
  }
}

std::map<std::string, Parameter*> GroupTrainer::named_parameters() const {
  std::map<std::string, Parameter*> params;
  for (Parameter* p : model_.backbone_parameters()) params.emplace(p->name, p);
  if (set_) {
    for (Parameter* p : set_->parameters()) params.emplace(p->name, p);
  }
  return params;
}

Checkpoint GroupTrainer::snapshot() const {
  Checkpoint c;
  c.fingerprint = fingerprint_;
  c.update = update_;
  c.sampler_rng = sampler_.rng().save_state();
  c.dropout_rng = dropout_rng_.save_state();
  c.early_stop = early_stop_;
  c.optim = optim_;
  for (const auto& [name, p] : named_parameters()) {
    c.tensors.emplace(name, p->tensor.clone());
  }
  return c;
}

void GroupTrainer::restore(const Checkpoint& ckpt) {
  if (ckpt.fingerprint != fingerprint_) {
    throw ConfigError("checkpoint fingerprint mismatch\n  trainer: " + fingerprint_ +
                      "\n  file:    " + ckpt.fingerprint);
  }
  auto params = named_parameters();
  if (params.size() != ckpt.tensors.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors, trainer expects " + std::to_string(params.size()));
  }
  for (auto& [name, p] : params) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
    if (it->second.numel() != p->tensor.numel()) {
      throw ConfigError("checkpoint tensor '" + name + "' has wrong size");
    }
    p->tensor.values() = it->second.values();
    p->tensor.zero_grad();
  }
  optim_ = ckpt.optim;
  sampler_.rng().load_state(ckpt.sampler_rng);
  dropout_rng_.load_state(ckpt.dropout_rng);
  early_stop_ = ckpt.early_stop;
  update_ = ckpt.update;
  last_ppl_.reset();
  // The restored network is the best candidate available from here on; a
  // later strict improvement replaces it.
  best_ = ckpt;
}

const Checkpoint& GroupTrainer::best() const {
  if (!best_) {
    throw ContractError("group '" + group_id_ + "': no evaluation has run, so no best checkpoint");
  }
  return *best_;
}

std::map<std::string, GroupResult> train_regime(Seq2SeqModel& model,
                                                const GroupingScheme& grouping,
                                                const std::vector<const BitextCorpus*>& train_corpora,
                                                const std::vector<const BitextCorpus*>& valid_corpora,
                                                const Vocab& vocab, const RegimeConfig& cfg,
                                                const std::string& log_dir) {
  cfg.train.validate();
  if (cfg.full_finetune && grouping.num_groups() != 1) {
    throw ConfigError("full fine-tuning shares one backbone, so the scheme must have exactly "
                      "one group; got " +
                      std::to_string(grouping.num_groups()));
  }

  // A corpus belongs to the group of whichever side the scheme knows about;
  // pairs are registry-language-centric so the target side is checked first.
  std::map<std::string, std::vector<const BitextCorpus*>> train_by_group;
  std::map<std::string, std::vector<const BitextCorpus*>> valid_by_group;
  auto assign = [&grouping](const std::vector<const BitextCorpus*>& corpora,
                            std::map<std::string, std::vector<const BitextCorpus*>>& by_group) {
    for (const BitextCorpus* c : corpora) {
      const std::string* group = find_group(grouping, c->tgt_lang);
      if (!group) group = find_group(grouping, c->src_lang);
      if (!group) {
        throw CoverageError("corpus " + c->pair() + " (" + c->split +
                            ") matches no group of the scheme");
      }
      by_group[*group].push_back(c);
    }
  };
  assign(train_corpora, train_by_group);
  assign(valid_corpora, valid_by_group);
  for (const auto& [group_id, members] : grouping.groups) {
    if (train_by_group.find(group_id) == train_by_group.end()) {
      throw CoverageError("group '" + group_id + "' has no training pairs");
    }
  }

  if (!log_dir.empty()) std::filesystem::create_directories(log_dir);

  std::map<std::string, GroupResult> results;
  const Rng master(cfg.train.seed);
  for (const auto& [group_id, members] : grouping.groups) {
    std::optional<AdapterSet> set;
    if (!cfg.full_finetune) {
      Rng init_rng = master.fork("adapter-init/" + group_id);
      set = make_adapter_set(model, cfg.bottleneck, cfg.adapter_init_scale, group_id, init_rng);
    }
    GroupTrainer trainer(model, set ? &*set : nullptr, group_id, train_by_group[group_id],
                         valid_by_group[group_id], vocab, cfg.train, cfg.full_finetune);
    std::ofstream log_file;
    std::ostream* log = nullptr;
    if (!log_dir.empty()) {
      const std::string path = log_dir + "/train_" + group_id + ".tsv";
      log_file.open(path, std::ios::trunc);
      if (!log_file) throw IoError("cannot open training log: " + path);
      log = &log_file;
    }
    trainer.run(log);

    GroupResult result;
    result.best = trainer.best();
    result.final_update = trainer.update();
    result.best_perplexity = trainer.early_stop().best;
    result.final_perplexity = trainer.last_perplexity().value();
    result.early_stopped = trainer.early_stop().stopped;
    results.emplace(group_id, std::move(result));
  }
  return results;
}

std::vector<TokenId> corrupt_tokens(const std::vector<TokenId>& ids, Rng& rng) {
  std::vector<TokenId> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (rng.uniform() >= 0.15) out.push_back(id);
  }
  if (out.empty() && !ids.empty()) {
    out.push_back(ids[static_cast<std::size_t>(rng.randint(static_cast<std::int64_t>(ids.size())))]);
  }
  if (out.size() >= 2 && rng.uniform() < 0.5) {
    const auto i = static_cast<std::size_t>(rng.randint(static_cast<std::int64_t>(out.size()) - 1));
    std::swap(out[i], out[i + 1]);
  }
  return out;
}

double denoising_warmup(Seq2SeqModel& model, const std::vector<const BitextCorpus*>& corpora,
                        const Vocab& vocab, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (corpora.empty()) throw CoverageError("denoising warm-up needs at least one corpus");

  const Rng base = Rng(cfg.seed).fork("warmup");
  Rng corrupt_rng = base.fork("corrupt");
  std::vector<BitextCorpus> denoised;
  denoised.reserve(corpora.size());
  for (const BitextCorpus* c : corpora) {
    BitextCorpus d;
    d.src_lang = c->tgt_lang;
    d.tgt_lang = c->tgt_lang;
    d.split = "train";
    d.examples.reserve(c->examples.size());
    for (const Example& ex : c->examples) {
      d.examples.push_back({corrupt_tokens(ex.tgt, corrupt_rng), ex.tgt});
    }
    denoised.push_back(std::move(d));
  }
  std::vector<const BitextCorpus*> ptrs;
  ptrs.reserve(denoised.size());
  for (const BitextCorpus& d : denoised) ptrs.push_back(&d);

  model.attach_adapter_set(nullptr);
  model.unfreeze_backbone();
  model.set_dropout(cfg.dropout);
  std::vector<Parameter*> trainable = model.backbone_parameters();
  BatchSampler sampler(ptrs, make_schedule(ptrs, cfg.temperature), cfg.batch_tokens,
                       base.fork("sampler"));
  Rng dropout_rng = base.fork("dropout");
  AdamState optim;

  if (log) *log << "update\tlr\tloss\tperplexity\n";
  double last_loss = 0.0;
  for (Index update = 1; update <= cfg.max_updates; ++update) {
    zero_gradients(trainable);
    double loss_sum = 0.0;
    Index tokens = 0;
    for (Index micro = 0; micro < cfg.update_frequency; ++micro) {
      loss_sum += accumulate_micro_batch(model, sampler, sampler.next(), vocab,
                                         cfg.label_smoothing, &dropout_rng, &tokens);
    }
    scale_gradients(trainable, 1.0 / static_cast<double>(tokens));
    const double lr = lr_at_step(cfg, update);
    adam_step(trainable, optim, AdamConfig{}, lr);
    last_loss = loss_sum / static_cast<double>(tokens);
    if (log) write_row(*log, TrainRow{update, lr, last_loss, std::nullopt});
  }
  model.freeze_backbone();
  return last_loss;
}

}  // namespace famadapt
