#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "famadapt/data.hpp"
#include "famadapt/error.hpp"
#include "famadapt/langreg.hpp"
#include "famadapt/model.hpp"
#include "famadapt/serialize.hpp"
#include "famadapt/trainer.hpp"

using namespace famadapt;

namespace {

Vocab make_test_vocab() {
  std::string line;
  for (int i = 0; i < 20; ++i) {
    if (i) line += ' ';
    line += "w" + std::to_string(i);
  }
  return Vocab::build({line}, TokenizeMode::whitespace, {"aa", "bb"});
}

// Copy task: target equals source. Lengths are inclusive bounds.
BitextCorpus make_copy_corpus(const Vocab& vocab, const std::string& tgt_lang, std::size_t n,
                              Index len_lo, Index len_hi, std::uint64_t seed,
                              const char* split = "train") {
  std::vector<TokenId> pool;
  for (int i = 0; i < 20; ++i) pool.push_back(vocab.id_or_unk("w" + std::to_string(i)));
  Rng rng(seed);
  BitextCorpus c;
  c.src_lang = "xx";
  c.tgt_lang = tgt_lang;
  c.split = split;
  for (std::size_t i = 0; i < n; ++i) {
    const Index len = len_lo + rng.randint(len_hi - len_lo + 1);
    std::vector<TokenId> toks(static_cast<std::size_t>(len));
    for (auto& t : toks) t = pool[static_cast<std::size_t>(rng.randint(20))];
    c.examples.push_back({toks, toks});
  }
  return c;
}

ModelConfig small_config(Index vocab_size, double dropout = 0.0) {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.model_dim = 16;
  mc.ff_dim = 32;
  mc.heads = 2;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.max_len = 16;
  mc.dropout = dropout;
  return mc;
}

TrainConfig quick_cfg() {
  TrainConfig c;
  c.max_updates = 8;
  c.warmup_updates = 2;
  c.max_lr = 1e-3;
  c.label_smoothing = 0.1;
  c.update_frequency = 1;
  c.eval_interval_updates = 4;
  c.patience = 3;
  c.seed = 5;
  c.dropout = 0.0;
  c.batch_tokens = 16;
  c.temperature = 1.0;
  return c;
}

std::uint64_t hash_sorted(std::vector<Parameter*> params) {
  std::sort(params.begin(), params.end(),
            [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
  return parameters_hash(params);
}

std::uint64_t backbone_hash(Seq2SeqModel& model) { return hash_sorted(model.backbone_parameters()); }

std::uint64_t full_hash(Seq2SeqModel& model, AdapterSet& set) {
  auto params = model.backbone_parameters();
  auto extra = set.parameters();
  params.insert(params.end(), extra.begin(), extra.end());
  return hash_sorted(std::move(params));
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("famadapt_trainer_" + name);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("learning rate: linear warmup then inverse square root decay") {
  TrainConfig cfg;
  cfg.max_updates = 100000;
  cfg.warmup_updates = 4000;
  cfg.max_lr = 1e-4;

  CHECK(lr_at_step(cfg, 0) == 0.0);
  CHECK(lr_at_step(cfg, 2000) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(lr_at_step(cfg, 4000) == doctest::Approx(1e-4).epsilon(1e-12));
  // sqrt(4000/16000) = 1/2
  CHECK(lr_at_step(cfg, 16000) == doctest::Approx(5e-5).epsilon(1e-12));

  // Strictly rising through warmup, strictly falling after it.
  for (Index s = 1; s <= 4000; ++s) CHECK(lr_at_step(cfg, s) > lr_at_step(cfg, s - 1));
  for (Index s = 4001; s < 4200; ++s) CHECK(lr_at_step(cfg, s) < lr_at_step(cfg, s - 1));
}

TEST_CASE("train config validation reports every violation at once") {
  TrainConfig cfg;
  cfg.max_updates = 10;
  cfg.warmup_updates = 20;   // exceeds max_updates
  cfg.max_lr = 0.0;          // not positive
  cfg.label_smoothing = 1.0; // out of range
  cfg.patience = 0;          // too small
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("warmup_updates") != std::string::npos);
    CHECK(msg.find("max_lr") != std::string::npos);
    CHECK(msg.find("label_smoothing") != std::string::npos);
    CHECK(msg.find("patience") != std::string::npos);
  }
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("early stopping counts ties as failures and needs patience+1 of them") {
  EarlyStopState s;
  early_stop_update(s, 10.0, 5);
  CHECK(s.best == 10.0);
  CHECK(s.evals_since_improvement == 0);

  early_stop_update(s, 9.0, 5);
  CHECK(s.best == 9.0);

  // Five consecutive non-improvements (one of them a tie) keep training.
  for (int i = 0; i < 5; ++i) {
    early_stop_update(s, 9.0 + i, 5);
    CHECK_FALSE(s.stopped);
  }
  CHECK(s.evals_since_improvement == 5);

  // The sixth trips the stop.
  early_stop_update(s, 9.5, 5);
  CHECK(s.stopped);
  CHECK(s.best == 9.0);

  // A strict improvement anywhere resets the streak.
  EarlyStopState t;
  early_stop_update(t, 5.0, 2);
  early_stop_update(t, 5.0, 2);
  early_stop_update(t, 6.0, 2);
  CHECK(t.evals_since_improvement == 2);
  early_stop_update(t, 4.0, 2);
  CHECK(t.evals_since_improvement == 0);
  CHECK_FALSE(t.stopped);
  CHECK(t.best == 4.0);
}

TEST_CASE("uniform logits give perplexity exactly the vocabulary size") {
  const Vocab vocab = make_test_vocab();
  Rng mr(3);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  // Tied embeddings project decoder states back onto the vocabulary, so a
  // zero embedding table forces all-zero logits whatever the states are.
  for (Parameter* p : model.backbone_parameters()) {
    if (p->name == "emb") std::fill(p->tensor.values().begin(), p->tensor.values().end(), 0.0);
  }
  const BitextCorpus corpus = make_copy_corpus(vocab, "aa", 7, 2, 5, 11, "valid");
  const double ppl = validate_perplexity(model, {&corpus}, vocab);
  CHECK(ppl == doctest::Approx(static_cast<double>(vocab.size())).epsilon(1e-12));
}

TEST_CASE("validation perplexity pools token counts across corpora") {
  const Vocab vocab = make_test_vocab();
  Rng mr(4);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  const BitextCorpus a = make_copy_corpus(vocab, "aa", 5, 2, 6, 21, "valid");
  const BitextCorpus b = make_copy_corpus(vocab, "bb", 9, 3, 4, 22, "valid");

  auto token_count = [](const BitextCorpus& c) {
    Index t = 0;
    for (const auto& ex : c.examples) t += static_cast<Index>(ex.tgt.size()) + 1;  // + eos
    return t;
  };
  const double pa = validate_perplexity(model, {&a}, vocab);
  const double pb = validate_perplexity(model, {&b}, vocab);
  const double pooled = validate_perplexity(model, {&a, &b}, vocab);

  const double ta = static_cast<double>(token_count(a));
  const double tb = static_cast<double>(token_count(b));
  const double expected = std::exp((ta * std::log(pa) + tb * std::log(pb)) / (ta + tb));
  CHECK(pooled == doctest::Approx(expected).epsilon(1e-12));
  CHECK(pa != doctest::Approx(pb));  // distinct languages really differ

  CHECK_THROWS_AS(validate_perplexity(model, {}, vocab), DomainError);
  BitextCorpus empty;
  empty.tgt_lang = "aa";
  CHECK_THROWS_AS(validate_perplexity(model, {&empty}, vocab), DomainError);
}

TEST_CASE("checkpoint files round-trip every field and re-save byte-identically") {
  const std::string dir = temp_dir("ckpt");
  const std::string p1 = dir + "/a.ckpt";
  const std::string p2 = dir + "/b.ckpt";

  Checkpoint c;
  c.fingerprint = "fp|model:1/2/3";
  c.update = 42;
  c.sampler_rng = Rng(3).save_state();
  c.dropout_rng = Rng(4).save_state();
  c.early_stop.best = 17.5;
  c.early_stop.evals_since_improvement = 2;
  c.early_stop.stopped = true;
  c.optim.step = 7;
  c.optim.slots["g/enc.0.down_w"] = {{0.1, -0.2}, {0.3, 0.4}};
  c.tensors.emplace("w", Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.5}));
  c.tensors.emplace("b", Tensor::from_data({3}, {-1.0, 0.0, 1e-300}));

  checkpoint_save(c, p1);
  const Checkpoint back = checkpoint_load(p1);
  CHECK(back.fingerprint == c.fingerprint);
  CHECK(back.update == 42);
  CHECK(back.sampler_rng == c.sampler_rng);
  CHECK(back.dropout_rng == c.dropout_rng);
  CHECK(back.early_stop.best == 17.5);
  CHECK(back.early_stop.evals_since_improvement == 2);
  CHECK(back.early_stop.stopped);
  CHECK(back.optim.step == 7);
  REQUIRE(back.optim.slots.count("g/enc.0.down_w") == 1);
  CHECK(back.optim.slots.at("g/enc.0.down_w").m == std::vector<double>{0.1, -0.2});
  CHECK(back.optim.slots.at("g/enc.0.down_w").v == std::vector<double>{0.3, 0.4});
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors.at("w").shape() == Shape{2, 2});
  CHECK(back.tensors.at("w").values() == c.tensors.at("w").values());
  CHECK(back.tensors.at("b").values() == c.tensors.at("b").values());

  checkpoint_save(back, p2);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("corrupted, foreign, and future checkpoint files are rejected") {
  const std::string dir = temp_dir("ckpt_bad");

  Checkpoint c;
  c.fingerprint = "fp";
  c.tensors.emplace("w", Tensor::from_data({2}, {1.0, 2.0}));
  const std::string good = dir + "/good.ckpt";
  checkpoint_save(c, good);

  // Flip one payload byte: the container checksum must catch it.
  auto bytes = slurp(good);
  const std::string bad = dir + "/bad.ckpt";
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x01);
  std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(checkpoint_load(bad), IoError);

  // Valid container, wrong magic.
  const std::string foreign = dir + "/foreign.ckpt";
  {
    BinaryWriter w;
    w.u8('X');
    w.u8('A');
    w.u8('D');
    w.u8('P');
    w.u32(1);
    w.finish(foreign);
  }
  CHECK_THROWS_AS(checkpoint_load(foreign), ParseError);

  // Valid container, unsupported version.
  const std::string future = dir + "/future.ckpt";
  {
    BinaryWriter w;
    w.u8('F');
    w.u8('A');
    w.u8('D');
    w.u8('P');
    w.u32(999);
    w.finish(future);
  }
  CHECK_THROWS_AS(checkpoint_load(future), ParseError);
}

TEST_CASE("training is bit-deterministic and never moves the frozen backbone") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus train = make_copy_corpus(vocab, "aa", 20, 3, 6, 31);
  const BitextCorpus valid = make_copy_corpus(vocab, "aa", 5, 3, 6, 32, "valid");

  TrainConfig cfg = quick_cfg();
  cfg.max_updates = 80;
  cfg.eval_interval_updates = 20;
  cfg.max_lr = 1e-2;
  cfg.dropout = 0.1;
  cfg.update_frequency = 2;

  auto run_once = [&](std::vector<double>* losses) {
    Rng mr(11);
    Seq2SeqModel model(small_config(vocab.size(), 0.1), mr);
    const std::uint64_t frozen_before = backbone_hash(model);
    Rng ar(21);
    AdapterSet set = make_adapter_set(model, 4, 0.01, "g", ar);
    GroupTrainer trainer(model, &set, "g", {&train}, {&valid}, vocab, cfg);
    while (!trainer.done()) {
      TrainRow row = trainer.step();
      if (losses) losses->push_back(row.loss);
    }
    CHECK(backbone_hash(model) == frozen_before);
    return full_hash(model, set);
  };

  std::vector<double> losses1, losses2;
  const std::uint64_t h1 = run_once(&losses1);
  const std::uint64_t h2 = run_once(&losses2);
  CHECK(h1 == h2);
  CHECK(losses1 == losses2);  // exact, not approximate
  REQUIRE(losses1.size() == 80);
  // The adapters actually learn: averaged windows beat batch-to-batch noise.
  const double head = std::accumulate(losses1.begin(), losses1.begin() + 10, 0.0) / 10.0;
  const double tail = std::accumulate(losses1.end() - 10, losses1.end(), 0.0) / 10.0;
  CHECK(tail < head);
}

TEST_CASE("splitting a batch into micro-batches does not change the update") {
  const Vocab vocab = make_test_vocab();
  // Fixed-length examples make the token budget cut at exactly the same
  // example boundary for both configurations.
  const BitextCorpus train = make_copy_corpus(vocab, "aa", 40, 4, 4, 41);
  const BitextCorpus valid = make_copy_corpus(vocab, "aa", 4, 4, 4, 42, "valid");

  auto one_update = [&](Index update_frequency, Index batch_tokens) {
    TrainConfig cfg = quick_cfg();
    cfg.max_updates = 1;
    cfg.warmup_updates = 1;
    cfg.eval_interval_updates = 1;
    cfg.update_frequency = update_frequency;
    cfg.batch_tokens = batch_tokens;
    cfg.dropout = 0.1;
    Rng mr(11);
    Seq2SeqModel model(small_config(vocab.size(), 0.1), mr);
    Rng ar(21);
    AdapterSet set = make_adapter_set(model, 4, 0.01, "g", ar);
    GroupTrainer trainer(model, &set, "g", {&train}, {&valid}, vocab, cfg);
    trainer.step();
    std::map<std::string, std::vector<double>> values;
    for (Parameter* p : set.parameters()) values[p->name] = p->tensor.values();
    return values;
  };

  const auto split = one_update(2, 8);    // two micro-batches of two examples
  const auto whole = one_update(1, 16);   // one batch of four examples
  REQUIRE(split.size() == whole.size());
  for (const auto& [name, v] : split) {
    const auto& w = whole.at(name);
    REQUIRE(v.size() == w.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(std::abs(v[i] - w[i]) <= 1e-9);
    }
  }
}

TEST_CASE("evaluation cadence, log format, and best-vs-final ordering") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus train = make_copy_corpus(vocab, "aa", 16, 3, 5, 51);
  const BitextCorpus valid = make_copy_corpus(vocab, "aa", 5, 3, 5, 52, "valid");

  TrainConfig cfg = quick_cfg();
  cfg.max_updates = 12;
  cfg.eval_interval_updates = 3;
  cfg.patience = 10;

  Rng mr(12);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  Rng ar(22);
  AdapterSet set = make_adapter_set(model, 4, 0.01, "g", ar);
  GroupTrainer trainer(model, &set, "g", {&train}, {&valid}, vocab, cfg);

  std::ostringstream log;
  trainer.run(&log);

  std::vector<std::string> lines;
  std::istringstream in(log.str());
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 13);
  CHECK(lines[0] == "update\tlr\tloss\tperplexity");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::istringstream row(lines[i]);
    std::string update, lr, loss, ppl;
    std::getline(row, update, '\t');
    std::getline(row, lr, '\t');
    std::getline(row, loss, '\t');
    std::getline(row, ppl, '\t');
    CHECK(update == std::to_string(i));
    CHECK(std::stod(lr) > 0.0);
    CHECK(std::stod(loss) > 0.0);
    if (i % 3 == 0) {
      CHECK(std::stod(ppl) > 0.0);
    } else {
      CHECK(ppl == "-");
    }
  }

  REQUIRE(trainer.last_perplexity().has_value());
  CHECK(trainer.early_stop().best <= *trainer.last_perplexity());
  const Checkpoint& best = trainer.best();
  CHECK(best.update % 3 == 0);
  CHECK(best.update >= 3);
  CHECK(best.update <= 12);
  CHECK(best.early_stop.best == trainer.early_stop().best);
}

TEST_CASE("trainer contract violations throw") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus train = make_copy_corpus(vocab, "aa", 8, 3, 4, 61);
  const BitextCorpus valid = make_copy_corpus(vocab, "aa", 3, 3, 4, 62, "valid");

  TrainConfig cfg = quick_cfg();
  cfg.max_updates = 2;
  cfg.eval_interval_updates = 1;

  Rng mr(13);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  Rng ar(23);
  AdapterSet set = make_adapter_set(model, 4, 0.01, "g", ar);

  SUBCASE("best() before any evaluation") {
    GroupTrainer trainer(model, &set, "g", {&train}, {&valid}, vocab, cfg);
    CHECK_THROWS_AS(trainer.best(), ContractError);
  }

  SUBCASE("stepping past the end") {
    GroupTrainer trainer(model, &set, "g", {&train}, {&valid}, vocab, cfg);
    trainer.run(nullptr);
    CHECK(trainer.done());
    CHECK_THROWS_AS(trainer.step(), ContractError);
  }

  SUBCASE("neither adapters nor full fine-tuning") {
    CHECK_THROWS_AS(GroupTrainer(model, nullptr, "g", {&train}, {&valid}, vocab, cfg),
                    ConfigError);
  }

  SUBCASE("no training corpora for the group") {
    CHECK_THROWS_AS(GroupTrainer(model, &set, "g", {}, {&valid}, vocab, cfg), CoverageError);
  }

  SUBCASE("empty validation set fails at evaluation time") {
    GroupTrainer trainer(model, &set, "g", {&train}, {}, vocab, cfg);
    CHECK_THROWS_AS(trainer.step(), DomainError);
  }

  SUBCASE("restoring a checkpoint from a different configuration") {
    GroupTrainer trainer(model, &set, "g", {&train}, {&valid}, vocab, cfg);
    TrainConfig other = cfg;
    other.label_smoothing = 0.3;
    Rng mr2(13);
    Seq2SeqModel model2(small_config(vocab.size()), mr2);
    Rng ar2(23);
    AdapterSet set2 = make_adapter_set(model2, 4, 0.01, "g", ar2);
    GroupTrainer trainer2(model2, &set2, "g", {&train}, {&valid}, vocab, other);
    CHECK_THROWS_AS(trainer.restore(trainer2.snapshot()), ConfigError);
  }
}

TEST_CASE("training one group leaves other adapter sets untouched") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus train = make_copy_corpus(vocab, "aa", 12, 3, 5, 71);
  const BitextCorpus valid = make_copy_corpus(vocab, "aa", 4, 3, 5, 72, "valid");

  Rng mr(14);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  Rng ar1(24);
  AdapterSet set_a = make_adapter_set(model, 4, 0.01, "A", ar1);
  Rng ar2(25);
  AdapterSet set_b = make_adapter_set(model, 4, 0.01, "B", ar2);

  auto set_hash = [](AdapterSet& s) {
    auto params = s.parameters();
    return hash_sorted(std::move(params));
  };
  const std::uint64_t b_before = set_hash(set_b);
  const std::uint64_t backbone_before = backbone_hash(model);

  TrainConfig cfg = quick_cfg();
  cfg.max_updates = 6;
  cfg.eval_interval_updates = 3;
  {
    GroupTrainer trainer(model, &set_a, "A", {&train}, {&valid}, vocab, cfg);
    trainer.run(nullptr);
  }
  CHECK(set_hash(set_b) == b_before);
  CHECK(backbone_hash(model) == backbone_before);
  CHECK(model.active_adapters() == nullptr);  // trainer detached on destruction
}

TEST_CASE("resuming from a saved checkpoint reproduces the uninterrupted run exactly") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus train = make_copy_corpus(vocab, "aa", 24, 3, 5, 81);
  const BitextCorpus valid = make_copy_corpus(vocab, "aa", 6, 3, 5, 82, "valid");

  TrainConfig cfg = quick_cfg();
  cfg.max_updates = 10;
  cfg.eval_interval_updates = 5;
  cfg.update_frequency = 2;
  cfg.dropout = 0.1;
  cfg.batch_tokens = 12;
  cfg.seed = 9;

  struct Rig {
    Seq2SeqModel model;
    AdapterSet set;
  };
  auto build = [&]() {
    Rng mr(33);
    Seq2SeqModel model(small_config(vocab.size(), 0.1), mr);
    Rng ar(77);
    AdapterSet set = make_adapter_set(model, 4, 0.01, "g", ar);
    return Rig{std::move(model), std::move(set)};
  };

  const std::string dir = temp_dir("resume");
  const std::string mid_path = dir + "/mid.ckpt";
  const std::string full_path = dir + "/full.ckpt";
  const std::string resumed_path = dir + "/resumed.ckpt";

  // Reference: one uninterrupted run to update 10.
  std::uint64_t hash_full = 0;
  {
    Rig rig = build();
    GroupTrainer trainer(rig.model, &rig.set, "g", {&train}, {&valid}, vocab, cfg);
    trainer.run(nullptr);
    CHECK(trainer.update() == 10);
    hash_full = full_hash(rig.model, rig.set);
    checkpoint_save(trainer.snapshot(), full_path);
  }

  // Interrupted: stop at update 5 and persist the state.
  {
    Rig rig = build();
    GroupTrainer trainer(rig.model, &rig.set, "g", {&train}, {&valid}, vocab, cfg);
    while (trainer.update() < 5) trainer.step();
    checkpoint_save(trainer.snapshot(), mid_path);
  }

  // Resumed: a fresh process restores update 5 and finishes the budget.
  {
    Rig rig = build();
    GroupTrainer trainer(rig.model, &rig.set, "g", {&train}, {&valid}, vocab, cfg);
    trainer.restore(checkpoint_load(mid_path));
    CHECK(trainer.update() == 5);
    while (!trainer.done()) trainer.step();
    CHECK(trainer.update() == 10);
    CHECK(full_hash(rig.model, rig.set) == hash_full);
    checkpoint_save(trainer.snapshot(), resumed_path);
  }

  // Not just equal hashes: the serialized states are the same bytes.
  CHECK(slurp(full_path) == slurp(resumed_path));
}

TEST_CASE("train_regime drives every group and enforces coverage") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus train_a = make_copy_corpus(vocab, "aa", 14, 3, 5, 91);
  const BitextCorpus train_b = make_copy_corpus(vocab, "bb", 14, 3, 5, 92);
  const BitextCorpus valid_a = make_copy_corpus(vocab, "aa", 4, 3, 5, 93, "valid");
  const BitextCorpus valid_b = make_copy_corpus(vocab, "bb", 4, 3, 5, 94, "valid");

  GroupingScheme scheme;
  scheme.kind = GroupingKind::custom;
  scheme.groups = {{"g1", {"aa"}}, {"g2", {"bb"}}};

  RegimeConfig rc;
  rc.train = quick_cfg();
  rc.train.max_updates = 6;
  rc.train.eval_interval_updates = 3;
  rc.bottleneck = 4;

  Rng mr(15);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  const std::uint64_t backbone_before = backbone_hash(model);
  const std::string log_dir = temp_dir("regime_logs");

  const auto results = train_regime(model, scheme, {&train_a, &train_b}, {&valid_a, &valid_b},
                                    vocab, rc, log_dir);
  REQUIRE(results.size() == 2);
  REQUIRE(results.count("g1") == 1);
  REQUIRE(results.count("g2") == 1);
  CHECK(backbone_hash(model) == backbone_before);
  for (const auto& [group_id, r] : results) {
    CHECK(r.final_update == 6);
    CHECK(r.best_perplexity <= r.final_perplexity);
    CHECK(r.best.update >= 3);
    bool has_adapter_tensor = false;
    for (const auto& [name, t] : r.best.tensors) {
      if (name.rfind(group_id + "/", 0) == 0) has_adapter_tensor = true;
    }
    CHECK(has_adapter_tensor);
    CHECK(std::filesystem::exists(log_dir + "/train_" + group_id + ".tsv"));
  }
  // The two groups trained different adapters from the same frozen backbone.
  CHECK(results.at("g1").best.fingerprint != results.at("g2").best.fingerprint);

  SUBCASE("a corpus outside every group is a coverage error") {
    BitextCorpus stray = train_a;
    stray.tgt_lang = "cc";
    CHECK_THROWS_AS(
        train_regime(model, scheme, {&train_a, &train_b, &stray}, {&valid_a}, vocab, rc),
        CoverageError);
  }

  SUBCASE("a group with no training pairs is a coverage error") {
    CHECK_THROWS_AS(train_regime(model, scheme, {&train_a}, {&valid_a}, vocab, rc),
                    CoverageError);
  }

  SUBCASE("full fine-tuning needs a single group") {
    RegimeConfig full = rc;
    full.full_finetune = true;
    CHECK_THROWS_AS(
        train_regime(model, scheme, {&train_a, &train_b}, {&valid_a, &valid_b}, vocab, full),
        ConfigError);
  }
}

TEST_CASE("full fine-tuning regime trains the backbone itself") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus train_a = make_copy_corpus(vocab, "aa", 10, 3, 5, 95);
  const BitextCorpus valid_a = make_copy_corpus(vocab, "aa", 3, 3, 5, 96, "valid");

  GroupingScheme scheme;
  scheme.kind = GroupingKind::custom;
  scheme.groups = {{"all", {"aa", "bb"}}};

  RegimeConfig rc;
  rc.train = quick_cfg();
  rc.train.max_updates = 4;
  rc.train.eval_interval_updates = 2;
  rc.full_finetune = true;

  Rng mr(16);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  const std::uint64_t backbone_before = backbone_hash(model);
  const auto results = train_regime(model, scheme, {&train_a}, {&valid_a}, vocab, rc);
  REQUIRE(results.size() == 1);
  CHECK(backbone_hash(model) != backbone_before);
  CHECK(results.at("all").best.tensors.count("emb") == 1);
  for (const auto& [name, t] : results.at("all").best.tensors) {
    CHECK(name.find('/') == std::string::npos);  // no adapter tensors
  }
}

TEST_CASE("token corruption keeps a subset of the input in order") {
  Rng rng(5);
  Rng pool_rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + static_cast<std::size_t>(pool_rng.randint(8));
    std::vector<TokenId> ids(len);
    for (auto& t : ids) t = static_cast<TokenId>(4 + pool_rng.randint(30));

    std::vector<TokenId> out = corrupt_tokens(ids, rng);
    REQUIRE_FALSE(out.empty());
    CHECK(out.size() <= ids.size());

    std::map<TokenId, int> have;
    for (TokenId t : ids) ++have[t];
    for (TokenId t : out) {
      REQUIRE(have.count(t) == 1);
      CHECK(--have[t] >= 0);
    }
  }

  // Same engine state, same corruption.
  std::vector<TokenId> ids = {10, 11, 12, 13, 14, 15};
  Rng r1(99), r2(99);
  CHECK(corrupt_tokens(ids, r1) == corrupt_tokens(ids, r2));
}

TEST_CASE("denoising warm-up reduces the loss and leaves the backbone frozen") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus corpus = make_copy_corpus(vocab, "aa", 30, 3, 6, 101);

  TrainConfig cfg = quick_cfg();
  cfg.max_updates = 40;
  cfg.warmup_updates = 5;
  cfg.max_lr = 3e-3;
  cfg.label_smoothing = 0.0;
  cfg.update_frequency = 1;
  cfg.batch_tokens = 24;

  Rng mr(17);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  std::ostringstream log;
  const double final_loss = denoising_warmup(model, {&corpus}, vocab, cfg, &log);
  CHECK(model.backbone_frozen());

  std::istringstream in(log.str());
  std::string header, first_row, row, last_row;
  std::getline(in, header);
  std::getline(in, first_row);
  last_row = first_row;
  std::size_t rows = 1;
  while (std::getline(in, row)) {
    last_row = row;
    ++rows;
  }
  CHECK(rows == 40);
  auto loss_of = [](const std::string& line) {
    std::istringstream cols(line);
    std::string update, lr, loss;
    std::getline(cols, update, '\t');
    std::getline(cols, lr, '\t');
    std::getline(cols, loss, '\t');
    return std::stod(loss);
  };
  CHECK(final_loss == doctest::Approx(loss_of(last_row)).epsilon(1e-6));
  CHECK(final_loss < 0.9 * loss_of(first_row));
}

TEST_CASE("full fine-tuning memorizes a 50-sentence copy task within 200 updates") {
  const Vocab vocab = make_test_vocab();
  const BitextCorpus train = make_copy_corpus(vocab, "aa", 50, 3, 6, 111);
  const BitextCorpus valid = make_copy_corpus(vocab, "aa", 5, 3, 6, 112, "valid");

  TrainConfig cfg;
  cfg.max_updates = 200;
  cfg.warmup_updates = 10;
  cfg.max_lr = 2e-2;
  cfg.label_smoothing = 0.0;  // the smoothed loss has a positive floor
  cfg.update_frequency = 2;
  cfg.eval_interval_updates = 50;
  cfg.patience = 50;
  cfg.seed = 4;
  cfg.dropout = 0.0;
  cfg.batch_tokens = 48;
  cfg.temperature = 1.0;

  Rng mr(18);
  Seq2SeqModel model(small_config(vocab.size()), mr);
  GroupTrainer trainer(model, nullptr, "copy", {&train}, {&valid}, vocab, cfg,
                       /*full_finetune=*/true);
  double last_loss = 1e9;
  while (!trainer.done()) last_loss = trainer.step().loss;
  CHECK(trainer.update() == 200);
  CHECK(last_loss < 0.1);
}
