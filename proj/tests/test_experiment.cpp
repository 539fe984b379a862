#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "famadapt/evalgen.hpp"
#include "famadapt/experiment.hpp"

using namespace famadapt;
namespace fs = std::filesystem;

namespace {

const char* toy_dir() { return FAMADAPT_DATA_DIR "/toy"; }

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("famadapt_experiment_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << content;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Small but real: one encoder/decoder layer over the bundled toy corpus,
// a handful of updates, greedy evaluation. Fast enough to train the whole
// grid several times within one test binary.
ExperimentSpec base_spec() {
  ExperimentSpec spec;
  spec.data = toy_dir();
  spec.model_dim = 16;
  spec.ff_dim = 32;
  spec.heads = 2;
  spec.enc_layers = 1;
  spec.dec_layers = 1;
  spec.max_len = 24;
  spec.bottleneck = 4;
  spec.train.max_updates = 6;
  spec.train.warmup_updates = 2;
  spec.train.max_lr = 1e-3;
  spec.train.label_smoothing = 0.0;
  spec.train.update_frequency = 1;
  spec.train.eval_interval_updates = 3;
  spec.train.patience = 5;
  spec.train.dropout = 0.0;
  spec.train.batch_tokens = 64;
  spec.train.temperature = 1.5;
  spec.train.seed = 11;
  spec.eval_beam = 1;
  spec.eval_split = "test";
  spec.regimes = {"family"};
  return spec;
}

ExperimentCell single_cell(const ExperimentSpec& spec) {
  const std::vector<ExperimentCell> grid = experiment_grid(spec);
  REQUIRE(grid.size() == 1);
  return grid[0];
}

}  // namespace

TEST_CASE("spec files parse keys, lists, comments and report malformed lines") {
  std::istringstream in(
      "# experiment over two regimes\n"
      "data = /tmp/somewhere\n"
      "registry=/tmp/somewhere/registry.txt\n"
      "model_dim = 48   # inline comment\n"
      "heads = 4\n"
      "max_lr = 5e-4\n"
      "dropout = 0.3\n"
      "embedding_adapters = false\n"
      "eval_split = valid\n"
      "\n"
      "regime = family\n"
      "regime = agnostic\n"
      "seed = 3\n"
      "seed = 4\n"
      "sweep_bottleneck = 8\n"
      "sweep_bottleneck = 16\n"
      "sweep_dropout = 0.1\n");
  const ExperimentSpec spec = ExperimentSpec::parse(in, "exp.cfg");
  CHECK(spec.data == "/tmp/somewhere");
  CHECK(spec.registry == "/tmp/somewhere/registry.txt");
  CHECK(spec.model_dim == 48);
  CHECK(spec.heads == 4);
  CHECK(spec.train.max_lr == doctest::Approx(5e-4));
  CHECK(spec.train.dropout == doctest::Approx(0.3));
  CHECK(spec.embedding_adapters == false);
  CHECK(spec.eval_split == "valid");
  CHECK(spec.regimes == std::vector<std::string>{"family", "agnostic"});
  CHECK(spec.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(spec.sweep_bottleneck == std::vector<Index>{8, 16});
  CHECK(spec.sweep_dropout == std::vector<double>{0.1});
  // untouched keys keep their defaults
  CHECK(spec.ff_dim == 64);
  CHECK(spec.eval_beam == 5);

  auto parse_one = [](const std::string& body) {
    std::istringstream s(body);
    return ExperimentSpec::parse(s, "exp.cfg");
  };
  CHECK_THROWS_AS(parse_one("model_dim = 8\nmodel_dim = 9\n"), ParseError);
  CHECK_THROWS_AS(parse_one("swep_bottleneck = 8\n"), ParseError);
  CHECK_THROWS_AS(parse_one("just some words\n"), ParseError);
  CHECK_THROWS_AS(parse_one("model_dim = eight\n"), ParseError);
  CHECK_THROWS_AS(parse_one("embedding_adapters = maybe\n"), ParseError);
  CHECK_THROWS_WITH_AS(parse_one("\n\nheads = x\n"), doctest::Contains("exp.cfg:3"), ParseError);
}

TEST_CASE("specs load from disk and missing files are an io error") {
  const std::string dir = temp_dir("specfile");
  write_file(dir + "/exp.cfg", "data = /tmp/d\nregime = family\nmax_updates = 17\n");
  const ExperimentSpec spec = ExperimentSpec::load(dir + "/exp.cfg");
  CHECK(spec.data == "/tmp/d");
  CHECK(spec.train.max_updates == 17);
  CHECK(spec.regimes == std::vector<std::string>{"family"});
  CHECK_THROWS_AS(ExperimentSpec::load(dir + "/absent.cfg"), IoError);
}

TEST_CASE("environment variables override both scalars and lists") {
  std::istringstream in("data = /tmp/d\nmax_lr = 1e-3\nregime = family\nseed = 1\n");
  ExperimentSpec spec = ExperimentSpec::parse(in, "exp.cfg");

  setenv("FAMADAPT_MAX_LR", "2e-3", 1);
  setenv("FAMADAPT_REGIME", "pair, gmm", 1);
  setenv("FAMADAPT_SEED", "7,8,9", 1);
  spec.apply_env_overrides();
  unsetenv("FAMADAPT_MAX_LR");
  unsetenv("FAMADAPT_REGIME");
  unsetenv("FAMADAPT_SEED");

  CHECK(spec.train.max_lr == doctest::Approx(2e-3));
  CHECK(spec.regimes == std::vector<std::string>{"pair", "gmm"});
  CHECK(spec.seeds == std::vector<std::uint64_t>{7, 8, 9});
  CHECK(spec.data == "/tmp/d");  // untouched without an override

  setenv("FAMADAPT_PATIENCE", "nope", 1);
  CHECK_THROWS_WITH_AS(spec.apply_env_overrides(), doctest::Contains("FAMADAPT_PATIENCE"),
                       ParseError);
  unsetenv("FAMADAPT_PATIENCE");
}

TEST_CASE("spec validation collects every violation in one error") {
  ExperimentSpec spec = base_spec();
  spec.data = "/definitely/not/here";
  spec.regimes = {"family", "family", "sideways"};
  spec.model_dim = 15;  // not divisible by heads=2
  spec.eval_beam = 0;
  spec.train.max_lr = -1.0;
  spec.seeds = {4, 4};

  try {
    spec.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("data is not a directory") != std::string::npos);
    CHECK(msg.find("unknown regime 'sideways'") != std::string::npos);
    CHECK(msg.find("listed more than once") != std::string::npos);
    CHECK(msg.find("divisible by heads") != std::string::npos);
    CHECK(msg.find("eval_beam") != std::string::npos);
    CHECK(msg.find("max_lr must be positive") != std::string::npos);
    CHECK(msg.find("seed values must be distinct") != std::string::npos);
  }

  ExperimentSpec ok = base_spec();
  CHECK_NOTHROW(ok.validate());
  ok.regimes.clear();
  CHECK_THROWS_WITH_AS(ok.validate(), doctest::Contains("at least one regime"), ConfigError);
}

TEST_CASE("the grid is the regime x sweep x seed product with readable labels") {
  ExperimentSpec spec = base_spec();
  SUBCASE("singleton sweeps collapse into the bare regime label") {
    const std::vector<ExperimentCell> grid = experiment_grid(spec);
    REQUIRE(grid.size() == 1);
    CHECK(grid[0].label == "family");
    CHECK(grid[0].bottleneck == 4);
    CHECK(grid[0].dropout == 0.0);
    CHECK(grid[0].seed == 11);
  }
  SUBCASE("swept dimensions show up in the label") {
    spec.regimes = {"family", "pair"};
    spec.sweep_bottleneck = {8, 16};
    spec.sweep_dropout = {0.0, 0.1};
    spec.seeds = {1, 2, 3};
    const std::vector<ExperimentCell> grid = experiment_grid(spec);
    CHECK(grid.size() == 2 * 2 * 2 * 3);
    CHECK(grid[0].label == "family-b8-d0-s1");
    CHECK(grid.back().label == "pair-b16-d0.1-s3");
    std::set<std::string> labels;
    for (const ExperimentCell& c : grid) labels.insert(c.label);
    CHECK(labels.size() == grid.size());
  }
  SUBCASE("a single swept value replaces the base without decorating the label") {
    spec.sweep_bottleneck = {12};
    const std::vector<ExperimentCell> grid = experiment_grid(spec);
    REQUIRE(grid.size() == 1);
    CHECK(grid[0].label == "family");
    CHECK(grid[0].bottleneck == 12);
  }
}

TEST_CASE("family cell on the toy corpus trains three groups and is seed deterministic") {
  const ExperimentSpec spec = base_spec();
  const LoadedDataset data = load_dataset_dir(toy_dir());
  const ExperimentCell cell = single_cell(spec);

  const std::string dir_a = temp_dir("family_a");
  const CellOutcome a = run_cell(spec, data, data.registry, cell, dir_a);
  CHECK_FALSE(a.resumed);
  REQUIRE(a.groups.size() == 3);
  REQUIRE(a.checkpoints.size() == 3);
  for (const std::string group : {"alpha", "beta", "gamma"}) {
    REQUIRE(a.checkpoints.count(group) == 1);
    CHECK(fs::exists(a.checkpoints.at(group)));
    CHECK(fs::exists(dir_a + "/train_" + group + ".tsv"));
  }
  CHECK(fs::exists(dir_a + "/grouping.txt"));
  CHECK(fs::exists(dir_a + "/cell.done"));

  // identical seed and config reproduce the checkpoint bytes
  const std::string dir_b = temp_dir("family_b");
  const CellOutcome b = run_cell(spec, data, data.registry, cell, dir_b);
  for (const std::string group : {"alpha", "beta", "gamma"}) {
    CHECK(slurp(a.checkpoints.at(group)) == slurp(b.checkpoints.at(group)));
  }

  // a different seed moves the weights
  ExperimentSpec other = spec;
  other.train.seed = 12;
  const std::string dir_c = temp_dir("family_c");
  const CellOutcome c = run_cell(other, data, data.registry, single_cell(other), dir_c);
  CHECK(slurp(a.checkpoints.at("alpha")) != slurp(c.checkpoints.at("alpha")));
}

TEST_CASE("restored checkpoints reproduce the trained tensors and translate") {
  const ExperimentSpec spec = base_spec();
  const LoadedDataset data = load_dataset_dir(toy_dir());
  const std::string dir = temp_dir("restore");
  const CellOutcome outcome = run_cell(spec, data, data.registry, single_cell(spec), dir);

  RestoredModel restored = restore_checkpoint(outcome.checkpoints.at("alpha"));
  CHECK(restored.group_id == "alpha");
  CHECK_FALSE(restored.full_finetune);
  REQUIRE(restored.adapters != nullptr);
  CHECK(restored.config.vocab_size == data.vocab.size());
  CHECK(restored.config.model_dim == spec.model_dim);
  CHECK(restored.config.max_len == spec.max_len);

  // every stored tensor landed verbatim in the rebuilt parameters
  const Checkpoint& best = outcome.groups.at("alpha").best;
  std::map<std::string, Parameter*> params;
  for (Parameter* p : restored.model->backbone_parameters()) params.emplace(p->name, p);
  for (Parameter* p : restored.adapters->parameters()) params.emplace(p->name, p);
  REQUIRE(params.size() == best.tensors.size());
  for (const auto& [name, tensor] : best.tensors) {
    REQUIRE(params.count(name) == 1);
    CHECK(params[name]->tensor.values() == tensor.values());
  }

  // decoding through the restored model matches a direct greedy pass
  const BitextCorpus* corpus = data.find("test", "aa");
  REQUIRE(corpus != nullptr);
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < 3; ++i) lines.push_back(data.vocab.decode_ids(corpus->examples[i].src));
  const std::vector<std::string> beam1 =
      translate_lines(restored, data.vocab, lines, "aa", 1, 0.0);
  REQUIRE(beam1.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::vector<TokenId> ids =
        greedy_decode(*restored.model, restored.adapters.get(), corpus->examples[i].src,
                      data.vocab.lang_tag("aa"), spec.max_len);
    CHECK(beam1[i] == data.vocab.decode_ids(ids));
  }

  CHECK(translate_lines(restored, data.vocab, {}, "aa", 1, 0.0).empty());

  const std::vector<std::string> vocab_lines = {"a b"};
  const Vocab other = Vocab::build(vocab_lines, TokenizeMode::whitespace, {"aa"});
  CHECK_THROWS_AS(translate_lines(restored, other, lines, "aa", 1, 0.0), ConfigError);
}

TEST_CASE("gmm cells cluster first, full fine-tuning trains one bare group") {
  ExperimentSpec spec = base_spec();
  const LoadedDataset data = load_dataset_dir(toy_dir());

  spec.regimes = {"gmm"};
  spec.embed_sentences = 6;
  const std::string gmm_dir = temp_dir("gmm");
  const CellOutcome gmm = run_cell(spec, data, data.registry, single_cell(spec), gmm_dir);
  CHECK(fs::exists(gmm_dir + "/cluster_report.txt"));
  CHECK(gmm.scheme.kind == GroupingKind::custom);
  CHECK(gmm.checkpoints.size() == gmm.scheme.groups.size());
  for (const std::string& code : data.registry.codes()) {
    CHECK(gmm.scheme.group_of(code).rfind("cluster.", 0) == 0);
  }

  spec.regimes = {"full_ft"};
  const std::string ft_dir = temp_dir("full_ft");
  const CellOutcome ft = run_cell(spec, data, data.registry, single_cell(spec), ft_dir);
  REQUIRE(ft.groups.size() == 1);
  REQUIRE(ft.checkpoints.count("all") == 1);
  RestoredModel restored = restore_checkpoint(ft.checkpoints.at("all"));
  CHECK(restored.full_finetune);
  CHECK(restored.adapters == nullptr);
  CHECK(restored.group_id == "all");

  ExperimentCell bogus = single_cell(spec);
  bogus.regime = "sideways";
  CHECK_THROWS_AS(run_cell(spec, data, data.registry, bogus, temp_dir("bogus")), ConfigError);
}

TEST_CASE("experiments evaluate every language, emit reports, and resume by fingerprint") {
  ExperimentSpec spec = base_spec();
  spec.regimes = {"family", "full_ft"};
  const std::string out = temp_dir("run");

  const ExperimentResult first = run_experiment(spec, out);
  CHECK(first.cells_trained == 2);
  CHECK(first.cells_resumed == 0);
  REQUIRE(first.bleu.count("family") == 1);
  REQUIRE(first.bleu.count("full_ft") == 1);
  for (const auto& [label, by_lang] : first.bleu) {
    CHECK(by_lang.size() == 9);  // every toy language gets a score
    for (const auto& [code, score] : by_lang) {
      CHECK(score >= 0.0);
      CHECK(score <= 100.0);
    }
  }
  CHECK(first.budgets.at("full_ft").trainable_fraction == doctest::Approx(1.0));
  CHECK(first.budgets.at("family").num_groups == 3);
  REQUIRE(first.report.tsv_paths.size() == 4);
  REQUIRE(first.report.svg_paths.size() == 4);
  for (const std::string& p : first.report.tsv_paths) CHECK(fs::exists(p));
  for (const std::string& p : first.report.svg_paths) CHECK(fs::exists(p));

  // rerunning the same spec in the same directory retrains nothing
  const ExperimentResult second = run_experiment(spec, out);
  CHECK(second.cells_trained == 0);
  CHECK(second.cells_resumed == 2);
  CHECK(second.bleu == first.bleu);

  // a config change invalidates only the cells whose fingerprints moved:
  // full_ft ignores the bottleneck, so its checkpoint stays valid
  ExperimentSpec wider = spec;
  wider.bottleneck = 5;
  const ExperimentResult third = run_experiment(wider, out);
  CHECK(third.cells_trained == 1);
  CHECK(third.cells_resumed == 1);
  CHECK(third.bleu.at("full_ft") == first.bleu.at("full_ft"));

  // losing a checkpoint file forces that cell to retrain too
  fs::remove(out + "/cells/full_ft/all.ckpt");
  const ExperimentResult fourth = run_experiment(wider, out);
  CHECK(fourth.cells_trained == 1);
  CHECK(fourth.cells_resumed == 1);
}

TEST_CASE("worker pools produce the same results as a serial run") {
  ExperimentSpec spec = base_spec();
  spec.regimes = {"family", "full_ft"};

  const ExperimentResult serial = run_experiment(spec, temp_dir("serial"), 1);
  const ExperimentResult pooled = run_experiment(spec, temp_dir("pooled"), 2);
  CHECK(pooled.cells_trained == 2);
  CHECK(pooled.bleu == serial.bleu);
  REQUIRE(pooled.budgets.size() == serial.budgets.size());
  for (const auto& [label, budget] : serial.budgets) {
    CHECK(pooled.budgets.at(label).total == budget.total);
    CHECK(pooled.budgets.at(label).per_set == budget.per_set);
  }
}
