#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "famadapt/error.hpp"
#include "famadapt/langreg.hpp"

using namespace famadapt;

namespace {

std::string data_path(const std::string& name) {
  return std::string(FAMADAPT_DATA_DIR) + "/" + name;
}

LanguageRegistry ted() { return LanguageRegistry::load(data_path("registry_ted.txt")); }
LanguageRegistry opus() { return LanguageRegistry::load(data_path("registry_opus.txt")); }

std::multiset<std::size_t> group_sizes(const GroupingScheme& scheme) {
  std::multiset<std::size_t> sizes;
  for (const auto& [id, members] : scheme.groups) sizes.insert(members.size());
  return sizes;
}

void check_is_partition(const LanguageRegistry& reg, const GroupingScheme& scheme) {
  std::set<std::string> seen;
  for (const auto& [id, members] : scheme.groups)
    for (const auto& code : members) CHECK(seen.insert(code).second);
  CHECK(seen.size() == reg.size());
  for (const auto& code : reg.codes()) CHECK(seen.count(code) == 1);
}

}  // namespace

TEST_CASE("bundled registries carry the published language metadata") {
  LanguageRegistry reg = ted();
  CHECK(reg.size() == 17);
  CHECK(reg.at("ku").family == "Indo-Iranian");
  CHECK_FALSE(reg.at("ku").seen);
  CHECK(reg.at("id").family == "Austronesian");
  CHECK(reg.at("id").seen);
  CHECK(reg.at("bg").train_size == 174000);
  CHECK(reg.at("mr").script == "Devanagari");

  LanguageRegistry o = opus();
  CHECK(o.size() == 16);
  CHECK_FALSE(o.contains("fil"));
  CHECK(o.at("hi").train_size == 534000);
  CHECK_THROWS_AS(o.at("fil"), IndexError);
}

TEST_CASE("registry parsing reports the offending line") {
  auto parse = [](const std::string& text) {
    std::istringstream is(text);
    return LanguageRegistry::parse(is, "mem");
  };
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("# only comments\n"), ParseError);

  try {
    parse("aa Fam Latin seen 10\nbb Fam Latin maybe 10\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("mem:2") != std::string::npos);
  }
  try {
    parse("aa Fam Latin seen 10\naa Fam Latin seen 20\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    std::string msg = e.what();
    CHECK(msg.find("duplicate") != std::string::npos);
    CHECK(msg.find(":2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("aa Fam Latin seen ten\n"), ParseError);
  CHECK_THROWS_AS(parse("aa Fam Latin seen\n"), ParseError);
  CHECK_THROWS_AS(parse("aa Fam Latin seen 10 extra\n"), ParseError);

  // Inline comments and blank lines are fine.
  LanguageRegistry ok = parse("\naa Fam Latin seen 10 # ok\n\nbb Fam Latin unseen 5\n");
  CHECK(ok.size() == 2);
}

TEST_CASE("family grouping follows the registry's family column") {
  Rng rng(1);
  GroupingScheme ted_fam = build_grouping(ted(), GroupingKind::family, rng);
  CHECK(ted_fam.num_groups() == 3);
  CHECK(group_sizes(ted_fam) == std::multiset<std::size_t>{9, 3, 5});
  CHECK(ted_fam.groups.at("Balto-Slavic").size() == 9);
  CHECK(ted_fam.groups.at("Austronesian").size() == 3);
  CHECK(ted_fam.groups.at("Indo-Iranian").size() == 5);
  CHECK(ted_fam.group_of("ku") == "Indo-Iranian");

  GroupingScheme opus_fam = build_grouping(opus(), GroupingKind::family, rng);
  CHECK(group_sizes(opus_fam) == std::multiset<std::size_t>{9, 2, 5});
}

TEST_CASE("agnostic and pair groupings are the two degenerate partitions") {
  Rng rng(2);
  GroupingScheme agnostic = build_grouping(ted(), GroupingKind::agnostic, rng);
  CHECK(agnostic.num_groups() == 1);
  CHECK(agnostic.groups.at("all").size() == 17);

  GroupingScheme pair = build_grouping(ted(), GroupingKind::pair, rng);
  CHECK(pair.num_groups() == 17);
  for (const auto& [id, members] : pair.groups) {
    CHECK(members.size() == 1);
    CHECK(members[0] == id);
  }
}

TEST_CASE("deterministic groupings ignore the seed, random uses it reproducibly") {
  Rng a(10), b(99);
  for (GroupingKind kind : {GroupingKind::family, GroupingKind::agnostic, GroupingKind::pair}) {
    GroupingScheme ga = build_grouping(ted(), kind, a);
    GroupingScheme gb = build_grouping(ted(), kind, b);
    CHECK(ga.groups == gb.groups);
  }

  Rng r1(5), r2(5), r3(6);
  GroupingScheme s1 = build_grouping(ted(), GroupingKind::random, r1);
  GroupingScheme s2 = build_grouping(ted(), GroupingKind::random, r2);
  GroupingScheme s3 = build_grouping(ted(), GroupingKind::random, r3);
  CHECK(s1.groups == s2.groups);
  CHECK(s1.groups != s3.groups);
}

TEST_CASE("every grouping kind yields a partition with the right size profile") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    for (GroupingKind kind : {GroupingKind::family, GroupingKind::agnostic, GroupingKind::pair,
                              GroupingKind::random}) {
      GroupingScheme scheme = build_grouping(ted(), kind, rng);
      check_is_partition(ted(), scheme);
    }
    Rng rng2(seed);
    GroupingScheme random_scheme = build_grouping(opus(), GroupingKind::random, rng2);
    CHECK(group_sizes(random_scheme) == std::multiset<std::size_t>{9, 2, 5});
  }
}

TEST_CASE("custom groupings must partition the registry") {
  Rng rng(3);
  std::map<std::string, std::vector<std::string>> good = {
      {"g1", {"bg", "fa", "sr", "hr", "uk", "id", "sk", "mk", "sl"}},
      {"g2", {"hi", "mr", "ku", "bs", "ms", "bn", "be", "fil"}}};
  GroupingScheme scheme = build_grouping(ted(), GroupingKind::custom, rng, &good);
  CHECK(scheme.num_groups() == 2);
  CHECK(scheme.group_of("fil") == "g2");

  std::map<std::string, std::vector<std::string>> missing = good;
  missing["g2"].pop_back();  // drops fil
  CHECK_THROWS_AS(build_grouping(ted(), GroupingKind::custom, rng, &missing), CoverageError);

  std::map<std::string, std::vector<std::string>> doubled = good;
  doubled["g1"].push_back("fil");
  CHECK_THROWS_AS(build_grouping(ted(), GroupingKind::custom, rng, &doubled), CoverageError);

  std::map<std::string, std::vector<std::string>> unknown = good;
  unknown["g1"].push_back("xx");
  CHECK_THROWS_AS(build_grouping(ted(), GroupingKind::custom, rng, &unknown), CoverageError);

  CHECK_THROWS_AS(build_grouping(ted(), GroupingKind::custom, rng, nullptr), ConfigError);
  CHECK_THROWS_AS(build_grouping(ted(), GroupingKind::family, rng, &good), ConfigError);
}

TEST_CASE("groupings survive a save/load round trip") {
  Rng rng(4);
  GroupingScheme original = build_grouping(ted(), GroupingKind::random, rng);
  std::string path = "grouping_roundtrip.txt";
  save_grouping(original, path);
  GroupingScheme loaded = load_grouping(path, ted());
  CHECK(loaded.groups == original.groups);
  CHECK(loaded.kind == original.kind);
  std::remove(path.c_str());
}

TEST_CASE("adapter budget reproduces the published scale") {
  ModelConfig mcfg;
  mcfg.vocab_size = 250000;
  mcfg.model_dim = 1024;
  mcfg.ff_dim = 4096;
  mcfg.heads = 16;
  mcfg.enc_layers = 12;
  mcfg.dec_layers = 12;
  mcfg.use_embedding_adapters = true;
  AdapterConfig acfg;
  acfg.model_dim = 1024;
  acfg.bottleneck = 512;

  Rng rng(5);
  GroupingScheme agnostic = build_grouping(opus(), GroupingKind::agnostic, rng);
  BudgetReport one = budget_report(mcfg, acfg, agnostic);
  CHECK(one.per_set == 27356160);  // 26 adapters of 1,052,160 parameters
  CHECK(one.total == one.per_set);

  GroupingScheme family = build_grouping(opus(), GroupingKind::family, rng);
  BudgetReport fam = budget_report(mcfg, acfg, family);
  CHECK(fam.total == 3 * one.per_set);

  GroupingScheme pair = build_grouping(opus(), GroupingKind::pair, rng);
  BudgetReport pr = budget_report(mcfg, acfg, pair);
  CHECK(pr.total == 16 * one.per_set);

  CHECK(fam.per_set == one.per_set);
  CHECK(one.trainable_fraction > 0.0);
  CHECK(budget_report_text(one).find("27356160") != std::string::npos);
}

TEST_CASE("closed-form parameter counts match enumerating a built model") {
  ModelConfig cfg;
  cfg.vocab_size = 30;
  cfg.model_dim = 8;
  cfg.ff_dim = 12;
  cfg.heads = 2;
  cfg.enc_layers = 2;
  cfg.dec_layers = 3;
  cfg.use_embedding_adapters = true;
  Rng rng(6);
  Seq2SeqModel model(cfg, rng);

  Index enumerated = 0;
  for (Parameter* p : model.backbone_parameters()) enumerated += p->tensor.numel();
  CHECK(enumerated == backbone_param_count(cfg));

  AdapterConfig acfg;
  acfg.model_dim = 8;
  acfg.bottleneck = 3;

  std::istringstream regs("x1 F1 L seen 5\nx2 F1 L seen 5\nx3 F2 L seen 5\n");
  LanguageRegistry reg = LanguageRegistry::parse(regs, "mem");
  Rng grng(7);
  GroupingScheme family = build_grouping(reg, GroupingKind::family, grng);
  BudgetReport report = budget_report(cfg, acfg, family);

  Index actual = 0;
  for (const auto& [gid, members] : family.groups) {
    Rng arng(8);
    AdapterSet set = make_adapter_set(model, acfg.bottleneck, acfg.init_scale, gid, arng);
    for (Parameter* p : set.parameters()) actual += p->tensor.numel();
  }
  CHECK(actual == report.total);
}
