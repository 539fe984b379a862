#include "famadapt/toydata.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "famadapt/error.hpp"
#include "famadapt/rng.hpp"

namespace famadapt {

namespace {

constexpr int kSourceTypes = 24;

// Zipf-ish source unigram weights: w_i = 1/(i+2). The frequent types land in
// nearly every sentence, so their family translations behave like marker
// particles that make the families easy to tell apart downstream.
int draw_source_type(Rng& rng) {
  static const std::vector<double> cumulative = [] {
    std::vector<double> c;
    double total = 0.0;
    for (int i = 0; i < kSourceTypes; ++i) total += 1.0 / static_cast<double>(i + 2);
    double acc = 0.0;
    for (int i = 0; i < kSourceTypes; ++i) {
      acc += 1.0 / static_cast<double>(i + 2) / total;
      c.push_back(acc);
    }
    c.back() = 1.0;
    return c;
  }();
  const double u = rng.uniform();
  return static_cast<int>(std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                          cumulative.begin());
}

std::string family_prefix(const std::string& family) {
  if (family == "alpha") return "al";
  if (family == "beta") return "be";
  if (family == "gamma") return "ga";
  throw ConfigError("unknown toy family: " + family);
}

// Position of the language within its family decides which rare source types
// it translates with its own words: the first language has none, the second
// covers types 20..23, the third types 16..19.
bool is_exception_type(int type, std::size_t position_in_family) {
  if (position_in_family == 1) return type >= 20;
  if (position_in_family == 2) return type >= 16 && type < 20;
  return false;
}

std::vector<std::string> translate(const std::vector<int>& types, const ToyLanguage& lang,
                                   std::size_t position_in_family) {
  const std::string prefix = family_prefix(lang.family);
  std::vector<std::string> out;
  out.reserve(types.size());
  for (int t : types) {
    std::string word = prefix + std::to_string(t);
    if (is_exception_type(t, position_in_family)) word += "_" + lang.code;
    out.push_back(std::move(word));
  }
  if (lang.family == "beta") {
    std::reverse(out.begin(), out.end());
  } else if (lang.family == "gamma" && out.size() > 1) {
    std::rotate(out.begin(), out.begin() + 1, out.end());
  }
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string line;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) line += ' ';
    line += words[i];
  }
  return line;
}

std::vector<std::pair<std::string, std::string>> make_split(const ToyLanguage& lang,
                                                            std::size_t position_in_family,
                                                            Index n, Rng& rng) {
  std::vector<std::pair<std::string, std::string>> lines;
  lines.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index len = 3 + rng.randint(7);  // 3..9 tokens
    std::vector<int> types(static_cast<std::size_t>(len));
    std::vector<std::string> src(static_cast<std::size_t>(len));
    for (Index t = 0; t < len; ++t) {
      types[static_cast<std::size_t>(t)] = draw_source_type(rng);
      src[static_cast<std::size_t>(t)] = "x" + std::to_string(types[static_cast<std::size_t>(t)]);
    }
    lines.emplace_back(join(src), join(translate(types, lang, position_in_family)));
  }
  return lines;
}

void write_lines(const std::string& path,
                 const std::vector<std::pair<std::string, std::string>>& lines, bool source_side) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& [src, tgt] : lines) out << (source_side ? src : tgt) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

ToySpec default_toy_spec() {
  ToySpec spec;
  spec.languages = {
      {"aa", "alpha", "latn", true, 170},
      {"ab", "alpha", "latn", true, 120},
      {"ac", "alpha", "latn", false, 60},
      {"ba", "beta", "cyrl", true, 150},
      {"bb", "beta", "cyrl", true, 100},
      {"bc", "beta", "cyrl", false, 20},
      {"ca", "gamma", "arab", true, 90},
      {"cb", "gamma", "arab", true, 25},
      {"cc", "gamma", "arab", false, 10},
  };
  return spec;
}

std::vector<ToyPair> generate_toy_corpus(const ToySpec& spec) {
  std::vector<ToyPair> pairs;
  std::map<std::string, std::size_t> family_seen;
  const Rng master(spec.seed);
  for (const auto& lang : spec.languages) {
    const std::size_t position = family_seen[lang.family]++;
    const Rng base = master.fork("toy/" + lang.code);
    ToyPair pair;
    pair.lang = lang.code;
    Rng train_rng = base.fork("train");
    Rng valid_rng = base.fork("valid");
    Rng test_rng = base.fork("test");
    pair.train = make_split(lang, position, lang.train_n, train_rng);
    pair.valid = make_split(lang, position, spec.valid_n, valid_rng);
    pair.test = make_split(lang, position, spec.test_n, test_rng);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::string toy_registry_text(const ToySpec& spec) {
  std::ostringstream out;
  out << "# toy corpus: three constructed families derived from a shared source\n";
  for (const auto& lang : spec.languages) {
    out << lang.code << ' ' << lang.family << ' ' << lang.script << ' '
        << (lang.seen ? "seen" : "unseen") << ' ' << lang.train_n << '\n';
  }
  return out.str();
}

void write_toy_dataset(const ToySpec& spec, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    const std::string path = dir + "/registry.txt";
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << toy_registry_text(spec);
  }
  for (const auto& pair : generate_toy_corpus(spec)) {
    const auto emit = [&](const char* split,
                          const std::vector<std::pair<std::string, std::string>>& lines) {
      const std::string stem = dir + "/" + split + ".en-" + pair.lang;
      write_lines(stem + ".src", lines, true);
      write_lines(stem + ".tgt", lines, false);
    };
    emit("train", pair.train);
    emit("valid", pair.valid);
    emit("test", pair.test);
  }
}

const BitextCorpus* LoadedDataset::find(const std::string& split,
                                        const std::string& tgt_lang) const {
  const std::vector<BitextCorpus>* corpora = nullptr;
  if (split == "train") corpora = &train;
  else if (split == "valid") corpora = &valid;
  else if (split == "test") corpora = &test;
  else throw ConfigError("unknown split: " + split);
  for (const auto& c : *corpora) {
    if (c.tgt_lang == tgt_lang) return &c;
  }
  return nullptr;
}

LoadedDataset load_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a dataset directory: " + dir);

  LoadedDataset ds;
  ds.registry = LanguageRegistry::load(dir + "/registry.txt");

  // Collect <split>.<src>-<tgt>.{src,tgt} stems present in the directory.
  struct Stem {
    std::string split, src_lang, tgt_lang;
    bool has_src = false, has_tgt = false;
  };
  std::map<std::string, Stem> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    const auto dot1 = name.find('.');
    const auto dot2 = name.rfind('.');
    if (dot1 == std::string::npos || dot2 <= dot1) continue;
    const std::string split = name.substr(0, dot1);
    if (split != "train" && split != "valid" && split != "test") continue;
    const std::string side = name.substr(dot2 + 1);
    if (side != "src" && side != "tgt") continue;
    const std::string pair = name.substr(dot1 + 1, dot2 - dot1 - 1);
    const auto dash = pair.find('-');
    if (dash == std::string::npos) continue;
    auto& stem = stems[split + "." + pair];
    stem.split = split;
    stem.src_lang = pair.substr(0, dash);
    stem.tgt_lang = pair.substr(dash + 1);
    (side == "src" ? stem.has_src : stem.has_tgt) = true;
  }
  if (stems.empty()) throw IoError("no corpus files in " + dir);

  for (const auto& [key, stem] : stems) {
    if (!stem.has_src || !stem.has_tgt) {
      throw IoError("dataset " + dir + ": " + key + " is missing its " +
                    (stem.has_src ? "tgt" : "src") + " side");
    }
    if (!ds.registry.contains(stem.tgt_lang)) {
      throw CoverageError("dataset " + dir + ": target language '" + stem.tgt_lang +
                          "' is not in the registry");
    }
  }

  // The vocabulary comes from the training text of every pair, both sides,
  // in deterministic (sorted stem) order.
  std::vector<std::string> lines;
  for (const auto& [key, stem] : stems) {
    if (stem.split != "train") continue;
    for (const char* side : {".src", ".tgt"}) {
      std::ifstream in(dir + "/" + key + side);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
      }
    }
  }
  ds.vocab = Vocab::build(lines, TokenizeMode::whitespace, ds.registry.codes());

  for (const auto& [key, stem] : stems) {
    BitextCorpus corpus =
        load_bitext(dir + "/" + key + ".src", dir + "/" + key + ".tgt", ds.vocab,
                    TokenizeMode::whitespace, stem.src_lang, stem.tgt_lang, stem.split);
    if (stem.split == "train") ds.train.push_back(std::move(corpus));
    else if (stem.split == "valid") ds.valid.push_back(std::move(corpus));
    else ds.test.push_back(std::move(corpus));
  }
  return ds;
}

}  // namespace famadapt
