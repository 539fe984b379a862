#pragma once

#include <string>
#include <utility>
#include <vector>

#include "famadapt/data.hpp"
#include "famadapt/langreg.hpp"

namespace famadapt {

// The bundled corpus is synthetic: nine constructed languages in three
// families, each produced from a shared English-like source by a
// deterministic token mapping plus a family word-order transform. Families
// use disjoint target vocabularies; languages within a family differ only in
// their words for a handful of rare source types. Training sizes are skewed
// the way real multilingual corpora are, and the smallest language of each
// family is marked unseen.

struct ToyLanguage {
  std::string code;
  std::string family;
  std::string script;
  bool seen = true;
  Index train_n = 0;
};

struct ToySpec {
  std::vector<ToyLanguage> languages;
  Index valid_n = 12;
  Index test_n = 12;
  std::uint64_t seed = 7;
};

ToySpec default_toy_spec();

// One aligned (source line, target line) list per split for one language.
struct ToyPair {
  std::string lang;
  std::vector<std::pair<std::string, std::string>> train;
  std::vector<std::pair<std::string, std::string>> valid;
  std::vector<std::pair<std::string, std::string>> test;
};

// Deterministic in the spec seed; language order follows the spec.
std::vector<ToyPair> generate_toy_corpus(const ToySpec& spec);

std::string toy_registry_text(const ToySpec& spec);

// Writes registry.txt plus <split>.en-<code>.{src,tgt} for every language
// and split into dir, creating it if needed.
void write_toy_dataset(const ToySpec& spec, const std::string& dir);

// A dataset directory in the layout write_toy_dataset produces: registry.txt
// and line-aligned <split>.<src>-<tgt>.{src,tgt} files. The vocabulary is
// rebuilt from the training lines of every pair (both sides), so loading is
// deterministic for a fixed directory.
struct LoadedDataset {
  LanguageRegistry registry;
  Vocab vocab;
  std::vector<BitextCorpus> train;
  std::vector<BitextCorpus> valid;
  std::vector<BitextCorpus> test;

  const BitextCorpus* find(const std::string& split, const std::string& tgt_lang) const;
};

LoadedDataset load_dataset_dir(const std::string& dir);

}  // namespace famadapt
