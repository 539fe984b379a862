#pragma once

#include <map>
#include <string>
#include <vector>

#include "famadapt/ops.hpp"
#include "famadapt/rng.hpp"
#include "famadapt/tensor.hpp"

namespace famadapt {

enum class TokenizeMode { whitespace, character };

TokenizeMode tokenize_mode_from_name(const std::string& name);
std::string tokenize_mode_name(TokenizeMode mode);

// character mode ignores whitespace; whitespace mode splits on runs of it.
std::vector<std::string> tokenize(const std::string& line, TokenizeMode mode);

// Fixed-layout vocabulary: pad, bos, eos, unk, one tag token "<code>" per
// registry language, then corpus tokens by descending frequency (ties
// lexicographic). Serialized as one token per line in id order.
class Vocab {
 public:
  static Vocab build(const std::vector<std::string>& lines, TokenizeMode mode,
                     const std::vector<std::string>& lang_codes);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  Index size() const { return static_cast<Index>(tokens_.size()); }
  TokenId pad_id() const { return 0; }
  TokenId bos_id() const { return 1; }
  TokenId eos_id() const { return 2; }
  TokenId unk_id() const { return 3; }
  TokenId lang_tag(const std::string& code) const;

  TokenId id_or_unk(const std::string& token) const;
  const std::string& token(TokenId id) const;

  std::vector<TokenId> encode_line(const std::string& line, TokenizeMode mode) const;
  std::string decode_ids(const std::vector<TokenId>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> ids_;
};

struct Example {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt;
};

struct BitextCorpus {
  std::string src_lang;
  std::string tgt_lang;
  std::string split;  // train | valid | test
  std::vector<Example> examples;

  std::string pair() const { return src_lang + "-" + tgt_lang; }
};

// Line-aligned plain-text pair; every token becomes an id (unknowns map to
// unk). Empty lines are rejected because downstream code assumes nonempty
// sides.
BitextCorpus load_bitext(const std::string& src_path, const std::string& tgt_path,
                         const Vocab& vocab, TokenizeMode mode, const std::string& src_lang,
                         const std::string& tgt_lang, const std::string& split);

// p_i = n_i^(1/T) / sum_j n_j^(1/T)
std::vector<double> temperature_weights(const std::vector<Index>& sizes, double temperature);

struct SamplingSchedule {
  double temperature = 1.5;
  std::vector<std::string> pairs;  // parallel to sizes/probs
  std::vector<Index> sizes;
  std::vector<double> probs;
};

SamplingSchedule make_schedule(const std::vector<const BitextCorpus*>& corpora,
                               double temperature);

struct BatchItem {
  std::size_t corpus_index = 0;
  std::size_t example_index = 0;
};

struct Batch {
  std::vector<BatchItem> items;
  Index token_count = 0;  // sum over items of max(|src|, |tgt|)
};

// Infinite seeded stream of mixed batches: a pair is drawn from the schedule
// probabilities, then an example uniformly within the pair; the batch closes
// once the token budget is reached (always at least one example).
class BatchSampler {
 public:
  BatchSampler(std::vector<const BitextCorpus*> corpora, SamplingSchedule schedule,
               Index batch_tokens, Rng rng);

  Batch next();

  const BitextCorpus& corpus(std::size_t index) const { return *corpora_[index]; }

  // Exposed so checkpoints can round-trip the stream position exactly.
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  std::vector<const BitextCorpus*> corpora_;
  SamplingSchedule schedule_;
  std::vector<double> cumulative_;
  Index batch_tokens_;
  Rng rng_;
};

struct CorpusSplits {
  BitextCorpus train;
  BitextCorpus valid;
  BitextCorpus test;
};

CorpusSplits split_corpus(const BitextCorpus& corpus, std::size_t valid_n, std::size_t test_n,
                          Rng& rng);

}  // namespace famadapt
