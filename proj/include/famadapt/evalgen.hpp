#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "famadapt/langreg.hpp"
#include "famadapt/model.hpp"

namespace famadapt {

struct Hypothesis {
  std::vector<TokenId> ids;  // generated tokens, terminal eos excluded
  double logprob = 0.0;      // cumulative, includes the eos term when finished
  bool finished = false;
};

// Ranking score: logprob / length^penalty, where length counts the terminal
// eos for finished hypotheses (an immediate eos has length 1).
double length_normalized_score(const Hypothesis& h, double length_penalty);

// Argmax decoding, lowest token id on ties, until eos or max_len generated
// tokens. `adapters` (may be null) is attached for the duration of the call;
// whatever was attached before is restored afterwards.
std::vector<TokenId> greedy_decode(Seq2SeqModel& model, AdapterSet* adapters,
                                   std::span<const TokenId> src, TokenId lang_tag, Index max_len,
                                   TokenId eos_id = 2);

// Beam search. Every one-token extension (eos included) competes for the
// beam by cumulative logprob, ties preferring the lexicographically smaller
// extended sequence; winners whose token was eos retire to the finished
// pool. Hypotheses still alive at max_len join the pool unfinished, and the
// pool winner is picked by length_normalized_score with the same tie rule.
// With beam=1 and length_penalty=0 this reproduces greedy_decode exactly,
// ties included.
Hypothesis beam_search(Seq2SeqModel& model, AdapterSet* adapters, std::span<const TokenId> src,
                       TokenId lang_tag, Index beam, Index max_len, double length_penalty = 1.0,
                       TokenId eos_id = 2);

// Corpus-level BLEU-4 sufficient statistics; additive across sentences.
struct BleuStats {
  std::array<Index, 4> matches{};  // clipped n-gram matches, order n = index + 1
  std::array<Index, 4> totals{};   // hypothesis n-gram counts
  Index hyp_len = 0;
  Index ref_len = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_sentence_stats(const std::vector<std::string>& hyp,
                              const std::vector<std::string>& ref);

// Geometric mean of clipped precisions up to the highest order the
// hypothesis length supports, brevity penalty exp(1 - ref/hyp) when the
// hypothesis is short. A zero unigram numerator gives 0; a zero numerator at
// higher orders is smoothed by adding one to it. Scale 0..100.
double bleu_score(const BleuStats& stats);

// Pre-tokenized corpora; sentence counts must agree and be nonzero.
double bleu_corpus(const std::vector<std::vector<std::string>>& hyps,
                   const std::vector<std::vector<std::string>>& refs);

// Raw-text convenience: punctuation is split off words, then whitespace
// tokenization; no case folding.
std::vector<std::string> bleu_tokenize(const std::string& raw);
double bleu_corpus_raw(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

// regime -> (target language -> corpus BLEU). Every regime must cover
// exactly the registry's languages.
using RegimeResults = std::map<std::string, std::map<std::string, double>>;

struct ReportFiles {
  std::vector<std::string> tsv_paths;
  std::vector<std::string> svg_paths;
};

// Writes four figures into out_dir, each as a TSV and a self-contained SVG
// bar chart: per-pair BLEU, per-family averages with deltas against the
// baseline regime, seen/unseen averages with the same deltas, and the
// parameter-budget table. The baseline is "pair" when present, otherwise the
// first regime in sorted order.
ReportFiles report_emit(const RegimeResults& results, const LanguageRegistry& registry,
                        const std::map<std::string, BudgetReport>& budgets,
                        const std::string& out_dir);

}  // namespace famadapt
