#include "famadapt/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "famadapt/error.hpp"

namespace famadapt {

TokenizeMode tokenize_mode_from_name(const std::string& name) {
  if (name == "whitespace") return TokenizeMode::whitespace;
  if (name == "char") return TokenizeMode::character;
  throw ParseError("unknown tokenize mode '" + name + "' (expected whitespace|char)");
}

std::string tokenize_mode_name(TokenizeMode mode) {
  return mode == TokenizeMode::whitespace ? "whitespace" : "char";
}

std::vector<std::string> tokenize(const std::string& line, TokenizeMode mode) {
  std::vector<std::string> out;
  if (mode == TokenizeMode::whitespace) {
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
  } else {
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) out.emplace_back(1, c);
  }
  return out;
}

namespace {

const char* const kReserved[] = {"<pad>", "<s>", "</s>", "<unk>"};

}  // namespace

Vocab Vocab::build(const std::vector<std::string>& lines, TokenizeMode mode,
                   const std::vector<std::string>& lang_codes) {
  std::map<std::string, std::int64_t> freq;
  for (const std::string& line : lines)
    for (const std::string& tok : tokenize(line, mode)) ++freq[tok];
  if (freq.empty()) throw DomainError("cannot build a vocabulary from an empty corpus");

  Vocab v;
  for (const char* tok : kReserved) v.tokens_.emplace_back(tok);
  for (const std::string& code : lang_codes) v.tokens_.push_back("<" + code + ">");

  std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (auto& [tok, count] : ranked) v.tokens_.push_back(tok);

  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second)
      throw ContractError("vocabulary token '" + v.tokens_[i] + "' collides with a reserved id");
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file '" + path + "'");
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty())
      throw ParseError(path + ":" + std::to_string(v.tokens_.size() + 1) + ": empty token line");
    v.tokens_.push_back(line);
  }
  for (std::size_t i = 0; i < 4; ++i)
    if (v.tokens_.size() <= i || v.tokens_[i] != kReserved[i])
      throw ParseError(path + ": reserved token " + std::to_string(i) + " must be '" +
                       kReserved[i] + "'");
  for (std::size_t i = 0; i < v.tokens_.size(); ++i)
    if (!v.ids_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second)
      throw ParseError(path + ": duplicate token '" + v.tokens_[i] + "'");
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file '" + path + "'");
  for (const std::string& tok : tokens_) out << tok << '\n';
  if (!out) throw IoError("failed writing vocabulary file '" + path + "'");
}

TokenId Vocab::lang_tag(const std::string& code) const {
  auto it = ids_.find("<" + code + ">");
  if (it == ids_.end()) throw IndexError("no language tag for '" + code + "' in the vocabulary");
  return it->second;
}

TokenId Vocab::id_or_unk(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk_id() : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw IndexError("token id " + std::to_string(id) + " out of range [0," +
                     std::to_string(tokens_.size()) + ")");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode_line(const std::string& line, TokenizeMode mode) const {
  std::vector<TokenId> out;
  for (const std::string& tok : tokenize(line, mode)) out.push_back(id_or_unk(tok));
  return out;
}

std::string Vocab::decode_ids(const std::vector<TokenId>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open bitext file '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

BitextCorpus load_bitext(const std::string& src_path, const std::string& tgt_path,
                         const Vocab& vocab, TokenizeMode mode, const std::string& src_lang,
                         const std::string& tgt_lang, const std::string& split) {
  std::vector<std::string> src_lines = read_lines(src_path);
  std::vector<std::string> tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size())
    throw ParseError("bitext sides are not aligned: " + src_path + " has " +
                     std::to_string(src_lines.size()) + " lines, " + tgt_path + " has " +
                     std::to_string(tgt_lines.size()));
  BitextCorpus corpus;
  corpus.src_lang = src_lang;
  corpus.tgt_lang = tgt_lang;
  corpus.split = split;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    Example ex;
    ex.src = vocab.encode_line(src_lines[i], mode);
    ex.tgt = vocab.encode_line(tgt_lines[i], mode);
    if (ex.src.empty() || ex.tgt.empty())
      throw ParseError("line " + std::to_string(i + 1) + " of pair " + corpus.pair() +
                       " has an empty side");
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

std::vector<double> temperature_weights(const std::vector<Index>& sizes, double temperature) {
  if (temperature <= 0.0)
    throw DomainError("sampling temperature must be positive, got " + std::to_string(temperature));
  if (sizes.empty()) throw DomainError("temperature weighting needs at least one size");
  std::vector<double> weights(sizes.size());
  double total = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] <= 0)
      throw DomainError("train-set sizes must be positive, got " + std::to_string(sizes[i]));
    weights[i] = std::pow(static_cast<double>(sizes[i]), 1.0 / temperature);
    total += weights[i];
  }
  for (double& w : weights) w /= total;
  return weights;
}

SamplingSchedule make_schedule(const std::vector<const BitextCorpus*>& corpora,
                               double temperature) {
  SamplingSchedule schedule;
  schedule.temperature = temperature;
  for (const BitextCorpus* c : corpora) {
    if (c->examples.empty())
      throw DomainError("pair " + c->pair() + " has no examples to sample from");
    schedule.pairs.push_back(c->pair());
    schedule.sizes.push_back(static_cast<Index>(c->examples.size()));
  }
  schedule.probs = temperature_weights(schedule.sizes, temperature);
  return schedule;
}

BatchSampler::BatchSampler(std::vector<const BitextCorpus*> corpora, SamplingSchedule schedule,
                           Index batch_tokens, Rng rng)
    : corpora_(std::move(corpora)),
      schedule_(std::move(schedule)),
      batch_tokens_(batch_tokens),
      rng_(rng) {
  if (batch_tokens_ < 1) throw DomainError("batch_tokens must be >= 1");
  if (schedule_.pairs.size() != corpora_.size())
    throw ConfigError("sampling schedule covers " + std::to_string(schedule_.pairs.size()) +
                      " pairs but " + std::to_string(corpora_.size()) + " corpora were given");
  for (std::size_t i = 0; i < corpora_.size(); ++i) {
    if (schedule_.pairs[i] != corpora_[i]->pair())
      throw ConfigError("schedule pair '" + schedule_.pairs[i] + "' does not match corpus '" +
                        corpora_[i]->pair() + "'");
    if (corpora_[i]->examples.empty())
      throw DomainError("pair " + corpora_[i]->pair() + " has no examples to sample from");
  }
  cumulative_.resize(schedule_.probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < schedule_.probs.size(); ++i) {
    acc += schedule_.probs[i];
    cumulative_[i] = acc;
  }
}

Batch BatchSampler::next() {
  Batch batch;
  while (batch.token_count < batch_tokens_) {
    double u = rng_.uniform();
    std::size_t pair = static_cast<std::size_t>(
        std::lower_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
    if (pair >= corpora_.size()) pair = corpora_.size() - 1;
    const BitextCorpus& corpus = *corpora_[pair];
    std::size_t idx =
        static_cast<std::size_t>(rng_.randint(static_cast<std::int64_t>(corpus.examples.size())));
    const Example& ex = corpus.examples[idx];
    batch.items.push_back({pair, idx});
    batch.token_count += static_cast<Index>(std::max(ex.src.size(), ex.tgt.size()));
  }
  return batch;
}

CorpusSplits split_corpus(const BitextCorpus& corpus, std::size_t valid_n, std::size_t test_n,
                          Rng& rng) {
  if (valid_n + test_n >= corpus.examples.size())
    throw DomainError("cannot hold out " + std::to_string(valid_n) + "+" +
                      std::to_string(test_n) + " examples from a corpus of " +
                      std::to_string(corpus.examples.size()));
  std::vector<std::size_t> order(corpus.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.randint(static_cast<std::int64_t>(i)))]);

  CorpusSplits splits;
  auto seed = [&](BitextCorpus& out, const char* split) {
    out.src_lang = corpus.src_lang;
    out.tgt_lang = corpus.tgt_lang;
    out.split = split;
  };
  seed(splits.valid, "valid");
  seed(splits.test, "test");
  seed(splits.train, "train");
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Example& ex = corpus.examples[order[i]];
    if (i < valid_n)
      splits.valid.examples.push_back(ex);
    else if (i < valid_n + test_n)
      splits.test.examples.push_back(ex);
    else
      splits.train.examples.push_back(ex);
  }
  return splits;
}

}  // namespace famadapt
