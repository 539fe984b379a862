#include "famadapt/evalgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "famadapt/error.hpp"

namespace famadapt {

namespace {

// Attaches a set for the duration of a decode and puts the previous one back,
// so decoding with one group's adapters never disturbs the caller's state.
class AdapterSwap {
 public:
  AdapterSwap(Seq2SeqModel& model, AdapterSet* set) : model_(model), prev_(model.active_adapters()) {
    model_.attach_adapter_set(set);
  }
  ~AdapterSwap() { model_.attach_adapter_set(prev_); }
  AdapterSwap(const AdapterSwap&) = delete;
  AdapterSwap& operator=(const AdapterSwap&) = delete;

 private:
  Seq2SeqModel& model_;
  AdapterSet* prev_;
};

std::vector<double> next_logprobs(Seq2SeqModel& model, const Tensor& enc_out,
                                  const std::vector<TokenId>& prefix, TokenId lang_tag) {
  std::vector<TokenId> input;
  input.reserve(prefix.size() + 1);
  input.push_back(lang_tag);
  input.insert(input.end(), prefix.begin(), prefix.end());
  const Tensor states = model.decode_states(enc_out, input, false);
  const Tensor logits = model.output_logits(states);
  const Index vocab = logits.dim(1);
  const double* row = logits.values().data() + (logits.dim(0) - 1) * vocab;
  double peak = row[0];
  for (Index v = 1; v < vocab; ++v) peak = std::max(peak, row[v]);
  double sum = 0.0;
  for (Index v = 0; v < vocab; ++v) sum += std::exp(row[v] - peak);
  const double lse = peak + std::log(sum);
  std::vector<double> out(static_cast<std::size_t>(vocab));
  for (Index v = 0; v < vocab; ++v) out[static_cast<std::size_t>(v)] = row[v] - lse;
  return out;
}

bool lex_smaller(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

void check_decode_args(const Seq2SeqModel& model, Index beam, Index max_len, TokenId eos_id) {
  if (beam < 1) throw DomainError("beam width must be >= 1");
  if (max_len < 1) throw DomainError("max_len must be >= 1");
  if (eos_id < 0 || eos_id >= model.config().vocab_size) {
    throw ConfigError("eos id " + std::to_string(eos_id) + " outside the model vocabulary");
  }
}

}  // namespace

double length_normalized_score(const Hypothesis& h, double length_penalty) {
  const double len = static_cast<double>(h.ids.size()) + (h.finished ? 1.0 : 0.0);
  if (len <= 0.0) throw DomainError("cannot score a hypothesis of length zero");
  return h.logprob / std::pow(len, length_penalty);
}

std::vector<TokenId> greedy_decode(Seq2SeqModel& model, AdapterSet* adapters,
                                   std::span<const TokenId> src, TokenId lang_tag, Index max_len,
                                   TokenId eos_id) {
  check_decode_args(model, 1, max_len, eos_id);
  AdapterSwap swap(model, adapters);
  const Tensor enc_out = model.encode(src, lang_tag, false);
  std::vector<TokenId> out;
  while (static_cast<Index>(out.size()) < max_len) {
    const auto lp = next_logprobs(model, enc_out, out, lang_tag);
    TokenId arg = 0;
    for (std::size_t v = 1; v < lp.size(); ++v) {
      if (lp[v] > lp[static_cast<std::size_t>(arg)]) arg = static_cast<TokenId>(v);
    }
    if (arg == eos_id) break;
    out.push_back(arg);
  }
  return out;
}

Hypothesis beam_search(Seq2SeqModel& model, AdapterSet* adapters, std::span<const TokenId> src,
                       TokenId lang_tag, Index beam, Index max_len, double length_penalty,
                       TokenId eos_id) {
  check_decode_args(model, beam, max_len, eos_id);
  AdapterSwap swap(model, adapters);
  const Tensor enc_out = model.encode(src, lang_tag, false);

  // A candidate's ids include the token that produced it, eos too, so the
  // tie order within one step is by token id, the same order greedy uses.
  // Only candidates that win a beam slot retire to the pool when that token
  // is eos; the rest are dropped. This is what makes beam=1 with a zero
  // length penalty trace greedy exactly, exact logit ties included.
  const auto better = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return lex_smaller(a.ids, b.ids);
  };

  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> pool;
  for (Index step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(model.config().vocab_size));
    for (const Hypothesis& h : live) {
      const auto lp = next_logprobs(model, enc_out, h.ids, lang_tag);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        Hypothesis next{h.ids, h.logprob + lp[v], false};
        next.ids.push_back(static_cast<TokenId>(v));
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);
    if (static_cast<Index>(candidates.size()) > beam) {
      candidates.resize(static_cast<std::size_t>(beam));
    }
    live.clear();
    for (Hypothesis& c : candidates) {
      if (c.ids.back() == eos_id) {
        c.ids.pop_back();
        c.finished = true;
        pool.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }
  pool.insert(pool.end(), live.begin(), live.end());  // still open at the cap

  const Hypothesis* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const Hypothesis& h : pool) {
    const double score = length_normalized_score(h, length_penalty);
    if (best == nullptr || score > best_score ||
        (score == best_score && lex_smaller(h.ids, best->ids))) {
      best = &h;
      best_score = score;
    }
  }
  return *best;
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < 4; ++n) {
    matches[static_cast<std::size_t>(n)] += o.matches[static_cast<std::size_t>(n)];
    totals[static_cast<std::size_t>(n)] += o.totals[static_cast<std::size_t>(n)];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

namespace {

std::map<std::string, Index> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<std::string, Index> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + static_cast<std::size_t>(j)];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuStats bleu_sentence_stats(const std::vector<std::string>& hyp,
                              const std::vector<std::string>& ref) {
  BleuStats stats;
  stats.hyp_len = static_cast<Index>(hyp.size());
  stats.ref_len = static_cast<Index>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    const auto hyp_counts = ngram_counts(hyp, n);
    if (hyp_counts.empty()) continue;
    const auto ref_counts = ngram_counts(ref, n);
    Index total = 0;
    Index matched = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    stats.totals[static_cast<std::size_t>(n - 1)] = total;
    stats.matches[static_cast<std::size_t>(n - 1)] = matched;
  }
  return stats;
}

double bleu_score(const BleuStats& stats) {
  if (stats.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= 4; ++n) {
    const Index total = stats.totals[static_cast<std::size_t>(n - 1)];
    if (total == 0) continue;  // hypothesis too short for this order
    const Index matched = stats.matches[static_cast<std::size_t>(n - 1)];
    ++orders;
    if (matched == 0) {
      if (n == 1) return 0.0;  // no lexical overlap at all
      log_sum += std::log(1.0 / static_cast<double>(total));  // add-one numerator
    } else {
      log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
  }
  if (orders == 0) return 0.0;
  const double precision = std::exp(log_sum / static_cast<double>(orders));
  double brevity = 1.0;
  if (stats.hyp_len < stats.ref_len) {
    brevity = std::exp(1.0 - static_cast<double>(stats.ref_len) / static_cast<double>(stats.hyp_len));
  }
  return 100.0 * precision * brevity;
}

double bleu_corpus(const std::vector<std::vector<std::string>>& hyps,
                   const std::vector<std::vector<std::string>>& refs) {
  if (hyps.size() != refs.size()) {
    throw DomainError("hypothesis count " + std::to_string(hyps.size()) +
                      " does not match reference count " + std::to_string(refs.size()));
  }
  if (hyps.empty()) throw DomainError("cannot score an empty corpus");
  BleuStats stats;
  for (std::size_t i = 0; i < hyps.size(); ++i) stats += bleu_sentence_stats(hyps[i], refs[i]);
  return bleu_score(stats);
}

std::vector<std::string> bleu_tokenize(const std::string& raw) {
  std::vector<std::string> tokens;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c) && c != '\'' && c != '-' && c != '_') {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else {
      cur += static_cast<char>(c);
    }
  }
  flush();
  return tokens;
}

double bleu_corpus_raw(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  std::vector<std::vector<std::string>> h, r;
  h.reserve(hyps.size());
  r.reserve(refs.size());
  for (const auto& line : hyps) h.push_back(bleu_tokenize(line));
  for (const auto& line : refs) r.push_back(bleu_tokenize(line));
  return bleu_corpus(h, r);
}

namespace {

std::string format_number(double v, int precision = 3) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

// Minimal grouped bar chart, negative values allowed. Everything is inline so
// the file stands alone.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& group_labels,
                          const std::vector<std::string>& series_labels,
                          const std::vector<std::vector<double>>& values) {
  static const char* kPalette[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756",
                                   "#72b7b2", "#b279a2", "#9d755d", "#bab0ac"};
  const std::size_t groups = group_labels.size();
  const std::size_t series = series_labels.size();

  double lo = 0.0, hi = 0.0;
  for (const auto& row : values) {
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) hi = lo + 1.0;
  const double pad = 0.08 * (hi - lo);
  hi += pad;
  if (lo < 0.0) lo -= pad;

  const double bar_w = 18.0, gap = 16.0;
  const double plot_left = 70.0, plot_top = 40.0, plot_h = 260.0;
  const double group_w = static_cast<double>(series) * bar_w + gap;
  const double plot_w = std::max(200.0, static_cast<double>(groups) * group_w);
  const double width = plot_left + plot_w + 150.0;  // room for the legend
  const double height = plot_top + plot_h + 70.0;

  const auto y_of = [&](double v) { return plot_top + (hi - v) / (hi - lo) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<text x=\"" << plot_left << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";

  for (int tick = 0; tick <= 5; ++tick) {
    const double v = lo + (hi - lo) * static_cast<double>(tick) / 5.0;
    const double y = y_of(v);
    svg << "<line x1=\"" << plot_left << "\" y1=\"" << y << "\" x2=\"" << plot_left + plot_w
        << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << plot_left - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\">" << format_number(v, 2) << "</text>\n";
  }
  if (lo < 0.0) {
    svg << "<line x1=\"" << plot_left << "\" y1=\"" << y_of(0.0) << "\" x2=\""
        << plot_left + plot_w << "\" y2=\"" << y_of(0.0) << "\" stroke=\"#666\"/>\n";
  }

  for (std::size_t g = 0; g < groups; ++g) {
    const double x0 = plot_left + static_cast<double>(g) * group_w + gap / 2.0;
    for (std::size_t s = 0; s < series; ++s) {
      const double v = values[g][s];
      const double y_base = y_of(0.0);  // bars grow away from zero in either direction
      const double y_val = y_of(v);
      svg << "<rect x=\"" << x0 + static_cast<double>(s) * bar_w << "\" y=\""
          << std::min(y_val, y_base) << "\" width=\"" << bar_w - 2.0 << "\" height=\""
          << std::max(std::abs(y_base - y_val), 0.5) << "\" fill=\"" << kPalette[s % 8]
          << "\"/>\n";
    }
    svg << "<text x=\"" << x0 + static_cast<double>(series) * bar_w / 2.0 << "\" y=\""
        << plot_top + plot_h + 16 << "\" text-anchor=\"middle\">" << group_labels[g]
        << "</text>\n";
  }

  for (std::size_t s = 0; s < series; ++s) {
    const double y = plot_top + 10.0 + static_cast<double>(s) * 18.0;
    svg << "<rect x=\"" << plot_left + plot_w + 16 << "\" y=\"" << y - 10 << "\" width=\"12\""
        << " height=\"12\" fill=\"" << kPalette[s % 8] << "\"/>\n";
    svg << "<text x=\"" << plot_left + plot_w + 34 << "\" y=\"" << y << "\">" << series_labels[s]
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

ReportFiles report_emit(const RegimeResults& results, const LanguageRegistry& registry,
                        const std::map<std::string, BudgetReport>& budgets,
                        const std::string& out_dir) {
  if (results.empty()) throw DomainError("no results to report");
  for (const auto& [regime, by_lang] : results) {
    for (const auto& info : registry.languages()) {
      if (by_lang.find(info.code) == by_lang.end()) {
        throw CoverageError("regime '" + regime + "' has no result for language '" + info.code +
                            "'");
      }
    }
    for (const auto& [code, bleu] : by_lang) {
      if (!registry.contains(code)) {
        throw CoverageError("regime '" + regime + "' reports unknown language '" + code + "'");
      }
    }
  }

  std::filesystem::create_directories(out_dir);
  std::vector<std::string> regimes;
  for (const auto& [regime, by_lang] : results) regimes.push_back(regime);
  const std::string baseline =
      results.count("pair") ? std::string("pair") : regimes.front();

  ReportFiles files;
  const auto emit = [&](const std::string& stem, const std::string& tsv,
                        const std::string& svg) {
    const std::string tsv_path = out_dir + "/" + stem + ".tsv";
    const std::string svg_path = out_dir + "/" + stem + ".svg";
    write_text(tsv_path, tsv);
    write_text(svg_path, svg);
    files.tsv_paths.push_back(tsv_path);
    files.svg_paths.push_back(svg_path);
  };

  // (a) BLEU per pair.
  {
    std::ostringstream tsv;
    tsv << "pair";
    for (const auto& r : regimes) tsv << '\t' << r;
    tsv << '\n';
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
    for (const auto& info : registry.languages()) {
      tsv << "en-" << info.code;
      values.emplace_back();
      labels.push_back(info.code);
      for (const auto& r : regimes) {
        const double b = results.at(r).at(info.code);
        tsv << '\t' << format_number(b);
        values.back().push_back(b);
      }
      tsv << '\n';
    }
    emit("bleu_per_pair", tsv.str(), svg_bar_chart("BLEU per pair", labels, regimes, values));
  }

  // Per-regime averages over an arbitrary subset of languages.
  const auto subset_avg = [&](const std::string& regime, auto&& keep) {
    double sum = 0.0;
    int n = 0;
    for (const auto& info : registry.languages()) {
      if (!keep(info)) continue;
      sum += results.at(regime).at(info.code);
      ++n;
    }
    return n ? sum / n : 0.0;
  };

  // (b) Family averages and deltas against the baseline regime.
  {
    std::vector<std::string> families;
    for (const auto& info : registry.languages()) {
      if (std::find(families.begin(), families.end(), info.family) == families.end()) {
        families.push_back(info.family);
      }
    }
    std::sort(families.begin(), families.end());

    std::ostringstream tsv;
    tsv << "family\tregime\tavg_bleu\tdelta_vs_" << baseline << '\n';
    std::vector<std::vector<double>> deltas;
    for (const auto& family : families) {
      const auto in_family = [&](const LanguageInfo& i) { return i.family == family; };
      const double base = subset_avg(baseline, in_family);
      deltas.emplace_back();
      for (const auto& r : regimes) {
        const double avg = subset_avg(r, in_family);
        tsv << family << '\t' << r << '\t' << format_number(avg) << '\t'
            << format_number(avg - base) << '\n';
        deltas.back().push_back(avg - base);
      }
    }
    emit("family_delta", tsv.str(),
         svg_bar_chart("Family avg BLEU delta vs " + baseline, families, regimes, deltas));
  }

  // (c) Seen/unseen averages and deltas.
  {
    std::ostringstream tsv;
    tsv << "subset\tregime\tavg_bleu\tdelta_vs_" << baseline << '\n';
    std::vector<std::string> subsets;
    std::vector<std::vector<double>> deltas;
    for (const bool seen : {true, false}) {
      int population = 0;
      for (const auto& info : registry.languages()) population += (info.seen == seen);
      if (!population) continue;
      const auto in_subset = [&](const LanguageInfo& i) { return i.seen == seen; };
      const double base = subset_avg(baseline, in_subset);
      subsets.emplace_back(seen ? "seen" : "unseen");
      deltas.emplace_back();
      for (const auto& r : regimes) {
        const double avg = subset_avg(r, in_subset);
        tsv << subsets.back() << '\t' << r << '\t' << format_number(avg) << '\t'
            << format_number(avg - base) << '\n';
        deltas.back().push_back(avg - base);
      }
    }
    emit("seen_unseen", tsv.str(),
         svg_bar_chart("Seen/unseen avg BLEU delta vs " + baseline, subsets, regimes, deltas));
  }

  // (d) Parameter budgets.
  {
    std::ostringstream tsv;
    tsv << "regime\tper_set\tnum_groups\ttotal\tbackbone\ttrainable_fraction\n";
    std::vector<std::string> labels;
    std::vector<std::vector<double>> totals;
    for (const auto& [regime, b] : budgets) {
      tsv << regime << '\t' << b.per_set << '\t' << b.num_groups << '\t' << b.total << '\t'
          << b.backbone << '\t' << format_number(b.trainable_fraction, 6) << '\n';
      labels.push_back(regime);
      totals.push_back({static_cast<double>(b.total)});
    }
    emit("param_budget", tsv.str(),
         svg_bar_chart("Trainable parameters per regime", labels, {"total"}, totals));
  }

  return files;
}

}  // namespace famadapt
