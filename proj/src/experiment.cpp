#include "famadapt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace famadapt {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(s.substr(start));
      break;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

long long to_int(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": expected an integer, got '" + s + "'");
  }
}

std::uint64_t to_u64(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": expected a non-negative integer, got '" + s + "'");
  }
}

double to_real(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": expected a number, got '" + s + "'");
  }
}

bool to_bool(const std::string& s, const std::string& where) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw ParseError(where + ": expected a boolean (0/1/true/false), got '" + s + "'");
}

// Scalar keys in spec-file order; also drives the env-override scan.
const std::vector<std::string>& scalar_keys() {
  static const std::vector<std::string> keys = {
      "data",          "registry",       "model_dim",
      "ff_dim",        "heads",          "enc_layers",
      "dec_layers",    "max_len",        "embedding_adapters",
      "bottleneck",    "adapter_init_scale", "max_updates",
      "warmup_updates", "max_lr",        "label_smoothing",
      "update_frequency", "eval_interval_updates", "patience",
      "dropout",       "batch_tokens",   "temperature",
      "denoise_updates", "pca_dim",      "components",
      "embed_sentences", "eval_beam",    "length_penalty",
      "eval_split"};
  return keys;
}

const std::vector<std::string>& list_keys() {
  static const std::vector<std::string> keys = {"regime", "seed", "sweep_bottleneck",
                                                "sweep_dropout"};
  return keys;
}

bool apply_scalar(ExperimentSpec& spec, const std::string& key, const std::string& value,
                  const std::string& where) {
  if (key == "data") spec.data = value;
  else if (key == "registry") spec.registry = value;
  else if (key == "model_dim") spec.model_dim = to_int(value, where);
  else if (key == "ff_dim") spec.ff_dim = to_int(value, where);
  else if (key == "heads") spec.heads = to_int(value, where);
  else if (key == "enc_layers") spec.enc_layers = to_int(value, where);
  else if (key == "dec_layers") spec.dec_layers = to_int(value, where);
  else if (key == "max_len") spec.max_len = to_int(value, where);
  else if (key == "embedding_adapters") spec.embedding_adapters = to_bool(value, where);
  else if (key == "bottleneck") spec.bottleneck = to_int(value, where);
  else if (key == "adapter_init_scale") spec.adapter_init_scale = to_real(value, where);
  else if (key == "max_updates") spec.train.max_updates = to_int(value, where);
  else if (key == "warmup_updates") spec.train.warmup_updates = to_int(value, where);
  else if (key == "max_lr") spec.train.max_lr = to_real(value, where);
  else if (key == "label_smoothing") spec.train.label_smoothing = to_real(value, where);
  else if (key == "update_frequency") spec.train.update_frequency = to_int(value, where);
  else if (key == "eval_interval_updates") spec.train.eval_interval_updates = to_int(value, where);
  else if (key == "patience") spec.train.patience = to_int(value, where);
  else if (key == "dropout") spec.train.dropout = to_real(value, where);
  else if (key == "batch_tokens") spec.train.batch_tokens = to_int(value, where);
  else if (key == "temperature") spec.train.temperature = to_real(value, where);
  else if (key == "denoise_updates") spec.denoise_updates = to_int(value, where);
  else if (key == "pca_dim") spec.pca_dim = to_int(value, where);
  else if (key == "components") spec.components = to_int(value, where);
  else if (key == "embed_sentences") spec.embed_sentences = to_int(value, where);
  else if (key == "eval_beam") spec.eval_beam = to_int(value, where);
  else if (key == "length_penalty") spec.length_penalty = to_real(value, where);
  else if (key == "eval_split") spec.eval_split = value;
  else return false;
  return true;
}

bool apply_list(ExperimentSpec& spec, const std::string& key, const std::string& value,
                const std::string& where) {
  if (key == "regime") spec.regimes.push_back(value);
  else if (key == "seed") spec.seeds.push_back(to_u64(value, where));
  else if (key == "sweep_bottleneck") spec.sweep_bottleneck.push_back(to_int(value, where));
  else if (key == "sweep_dropout") spec.sweep_dropout.push_back(to_real(value, where));
  else return false;
  return true;
}

std::string env_name(const std::string& key) {
  std::string name = "FAMADAPT_";
  for (char c : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

std::string format_real(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

std::string safe_filename(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    out += ok ? c : '_';
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << body;
}

// Must track make_fingerprint in the trainer: everything up to and
// including "|data:" is reproduced here so a resumed cell can tell whether
// an on-disk checkpoint still belongs to the current configuration. The
// resumability test retrains from scratch if this ever drifts, so drift
// shows up as a failing resume assertion rather than silent reuse.
std::string fingerprint_prefix(const ModelConfig& m, const std::string& group_id,
                               bool full_finetune, Index bottleneck, const TrainConfig& cfg) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "famadapt-train-1|model:" << m.vocab_size << '/' << m.model_dim << '/' << m.ff_dim << '/'
      << m.heads << '/' << m.enc_layers << '/' << m.dec_layers << '/' << m.max_len << '/'
      << static_cast<int>(m.adapter_placement) << '/' << m.use_embedding_adapters;
  out << "|group:" << group_id << "|set:";
  if (full_finetune) {
    out << '-';
  } else {
    out << group_id << '/' << bottleneck;
  }
  out << "|full:" << full_finetune << "|cfg:" << cfg.warmup_updates << '/' << cfg.max_lr << '/'
      << cfg.label_smoothing << '/' << cfg.update_frequency << '/' << cfg.eval_interval_updates
      << '/' << cfg.patience << '/' << cfg.seed << '/' << cfg.dropout << '/' << cfg.batch_tokens
      << '/' << cfg.temperature << "|data:";
  return out.str();
}

TrainConfig cell_train_config(const ExperimentSpec& spec, const ExperimentCell& cell) {
  TrainConfig tc = spec.train;
  tc.seed = cell.seed;
  tc.dropout = cell.dropout;
  return tc;
}

std::vector<const BitextCorpus*> corpus_ptrs(const std::vector<BitextCorpus>& corpora) {
  std::vector<const BitextCorpus*> ptrs;
  ptrs.reserve(corpora.size());
  for (const BitextCorpus& c : corpora) ptrs.push_back(&c);
  return ptrs;
}

GroupingScheme build_cell_grouping(const ExperimentSpec& spec, const LoadedDataset& data,
                                   const LanguageRegistry& registry, const ExperimentCell& cell,
                                   Seq2SeqModel& model, const std::string& cell_dir) {
  Rng rng = Rng(cell.seed).fork("grouping");
  if (cell.regime == "full_ft") {
    const std::map<std::string, std::vector<std::string>> custom = {{"all", registry.codes()}};
    return build_grouping(registry, GroupingKind::custom, rng, &custom);
  }
  if (cell.regime == "gmm") {
    // Derive the partition from the data before any adapter training; the
    // confusion table lands next to the checkpoints.
    ClusterReport report = cluster_with_model(spec, data, registry, model, cell.seed);
    write_text_file(cell_dir + "/cluster_report.txt", cluster_report_text(report));
    return report.scheme;
  }
  return build_grouping(registry, grouping_kind_from_name(cell.regime), rng);
}

struct MarkerEntry {
  std::string file;
  std::string fingerprint;
};

bool try_resume(const ExperimentSpec& spec, const LoadedDataset& data,
                const LanguageRegistry& registry, const ExperimentCell& cell,
                const std::string& cell_dir, CellOutcome& outcome) {
  std::ifstream marker(cell_dir + "/cell.done");
  if (!marker) return false;

  std::map<std::string, MarkerEntry> entries;
  std::string line;
  while (std::getline(marker, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols = split(line, '\t');
    if (cols.size() != 3) return false;
    entries[cols[0]] = MarkerEntry{cols[1], cols[2]};
  }
  if (entries.empty()) return false;

  const ModelConfig mcfg = spec.model_config(static_cast<Index>(data.vocab.size()));
  const TrainConfig tc = cell_train_config(spec, cell);
  const bool full = cell.regime == "full_ft";

  try {
    GroupingScheme scheme = load_grouping(cell_dir + "/grouping.txt", registry);
    if (scheme.groups.size() != entries.size()) return false;
    CellOutcome candidate;
    candidate.scheme = scheme;
    candidate.resumed = true;
    for (const auto& [group_id, members] : scheme.groups) {
      auto it = entries.find(group_id);
      if (it == entries.end()) return false;
      const std::string path = cell_dir + "/" + it->second.file;
      Checkpoint ckpt = checkpoint_load(path);
      if (ckpt.fingerprint != it->second.fingerprint) return false;
      const std::string prefix = fingerprint_prefix(mcfg, group_id, full, cell.bottleneck, tc);
      if (ckpt.fingerprint.compare(0, prefix.size(), prefix) != 0) return false;
      candidate.checkpoints[group_id] = path;
    }
    outcome = std::move(candidate);
    return true;
  } catch (const Error&) {
    return false;  // stale or damaged artifacts; retrain the cell
  }
}

BudgetReport cell_budget(const ExperimentSpec& spec, const ExperimentCell& cell,
                         const GroupingScheme& scheme, Index vocab_size) {
  const ModelConfig mcfg = spec.model_config(vocab_size);
  if (cell.regime == "full_ft") {
    BudgetReport report;
    report.per_set = backbone_param_count(mcfg);
    report.num_groups = 1;
    report.total = report.per_set;
    report.backbone = report.per_set;
    report.trainable_fraction = 1.0;
    return report;
  }
  AdapterConfig acfg;
  acfg.model_dim = spec.model_dim;
  acfg.bottleneck = cell.bottleneck;
  acfg.init_scale = spec.adapter_init_scale;
  acfg.placement = mcfg.adapter_placement;
  return budget_report(mcfg, acfg, scheme);
}

}  // namespace

const std::vector<std::string>& known_regimes() {
  static const std::vector<std::string> names = {"family", "agnostic", "pair",
                                                 "random", "gmm",      "full_ft"};
  return names;
}

bool is_known_regime(const std::string& name) {
  const auto& names = known_regimes();
  return std::find(names.begin(), names.end(), name) != names.end();
}

ModelConfig ExperimentSpec::model_config(Index vocab_size) const {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.model_dim = model_dim;
  cfg.ff_dim = ff_dim;
  cfg.heads = heads;
  cfg.enc_layers = enc_layers;
  cfg.dec_layers = dec_layers;
  cfg.max_len = max_len;
  cfg.dropout = train.dropout;
  cfg.use_embedding_adapters = embedding_adapters;
  return cfg;
}

ExperimentSpec ExperimentSpec::parse(std::istream& in, const std::string& origin) {
  ExperimentSpec spec;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(where + ": empty key");
    if (apply_list(spec, key, value, where)) continue;
    if (!seen.insert(key).second) {
      throw ParseError(where + ": key '" + key + "' given more than once");
    }
    if (!apply_scalar(spec, key, value, where)) {
      throw ParseError(where + ": unknown key '" + key + "'");
    }
  }
  return spec;
}

ExperimentSpec ExperimentSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open experiment spec: " + path);
  ExperimentSpec spec = parse(in, path);
  spec.apply_env_overrides();
  return spec;
}

void ExperimentSpec::apply_env_overrides() {
  for (const std::string& key : scalar_keys()) {
    const std::string name = env_name(key);
    if (const char* value = std::getenv(name.c_str())) {
      apply_scalar(*this, key, trim(value), name);
    }
  }
  for (const std::string& key : list_keys()) {
    const std::string name = env_name(key);
    const char* value = std::getenv(name.c_str());
    if (!value) continue;
    if (key == "regime") regimes.clear();
    else if (key == "seed") seeds.clear();
    else if (key == "sweep_bottleneck") sweep_bottleneck.clear();
    else sweep_dropout.clear();
    for (const std::string& piece : split(value, ',')) {
      const std::string entry = trim(piece);
      if (!entry.empty()) apply_list(*this, key, entry, name);
    }
  }
}

void ExperimentSpec::validate() const {
  std::vector<std::string> problems;

  if (data.empty()) {
    problems.push_back("data must name the dataset directory");
  } else if (!fs::is_directory(data)) {
    problems.push_back("data is not a directory: " + data);
  }
  const std::string reg = registry.empty() ? (data.empty() ? "" : data + "/registry.txt")
                                           : registry;
  if (!reg.empty() && !fs::is_regular_file(reg)) {
    problems.push_back("registry file not found: " + reg);
  }

  if (model_dim < 1) problems.push_back("model_dim must be >= 1");
  if (ff_dim < 1) problems.push_back("ff_dim must be >= 1");
  if (heads < 1) problems.push_back("heads must be >= 1");
  if (heads >= 1 && model_dim >= 1 && model_dim % heads != 0) {
    problems.push_back("model_dim must be divisible by heads");
  }
  if (enc_layers < 1) problems.push_back("enc_layers must be >= 1");
  if (dec_layers < 1) problems.push_back("dec_layers must be >= 1");
  if (max_len < 2) problems.push_back("max_len must be >= 2");

  if (bottleneck < 1) problems.push_back("bottleneck must be >= 1");
  for (Index b : sweep_bottleneck) {
    if (b < 1) problems.push_back("sweep_bottleneck entries must be >= 1");
  }
  for (double d : sweep_dropout) {
    if (!(d >= 0.0 && d < 1.0)) problems.push_back("sweep_dropout entries must be in [0, 1)");
  }
  if (!(adapter_init_scale >= 0.0)) problems.push_back("adapter_init_scale must be >= 0");
  if (denoise_updates < 0) problems.push_back("denoise_updates must be >= 0");

  if (pca_dim < 1) problems.push_back("pca_dim must be >= 1");
  if (components < 0) problems.push_back("components must be >= 0");
  if (embed_sentences < 1) problems.push_back("embed_sentences must be >= 1");

  if (eval_beam < 1) problems.push_back("eval_beam must be >= 1");
  if (!(length_penalty >= 0.0)) problems.push_back("length_penalty must be >= 0");
  if (eval_split != "train" && eval_split != "valid" && eval_split != "test") {
    problems.push_back("eval_split must be train, valid or test");
  }

  if (regimes.empty()) problems.push_back("at least one regime is required");
  std::set<std::string> regime_seen;
  for (const std::string& r : regimes) {
    if (!is_known_regime(r)) {
      std::string known;
      for (const std::string& k : known_regimes()) {
        if (!known.empty()) known += ", ";
        known += k;
      }
      problems.push_back("unknown regime '" + r + "' (known: " + known + ")");
    } else if (!regime_seen.insert(r).second) {
      problems.push_back("regime '" + r + "' listed more than once");
    }
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    problems.push_back("seed values must be distinct");
  }

  try {
    train.validate();
  } catch (const ConfigError& e) {
    std::istringstream msg(e.what());
    std::string line;
    std::getline(msg, line);  // drop the "invalid training config:" header
    while (std::getline(msg, line)) {
      if (line.rfind("  - ", 0) == 0) problems.push_back(line.substr(4));
    }
  }

  if (!problems.empty()) {
    std::string msg = "invalid experiment spec:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

LanguageRegistry experiment_registry(const ExperimentSpec& spec, const LoadedDataset& data) {
  if (spec.registry.empty()) return data.registry;
  LanguageRegistry registry = LanguageRegistry::load(spec.registry);
  for (const auto* splits : {&data.train, &data.valid, &data.test}) {
    for (const BitextCorpus& c : *splits) {
      if (!registry.contains(c.tgt_lang)) {
        throw CoverageError("corpus " + c.pair() + " targets '" + c.tgt_lang +
                            "', which the registry does not list");
      }
    }
  }
  return registry;
}

ClusterReport cluster_with_model(const ExperimentSpec& spec, const LoadedDataset& data,
                                 const LanguageRegistry& registry, Seq2SeqModel& model,
                                 std::uint64_t seed) {
  std::map<std::string, std::vector<std::vector<TokenId>>> sentences;
  for (const std::string& code : registry.codes()) {
    const BitextCorpus* corpus = data.find("train", code);
    if (!corpus) {
      throw CoverageError("clustering needs a train corpus for language '" + code + "'");
    }
    const std::size_t n =
        std::min(static_cast<std::size_t>(spec.embed_sentences), corpus->examples.size());
    auto& rows = sentences[code];
    for (std::size_t i = 0; i < n; ++i) rows.push_back(corpus->examples[i].tgt);
  }
  EmbeddingBatch batch = embed_languages(model, sentences, data.vocab);
  Rng cluster_rng = Rng(seed).fork("cluster");
  return cluster_languages(batch, registry, spec.pca_dim, spec.components, cluster_rng);
}

std::vector<ExperimentCell> experiment_grid(const ExperimentSpec& spec) {
  const std::vector<Index> bots =
      spec.sweep_bottleneck.empty() ? std::vector<Index>{spec.bottleneck} : spec.sweep_bottleneck;
  const std::vector<double> drops =
      spec.sweep_dropout.empty() ? std::vector<double>{spec.train.dropout} : spec.sweep_dropout;
  const std::vector<std::uint64_t> seeds =
      spec.seeds.empty() ? std::vector<std::uint64_t>{spec.train.seed}
                         : spec.seeds;

  std::vector<ExperimentCell> cells;
  for (const std::string& regime : spec.regimes) {
    for (Index b : bots) {
      for (double d : drops) {
        for (std::uint64_t s : seeds) {
          ExperimentCell cell;
          cell.regime = regime;
          cell.bottleneck = b;
          cell.dropout = d;
          cell.seed = s;
          cell.label = regime;
          if (bots.size() > 1) cell.label += "-b" + std::to_string(b);
          if (drops.size() > 1) cell.label += "-d" + format_real(d);
          if (seeds.size() > 1) cell.label += "-s" + std::to_string(s);
          cells.push_back(std::move(cell));
        }
      }
    }
  }
  return cells;
}

CellOutcome run_cell(const ExperimentSpec& spec, const LoadedDataset& data,
                     const LanguageRegistry& registry, const ExperimentCell& cell,
                     const std::string& cell_dir, std::ostream* log) {
  if (!is_known_regime(cell.regime)) throw ConfigError("unknown regime '" + cell.regime + "'");
  fs::create_directories(cell_dir);

  CellOutcome outcome;
  if (try_resume(spec, data, registry, cell, cell_dir, outcome)) {
    if (log) *log << "cell " << cell.label << ": resumed from " << cell_dir << "\n";
    return outcome;
  }

  const ModelConfig mcfg = spec.model_config(static_cast<Index>(data.vocab.size()));
  Rng model_rng = Rng(cell.seed).fork("model");
  Seq2SeqModel model(mcfg, model_rng);

  const TrainConfig tc = cell_train_config(spec, cell);
  const std::vector<const BitextCorpus*> train_ptrs = corpus_ptrs(data.train);
  const std::vector<const BitextCorpus*> valid_ptrs = corpus_ptrs(data.valid);

  if (spec.denoise_updates > 0) {
    // Warm the fresh backbone on monolingual reconstruction, seen target
    // languages only, before any adapter or grouping work.
    std::vector<const BitextCorpus*> seen;
    for (const BitextCorpus* c : train_ptrs) {
      if (registry.at(c->tgt_lang).seen) seen.push_back(c);
    }
    TrainConfig dc = tc;
    dc.max_updates = spec.denoise_updates;
    dc.warmup_updates = std::max<Index>(1, std::min(tc.warmup_updates, spec.denoise_updates));
    dc.eval_interval_updates = spec.denoise_updates;
    const double loss = denoising_warmup(model, seen.empty() ? train_ptrs : seen, data.vocab, dc);
    if (log) *log << "cell " << cell.label << ": denoising warm-up loss " << loss << "\n";
  }

  outcome.scheme = build_cell_grouping(spec, data, registry, cell, model, cell_dir);
  save_grouping(outcome.scheme, cell_dir + "/grouping.txt");

  RegimeConfig rc;
  rc.train = tc;
  rc.bottleneck = cell.bottleneck;
  rc.adapter_init_scale = spec.adapter_init_scale;
  rc.full_finetune = cell.regime == "full_ft";
  outcome.groups = train_regime(model, outcome.scheme, train_ptrs, valid_ptrs, data.vocab, rc,
                                cell_dir);

  std::ostringstream marker;
  for (const auto& [group_id, result] : outcome.groups) {
    const std::string file = safe_filename(group_id) + ".ckpt";
    const std::string path = cell_dir + "/" + file;
    checkpoint_save(result.best, path);
    outcome.checkpoints[group_id] = path;
    marker << group_id << '\t' << file << '\t' << result.best.fingerprint << '\n';
  }
  // The marker lands last and atomically, so a killed run never looks done.
  write_text_file(cell_dir + "/cell.done.tmp", marker.str());
  fs::rename(cell_dir + "/cell.done.tmp", cell_dir + "/cell.done");

  if (log) *log << "cell " << cell.label << ": trained " << outcome.groups.size() << " group(s)\n";
  return outcome;
}

RestoredModel restore_checkpoint(const std::string& path) {
  Checkpoint ckpt = checkpoint_load(path);

  const std::vector<std::string> fields = split(ckpt.fingerprint, '|');
  auto field_after = [&](std::size_t index, const std::string& prefix) {
    if (index >= fields.size() || fields[index].compare(0, prefix.size(), prefix) != 0) {
      throw ParseError(path + ": unrecognized checkpoint fingerprint");
    }
    return fields[index].substr(prefix.size());
  };
  if (fields.empty() || fields[0] != "famadapt-train-1") {
    throw ParseError(path + ": unrecognized checkpoint fingerprint");
  }

  const std::vector<std::string> dims = split(field_after(1, "model:"), '/');
  if (dims.size() != 9) throw ParseError(path + ": malformed model description in fingerprint");
  const std::string where = path + " fingerprint";
  RestoredModel restored;
  restored.fingerprint = ckpt.fingerprint;
  restored.group_id = field_after(2, "group:");
  restored.config.vocab_size = to_int(dims[0], where);
  restored.config.model_dim = to_int(dims[1], where);
  restored.config.ff_dim = to_int(dims[2], where);
  restored.config.heads = to_int(dims[3], where);
  restored.config.enc_layers = to_int(dims[4], where);
  restored.config.dec_layers = to_int(dims[5], where);
  restored.config.max_len = to_int(dims[6], where);
  restored.config.adapter_placement = static_cast<AdapterPlacement>(to_int(dims[7], where));
  restored.config.use_embedding_adapters = to_bool(dims[8], where);
  restored.config.validate();
  restored.full_finetune = to_bool(field_after(4, "full:"), where);

  Rng scratch(0);  // every tensor is overwritten below
  restored.model = std::make_unique<Seq2SeqModel>(restored.config, scratch);

  const std::string set_desc = field_after(3, "set:");
  if (set_desc != "-") {
    const std::size_t slash = set_desc.rfind('/');
    if (slash == std::string::npos) {
      throw ParseError(path + ": malformed adapter description in fingerprint");
    }
    const std::string set_id = set_desc.substr(0, slash);
    const Index bottleneck = to_int(set_desc.substr(slash + 1), where);
    Rng adapter_scratch(0);
    restored.adapters = std::make_unique<AdapterSet>(
        make_adapter_set(*restored.model, bottleneck, 0.0, set_id, adapter_scratch));
  }

  std::map<std::string, Parameter*> params;
  for (Parameter* p : restored.model->backbone_parameters()) params.emplace(p->name, p);
  if (restored.adapters) {
    for (Parameter* p : restored.adapters->parameters()) params.emplace(p->name, p);
  }
  if (params.size() != ckpt.tensors.size()) {
    throw ConfigError("checkpoint " + path + " holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors, the described model expects " + std::to_string(params.size()));
  }
  for (auto& [name, p] : params) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw ConfigError("checkpoint " + path + " is missing tensor '" + name + "'");
    }
    if (it->second.numel() != p->tensor.numel()) {
      throw ConfigError("checkpoint " + path + " tensor '" + name + "' has wrong size");
    }
    p->tensor.values() = it->second.values();
  }

  restored.model->attach_adapter_set(restored.adapters.get());
  return restored;
}

std::vector<std::string> translate_lines(RestoredModel& restored, const Vocab& vocab,
                                         const std::vector<std::string>& lines,
                                         const std::string& tgt_lang, Index beam,
                                         double length_penalty) {
  if (static_cast<Index>(vocab.size()) != restored.config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                      " entries but the checkpoint was trained with " +
                      std::to_string(restored.config.vocab_size));
  }
  const TokenId tag = vocab.lang_tag(tgt_lang);
  const Index max_len = restored.config.max_len;

  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const std::string& line : lines) {
    const std::vector<TokenId> src = vocab.encode_line(line, TokenizeMode::whitespace);
    std::vector<TokenId> ids;
    if (beam == 1) {
      ids = greedy_decode(*restored.model, restored.adapters.get(), src, tag, max_len);
    } else {
      ids = beam_search(*restored.model, restored.adapters.get(), src, tag, beam, max_len,
                        length_penalty)
                .ids;
    }
    out.push_back(vocab.decode_ids(ids));
  }
  return out;
}

std::map<std::string, double> evaluate_cell(const ExperimentSpec& spec, const LoadedDataset& data,
                                            const LanguageRegistry& registry,
                                            const CellOutcome& outcome) {
  std::map<std::string, RestoredModel> by_group;
  std::map<std::string, double> bleu;

  for (const std::string& code : registry.codes()) {
    const std::string& group = outcome.scheme.group_of(code);
    auto ckpt_it = outcome.checkpoints.find(group);
    if (ckpt_it == outcome.checkpoints.end()) {
      throw CoverageError("no checkpoint recorded for group '" + group + "'");
    }
    auto model_it = by_group.find(group);
    if (model_it == by_group.end()) {
      model_it = by_group.emplace(group, restore_checkpoint(ckpt_it->second)).first;
    }
    RestoredModel& restored = model_it->second;
    if (restored.config.vocab_size != static_cast<Index>(data.vocab.size())) {
      throw ConfigError("checkpoint for group '" + group +
                        "' was trained with a different vocabulary");
    }

    const BitextCorpus* corpus = data.find(spec.eval_split, code);
    if (!corpus) {
      throw CoverageError("no " + spec.eval_split + " corpus for language '" + code + "'");
    }
    const TokenId tag = data.vocab.lang_tag(code);
    const Index max_len = restored.config.max_len;

    std::vector<std::vector<std::string>> hyps;
    std::vector<std::vector<std::string>> refs;
    hyps.reserve(corpus->examples.size());
    refs.reserve(corpus->examples.size());
    for (const Example& ex : corpus->examples) {
      std::vector<TokenId> ids;
      if (spec.eval_beam == 1) {
        ids = greedy_decode(*restored.model, restored.adapters.get(), ex.src, tag, max_len);
      } else {
        ids = beam_search(*restored.model, restored.adapters.get(), ex.src, tag, spec.eval_beam,
                          max_len, spec.length_penalty)
                  .ids;
      }
      std::vector<std::string> hyp;
      hyp.reserve(ids.size());
      for (TokenId id : ids) hyp.push_back(data.vocab.token(id));
      std::vector<std::string> ref;
      ref.reserve(ex.tgt.size());
      for (TokenId id : ex.tgt) ref.push_back(data.vocab.token(id));
      hyps.push_back(std::move(hyp));
      refs.push_back(std::move(ref));
    }
    bleu[code] = bleu_corpus(hyps, refs);
  }
  return bleu;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::string& out_dir,
                                Index workers, std::ostream* log) {
  spec.validate();
  const LoadedDataset data = load_dataset_dir(spec.data);
  const LanguageRegistry registry = experiment_registry(spec, data);

  const std::vector<ExperimentCell> cells = experiment_grid(spec);
  fs::create_directories(out_dir + "/cells");

  ExperimentResult result;
  std::mutex mu;
  std::atomic<std::size_t> cursor{0};
  std::vector<std::exception_ptr> failures;

  const Index n_workers = std::clamp<Index>(workers, 1, static_cast<Index>(cells.size()));
  auto work = [&]() {
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= cells.size()) return;
      const ExperimentCell& cell = cells[i];
      try {
        const std::string cell_dir = out_dir + "/cells/" + cell.label;
        // Per-group training logs land in cell_dir regardless; the shared
        // progress stream is only safe to hand down single-threaded.
        CellOutcome outcome =
            run_cell(spec, data, registry, cell, cell_dir, n_workers == 1 ? log : nullptr);
        std::map<std::string, double> bleu = evaluate_cell(spec, data, registry, outcome);
        BudgetReport budget = cell_budget(spec, cell, outcome.scheme,
                                          static_cast<Index>(data.vocab.size()));
        std::lock_guard<std::mutex> lock(mu);
        if (outcome.resumed) ++result.cells_resumed;
        else ++result.cells_trained;
        result.budgets[cell.label] = budget;
        result.bleu[cell.label] = std::move(bleu);
        if (log) {
          double sum = 0.0;
          for (const auto& [code, score] : result.bleu[cell.label]) sum += score;
          *log << "cell " << cell.label << (outcome.resumed ? " (resumed)" : "") << ": avg BLEU "
               << sum / static_cast<double>(result.bleu[cell.label].size()) << "\n";
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        failures.push_back(std::current_exception());
      }
    }
  };

  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (Index w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (!failures.empty()) std::rethrow_exception(failures.front());

  result.report = report_emit(result.bleu, registry, result.budgets, out_dir + "/report");
  return result;
}

}  // namespace famadapt
