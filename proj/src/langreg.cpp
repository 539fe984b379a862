#include "famadapt/langreg.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "famadapt/error.hpp"

namespace famadapt {

namespace {

std::vector<std::string> split_columns(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> cols;
  std::string col;
  while (is >> col) cols.push_back(col);
  return cols;
}

}  // namespace

LanguageRegistry LanguageRegistry::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open registry file '" + path + "'");
  return parse(in, path);
}

LanguageRegistry LanguageRegistry::parse(std::istream& in, const std::string& origin) {
  LanguageRegistry reg;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::vector<std::string> cols = split_columns(line);
    if (cols.empty()) continue;
    if (cols.size() != 5)
      fail("expected 5 columns (code family script seen|unseen size), got " +
           std::to_string(cols.size()));
    LanguageInfo info;
    info.code = cols[0];
    info.family = cols[1];
    info.script = cols[2];
    if (cols[3] == "seen")
      info.seen = true;
    else if (cols[3] == "unseen")
      info.seen = false;
    else
      fail("column 4 must be 'seen' or 'unseen', got '" + cols[3] + "'");
    try {
      std::size_t used = 0;
      info.train_size = std::stoll(cols[4], &used);
      if (used != cols[4].size()) throw std::invalid_argument(cols[4]);
    } catch (const std::exception&) {
      fail("column 5 must be an integer size, got '" + cols[4] + "'");
    }
    if (info.train_size < 0) fail("train size must be nonnegative");
    if (reg.by_code_.count(info.code)) fail("duplicate language code '" + info.code + "'");
    reg.by_code_[info.code] = reg.langs_.size();
    reg.langs_.push_back(std::move(info));
  }
  if (reg.langs_.empty())
    throw ParseError(origin + ": registry lists no languages");
  return reg;
}

bool LanguageRegistry::contains(const std::string& code) const { return by_code_.count(code) > 0; }

const LanguageInfo& LanguageRegistry::at(const std::string& code) const {
  auto it = by_code_.find(code);
  if (it == by_code_.end()) throw IndexError("unknown language code '" + code + "'");
  return langs_[it->second];
}

std::vector<std::string> LanguageRegistry::codes() const {
  std::vector<std::string> out;
  out.reserve(langs_.size());
  for (const auto& l : langs_) out.push_back(l.code);
  return out;
}

std::string grouping_kind_name(GroupingKind kind) {
  switch (kind) {
    case GroupingKind::family: return "family";
    case GroupingKind::agnostic: return "agnostic";
    case GroupingKind::pair: return "pair";
    case GroupingKind::random: return "random";
    case GroupingKind::custom: return "custom";
  }
  throw ContractError("unhandled grouping kind");
}

GroupingKind grouping_kind_from_name(const std::string& name) {
  if (name == "family") return GroupingKind::family;
  if (name == "agnostic") return GroupingKind::agnostic;
  if (name == "pair") return GroupingKind::pair;
  if (name == "random") return GroupingKind::random;
  if (name == "custom") return GroupingKind::custom;
  throw ParseError("unknown grouping kind '" + name +
                   "' (expected family|agnostic|pair|random|custom)");
}

const std::string& GroupingScheme::group_of(const std::string& code) const {
  for (const auto& [id, members] : groups)
    if (std::binary_search(members.begin(), members.end(), code)) return id;
  throw IndexError("language '" + code + "' belongs to no group");
}

namespace {

void check_partition(const LanguageRegistry& registry,
                     const std::map<std::string, std::vector<std::string>>& groups) {
  std::set<std::string> covered;
  for (const auto& [id, members] : groups) {
    if (members.empty()) throw CoverageError("group '" + id + "' is empty");
    for (const auto& code : members) {
      if (!registry.contains(code))
        throw CoverageError("group '" + id + "' lists unknown language '" + code + "'");
      if (!covered.insert(code).second)
        throw CoverageError("language '" + code + "' appears in more than one group");
    }
  }
  for (const auto& code : registry.codes())
    if (!covered.count(code))
      throw CoverageError("language '" + code + "' is missing from the grouping");
}

}  // namespace

GroupingScheme build_grouping(const LanguageRegistry& registry, GroupingKind kind, Rng& rng,
                              const std::map<std::string, std::vector<std::string>>* custom) {
  GroupingScheme scheme;
  scheme.kind = kind;
  switch (kind) {
    case GroupingKind::family:
      for (const auto& lang : registry.languages())
        scheme.groups[lang.family].push_back(lang.code);
      break;
    case GroupingKind::agnostic:
      scheme.groups["all"] = registry.codes();
      break;
    case GroupingKind::pair:
      for (const auto& lang : registry.languages()) scheme.groups[lang.code] = {lang.code};
      break;
    case GroupingKind::random: {
      // Same group-size profile as the family grouping, membership shuffled.
      Rng local(0);
      GroupingScheme family = build_grouping(registry, GroupingKind::family, local);
      std::vector<std::size_t> profile;
      for (const auto& [id, members] : family.groups) profile.push_back(members.size());
      std::vector<std::string> codes = registry.codes();
      for (std::size_t i = codes.size(); i > 1; --i)
        std::swap(codes[i - 1], codes[static_cast<std::size_t>(rng.randint(static_cast<std::int64_t>(i)))]);
      std::size_t next = 0;
      for (std::size_t g = 0; g < profile.size(); ++g) {
        auto& members = scheme.groups["random." + std::to_string(g)];
        for (std::size_t k = 0; k < profile[g]; ++k) members.push_back(codes[next++]);
      }
      break;
    }
    case GroupingKind::custom:
      if (custom == nullptr)
        throw ConfigError("custom grouping requested without providing groups");
      check_partition(registry, *custom);
      scheme.groups = *custom;
      break;
  }
  if (kind != GroupingKind::custom && custom != nullptr)
    throw ConfigError("explicit groups are only accepted with kind=custom");
  for (auto& [id, members] : scheme.groups) std::sort(members.begin(), members.end());
  check_partition(registry, scheme.groups);
  return scheme;
}

void save_grouping(const GroupingScheme& scheme, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write grouping file '" + path + "'");
  out << "# kind: " << grouping_kind_name(scheme.kind) << "\n";
  for (const auto& [id, members] : scheme.groups)
    for (const auto& code : members) out << code << ' ' << id << '\n';
  if (!out) throw IoError("failed writing grouping file '" + path + "'");
}

GroupingScheme load_grouping(const std::string& path, const LanguageRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grouping file '" + path + "'");
  GroupingKind kind = GroupingKind::custom;
  std::map<std::string, std::vector<std::string>> groups;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("# kind:", 0) == 0) {
      std::string name = line.substr(7);
      name.erase(0, name.find_first_not_of(' '));
      kind = grouping_kind_from_name(name);
      continue;
    }
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::vector<std::string> cols = split_columns(line);
    if (cols.empty()) continue;
    if (cols.size() != 2)
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": expected 'code group_id', got " + std::to_string(cols.size()) +
                       " columns");
    groups[cols[1]].push_back(cols[0]);
  }
  Rng unused(0);
  GroupingScheme scheme = build_grouping(registry, GroupingKind::custom, unused, &groups);
  scheme.kind = kind;
  return scheme;
}

Index backbone_param_count(const ModelConfig& cfg) {
  const Index h = cfg.model_dim, ff = cfg.ff_dim;
  const Index attn = 4 * h * h + 4 * h + 2 * h;          // q,k,v,o + biases + norm
  const Index ffblk = h * ff + ff + ff * h + h + 2 * h;  // two projections + norm
  return cfg.vocab_size * h + cfg.enc_layers * (attn + ffblk) +
         cfg.dec_layers * (2 * attn + ffblk);
}

BudgetReport budget_report(const ModelConfig& model_cfg, const AdapterConfig& adapter_cfg,
                           const GroupingScheme& scheme) {
  BudgetReport report;
  const Index per_adapter = adapter_param_count(adapter_cfg);
  report.per_set = (model_cfg.enc_layers + model_cfg.dec_layers) * per_adapter +
                   (model_cfg.use_embedding_adapters ? 2 * per_adapter : 0);
  report.num_groups = static_cast<Index>(scheme.num_groups());
  report.total = report.per_set * report.num_groups;
  report.backbone = backbone_param_count(model_cfg);
  report.trainable_fraction =
      report.backbone > 0 ? static_cast<double>(report.total) / static_cast<double>(report.backbone)
                          : 0.0;
  return report;
}

std::string budget_report_text(const BudgetReport& report) {
  std::ostringstream os;
  os << "adapter parameters per set:  " << report.per_set << "\n"
     << "groups:                      " << report.num_groups << "\n"
     << "adapter parameters total:    " << report.total << "\n"
     << "backbone parameters:         " << report.backbone << "\n"
     << "trainable fraction:          " << report.trainable_fraction << "\n";
  return os.str();
}

}  // namespace famadapt
