#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "famadapt/adapter.hpp"
#include "famadapt/model.hpp"
#include "famadapt/rng.hpp"

namespace famadapt {

struct LanguageInfo {
  std::string code;
  std::string family;
  std::string script;
  bool seen = true;         // covered by the backbone's pretraining surrogate
  std::int64_t train_size = 0;
};

// Parsed registry file: one language per line, five whitespace-separated
// columns (code, family, script, seen|unseen, train size). '#' starts a
// comment, blank lines are skipped.
class LanguageRegistry {
 public:
  static LanguageRegistry load(const std::string& path);
  static LanguageRegistry parse(std::istream& in, const std::string& origin);

  const std::vector<LanguageInfo>& languages() const { return langs_; }
  std::size_t size() const { return langs_.size(); }
  bool contains(const std::string& code) const;
  const LanguageInfo& at(const std::string& code) const;
  std::vector<std::string> codes() const;

 private:
  std::vector<LanguageInfo> langs_;
  std::map<std::string, std::size_t> by_code_;
};

enum class GroupingKind { family, agnostic, pair, random, custom };

std::string grouping_kind_name(GroupingKind kind);
GroupingKind grouping_kind_from_name(const std::string& name);

// A partition of the registry's languages. Group members are kept sorted so
// schemes compare and serialize deterministically.
struct GroupingScheme {
  GroupingKind kind = GroupingKind::agnostic;
  std::map<std::string, std::vector<std::string>> groups;

  std::size_t num_groups() const { return groups.size(); }
  const std::string& group_of(const std::string& code) const;
};

// kind=family/agnostic/pair are seed-independent; kind=random shuffles the
// languages into the family grouping's size profile; kind=custom validates
// the caller's partition.
GroupingScheme build_grouping(const LanguageRegistry& registry, GroupingKind kind, Rng& rng,
                              const std::map<std::string, std::vector<std::string>>* custom = nullptr);

// One line per language: "code group_id".
void save_grouping(const GroupingScheme& scheme, const std::string& path);
GroupingScheme load_grouping(const std::string& path, const LanguageRegistry& registry);

struct BudgetReport {
  Index per_set = 0;      // trainable parameters in one adapter set
  Index num_groups = 0;
  Index total = 0;        // per_set * num_groups
  Index backbone = 0;     // frozen transformer parameters implied by the config
  double trainable_fraction = 0.0;  // total / backbone
};

// Closed-form parameter count of the backbone a ModelConfig implies; must
// agree exactly with enumerating a built model's parameters.
Index backbone_param_count(const ModelConfig& cfg);

BudgetReport budget_report(const ModelConfig& model_cfg, const AdapterConfig& adapter_cfg,
                           const GroupingScheme& scheme);

std::string budget_report_text(const BudgetReport& report);

}  // namespace famadapt
