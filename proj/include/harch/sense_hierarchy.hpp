#pragma once

// The three-level discourse sense taxonomy (4 / 17 / 28 senses), probability
// vectors over one level, and the data-driven tables that hang off it: the
// connective <-> level-3 sense bijection used for prompting and the reduced
// level-2 label set used for comparisons against older corpora.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harch/error.hpp"
#include "harch/tabular.hpp"

namespace harch {

inline constexpr std::array<int, 3> kLevelSizes = {4, 17, 28};

inline int level_size(int level) {
  if (level < 1 || level > 3) fail(ErrorKind::kLevelMismatch, "level must be 1, 2 or 3");
  return kLevelSizes[static_cast<std::size_t>(level - 1)];
}

struct Sense {
  std::string name;    // without the projection marker
  int level = 0;
  std::string parent;  // empty at level 1
  int index = 0;       // position in the level's canonical order
  bool projected = false;

  // Projected level-3 entries display as "<level-2 name>*".
  std::string display_name() const { return projected ? name + "*" : name; }
};

// A probability vector over one level's canonical order.
struct SenseDistribution {
  int level = 0;
  Eigen::VectorXd values;

  SenseDistribution() = default;
  SenseDistribution(int lvl, Eigen::VectorXd v) : level(lvl), values(std::move(v)) {
    if (values.size() != level_size(level)) {
      fail(ErrorKind::kShapeMismatch, "level-" + std::to_string(level) + " distribution needs " +
                                          std::to_string(level_size(level)) + " entries, got " +
                                          std::to_string(values.size()));
    }
  }

  static SenseDistribution one_hot(int level, int index) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(level_size(level));
    v(index) = 1.0;
    return {level, std::move(v)};
  }

  static SenseDistribution uniform(int level) {
    int n = level_size(level);
    return {level, Eigen::VectorXd::Constant(n, 1.0 / n)};
  }

  double total() const { return values.sum(); }

  bool is_normalized(double tol = 1e-6) const {
    return (values.array() >= 0.0).all() && std::abs(total() - 1.0) <= tol;
  }
};

class SenseHierarchy {
 public:
  SenseHierarchy() = default;

  // Takes senses grouped by level in canonical order; validates parentage and
  // the per-level counts.
  explicit SenseHierarchy(std::vector<Sense> senses) {
    for (auto& s : senses) {
      if (s.level < 1 || s.level > 3) fail(ErrorKind::kMalformedInput, "bad level for " + s.name);
      auto& bucket = levels_[static_cast<std::size_t>(s.level - 1)];
      s.index = static_cast<int>(bucket.size());
      bucket.push_back(std::move(s));
    }
    for (int level = 1; level <= 3; ++level) {
      if (count(level) != level_size(level)) {
        fail(ErrorKind::kWrongCount, "level " + std::to_string(level) + " has " +
                                         std::to_string(count(level)) + " senses, expected " +
                                         std::to_string(level_size(level)));
      }
    }
    for (int level = 1; level <= 3; ++level) {
      auto& names = by_name_[static_cast<std::size_t>(level - 1)];
      for (const auto& s : senses_at(level)) {
        if (!names.emplace(s.name, s.index).second) {
          fail(ErrorKind::kMalformedInput, "duplicate sense " + s.name);
        }
      }
    }
    for (int level = 1; level <= 3; ++level) {
      auto& parents = parent_index_[static_cast<std::size_t>(level - 1)];
      parents.assign(static_cast<std::size_t>(count(level)), -1);
      if (level == 1) {
        for (const auto& s : senses_at(1)) {
          if (!s.parent.empty()) fail(ErrorKind::kMalformedInput, "level-1 sense with parent: " + s.name);
          if (s.projected) fail(ErrorKind::kMalformedInput, "only level-3 senses can be projected");
        }
        continue;
      }
      auto& kids = children_[static_cast<std::size_t>(level - 2)];
      kids.assign(static_cast<std::size_t>(count(level - 1)), {});
      for (const auto& s : senses_at(level)) {
        if (s.projected && level != 3) fail(ErrorKind::kMalformedInput, "only level-3 senses can be projected");
        if (s.projected && s.name != s.parent) {
          fail(ErrorKind::kMalformedInput, "projected sense " + s.name + " must share its parent's name");
        }
        int p = index_of(level - 1, s.parent);
        parents[static_cast<std::size_t>(s.index)] = p;
        kids[static_cast<std::size_t>(p)].push_back(s.index);
      }
    }
    for (int level = 1; level <= 2; ++level) {
      for (const auto& s : senses_at(level)) {
        if (children(level, s.index).empty()) {
          fail(ErrorKind::kMalformedInput, "sense " + s.name + " has no children");
        }
      }
    }
  }

  int count(int level) const {
    return static_cast<int>(levels_.at(static_cast<std::size_t>(level - 1)).size());
  }

  std::span<const Sense> senses_at(int level) const {
    level_size(level);
    return levels_[static_cast<std::size_t>(level - 1)];
  }

  const Sense& sense(int level, int index) const {
    return senses_at(level)[static_cast<std::size_t>(index)];
  }

  // Accepts the display form ("Contrast*") for projected level-3 senses.
  int index_of(int level, std::string_view name) const {
    level_size(level);
    std::string key(name);
    if (level == 3 && key.ends_with('*')) key.pop_back();
    const auto& names = by_name_[static_cast<std::size_t>(level - 1)];
    auto it = names.find(key);
    if (it == names.end()) {
      fail(ErrorKind::kUnknownSenseName,
           "no level-" + std::to_string(level) + " sense named '" + std::string(name) + "'");
    }
    return it->second;
  }

  const Sense& find(int level, std::string_view name) const { return sense(level, index_of(level, name)); }

  // Parent index one level up; -1 at level 1.
  int parent_index(int level, int index) const {
    return parent_index_.at(static_cast<std::size_t>(level - 1)).at(static_cast<std::size_t>(index));
  }

  const Sense& parent(const Sense& s) const {
    if (s.level == 1) fail(ErrorKind::kLevelMismatch, "level-1 senses have no parent");
    return sense(s.level - 1, parent_index(s.level, s.index));
  }

  const std::vector<int>& children(int level, int index) const {
    if (level < 1 || level > 2) fail(ErrorKind::kLevelMismatch, "only levels 1 and 2 have children");
    return children_[static_cast<std::size_t>(level - 1)].at(static_cast<std::size_t>(index));
  }

  // The level-3 stand-in for a level-2 sense without PDTB 3.0 subtypes.
  const Sense& project_l2_to_l3(const Sense& l2) const {
    if (l2.level != 2) fail(ErrorKind::kLevelMismatch, l2.name + " is not a level-2 sense");
    const auto& kids = children(2, l2.index);
    for (int k : kids) {
      const auto& child = sense(3, k);
      if (!child.projected) {
        fail(ErrorKind::kHasRealChildren, l2.name + " has level-3 sense " + child.name);
      }
    }
    return sense(3, kids.front());
  }

  // Sums each sense's mass into its parent.
  SenseDistribution aggregate_up(const SenseDistribution& dist) const {
    if (dist.level < 2 || dist.level > 3) {
      fail(ErrorKind::kLevelMismatch, "aggregate_up needs a level-2 or level-3 distribution");
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(count(dist.level - 1));
    for (int i = 0; i < dist.values.size(); ++i) out(parent_index(dist.level, i)) += dist.values(i);
    return {dist.level - 1, std::move(out)};
  }

  // Serialized form: one header line then one line per sense, level by level.
  std::string serialize() const {
    std::vector<Row> rows{{"level", "name", "parent", "projected"}};
    for (int level = 1; level <= 3; ++level) {
      for (const auto& s : senses_at(level)) {
        rows.push_back({std::to_string(level), s.name, s.parent, s.projected ? "1" : "0"});
      }
    }
    return format_delimited(rows, '\t');
  }

  static SenseHierarchy parse(std::string_view text) {
    auto rows = parse_delimited(text, '\t');
    if (rows.empty() || rows[0] != Row{"level", "name", "parent", "projected"}) {
      fail(ErrorKind::kMalformedInput, "hierarchy file needs header level/name/parent/projected");
    }
    std::vector<Sense> senses;
    int last_level = 1;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() != 4) fail(ErrorKind::kMalformedInput, "hierarchy line " + std::to_string(i + 1));
      Sense s;
      s.level = std::stoi(r[0]);
      if (s.level < last_level) fail(ErrorKind::kMalformedInput, "hierarchy rows must be grouped by level");
      last_level = s.level;
      s.name = r[1];
      s.parent = r[2];
      if (r[3] != "0" && r[3] != "1") fail(ErrorKind::kMalformedInput, "projected must be 0 or 1");
      s.projected = r[3] == "1";
      senses.push_back(std::move(s));
    }
    return SenseHierarchy(std::move(senses));
  }

  static SenseHierarchy load(const std::filesystem::path& path) { return parse(read_file(path)); }

 private:
  std::array<std::vector<Sense>, 3> levels_;
  std::array<std::map<std::string, int, std::less<>>, 3> by_name_;
  std::array<std::vector<int>, 3> parent_index_;
  std::array<std::vector<std::vector<int>>, 2> children_;
};

// Level-1 order follows the corpus statistics table; level-2/3 order follows
// the per-sense statistics table, with projected entries in place of the
// level-2 senses that have no level-3 subtypes.
inline SenseHierarchy build_default_hierarchy() {
  struct Family {
    const char* l2;
    std::vector<const char*> l3;  // empty: projected
  };
  struct Top {
    const char* l1;
    std::vector<Family> families;
  };
  const std::vector<Top> tree = {
      {"Temporal", {{"Synchronous", {}}, {"Asynchronous", {"Precedence", "Succession"}}}},
      {"Contingency",
       {{"Cause", {"Reason", "Result"}},
        {"Condition", {"ARG1-as-Cond", "ARG2-as-Cond"}},
        {"Neg-Condition", {"ARG1-as-NegCond", "ARG2-as-NegCond"}},
        {"Purpose", {"ARG1-as-Goal", "ARG2-as-Goal"}}}},
      {"Comparison",
       {{"Concession", {"ARG1-as-Denier", "ARG2-as-Denier"}}, {"Contrast", {}}, {"Similarity", {}}}},
      {"Expansion",
       {{"Conjunction", {}},
        {"Disjunction", {}},
        {"Equivalence", {}},
        {"Exception", {"ARG1-as-Exception", "ARG2-as-Exception"}},
        {"Instantiation", {"ARG1-as-Instance", "ARG2-as-Instance"}},
        {"Level-of-Detail", {"ARG1-as-Detail", "ARG2-as-Detail"}},
        {"Manner", {"ARG1-as-Manner", "ARG2-as-Manner"}},
        {"Substitution", {"ARG1-as-Substitution", "ARG2-as-Substitution"}}}},
  };
  std::vector<Sense> senses;
  for (const auto& top : tree) senses.push_back({top.l1, 1, "", 0, false});
  for (const auto& top : tree) {
    for (const auto& fam : top.families) senses.push_back({fam.l2, 2, top.l1, 0, false});
  }
  for (const auto& top : tree) {
    for (const auto& fam : top.families) {
      if (fam.l3.empty()) {
        senses.push_back({fam.l2, 3, fam.l2, 0, true});
      } else {
        for (const char* leaf : fam.l3) senses.push_back({leaf, 3, fam.l2, 0, false});
      }
    }
  }
  return SenseHierarchy(std::move(senses));
}

// Ordered connective list for one language, each connective standing for
// exactly one level-3 sense.
class ConnectiveMap {
 public:
  static constexpr int kSize = 28;

  ConnectiveMap() = default;

  ConnectiveMap(std::vector<std::string> connectives, std::vector<int> sense_of)
      : connectives_(std::move(connectives)), sense_of_(std::move(sense_of)) {
    if (static_cast<int>(connectives_.size()) != kSize || static_cast<int>(sense_of_.size()) != kSize) {
      fail(ErrorKind::kWrongCount, "connective map needs " + std::to_string(kSize) + " pairs, got " +
                                       std::to_string(connectives_.size()));
    }
    std::set<std::string> seen;
    connective_of_.assign(kSize, -1);
    for (int i = 0; i < kSize; ++i) {
      if (!seen.insert(connectives_[static_cast<std::size_t>(i)]).second) {
        fail(ErrorKind::kNotABijection, "duplicate connective '" + connectives_[static_cast<std::size_t>(i)] + "'");
      }
      int s = sense_of_[static_cast<std::size_t>(i)];
      if (s < 0 || s >= kSize) fail(ErrorKind::kUnknownSenseName, "sense index out of range");
      if (connective_of_[static_cast<std::size_t>(s)] != -1) {
        fail(ErrorKind::kNotABijection, "two connectives map to level-3 sense #" + std::to_string(s));
      }
      connective_of_[static_cast<std::size_t>(s)] = i;
    }
  }

  // Two tab-separated columns with header "connective\tsense"; the sense
  // column holds level-3 names (projected senses may carry the "*").
  static ConnectiveMap parse(std::string_view text, const SenseHierarchy& hierarchy) {
    auto rows = parse_delimited(text, '\t');
    if (rows.empty() || rows[0] != Row{"connective", "sense"}) {
      fail(ErrorKind::kMalformedInput, "connective map needs header connective/sense");
    }
    std::vector<std::string> connectives;
    std::vector<int> senses;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() != 2) fail(ErrorKind::kMalformedInput, "connective map line " + std::to_string(i + 1));
      connectives.push_back(rows[i][0]);
      senses.push_back(hierarchy.index_of(3, rows[i][1]));
    }
    return ConnectiveMap(std::move(connectives), std::move(senses));
  }

  static ConnectiveMap load(const std::filesystem::path& path, const SenseHierarchy& hierarchy) {
    return parse(read_file(path), hierarchy);
  }

  std::string serialize(const SenseHierarchy& hierarchy) const {
    std::vector<Row> rows{{"connective", "sense"}};
    for (int i = 0; i < kSize; ++i) {
      rows.push_back({connectives_[static_cast<std::size_t>(i)],
                      hierarchy.sense(3, sense_of_[static_cast<std::size_t>(i)]).display_name()});
    }
    return format_delimited(rows, '\t');
  }

  const std::vector<std::string>& connectives() const { return connectives_; }
  int sense_of(int connective) const { return sense_of_.at(static_cast<std::size_t>(connective)); }
  int connective_of(int sense) const { return connective_of_.at(static_cast<std::size_t>(sense)); }
  bool empty() const { return connectives_.empty(); }

  // Level-3 vector -> vector in connective order, and back.
  Eigen::VectorXd to_connective_order(const Eigen::VectorXd& level3) const {
    Eigen::VectorXd out(kSize);
    for (int i = 0; i < kSize; ++i) out(i) = level3(sense_of(i));
    return out;
  }

  Eigen::VectorXd to_sense_order(const Eigen::VectorXd& by_connective) const {
    Eigen::VectorXd out(kSize);
    for (int i = 0; i < kSize; ++i) out(sense_of(i)) = by_connective(i);
    return out;
  }

 private:
  std::vector<std::string> connectives_;
  std::vector<int> sense_of_;
  std::vector<int> connective_of_;
};

// Collapses the 17 level-2 senses onto a smaller label set. Each level-2
// sense either keeps a label of its own, merges into another label, or is
// dropped ("-"); dropped mass is removed and the remainder renormalized.
class LabelReduction {
 public:
  static constexpr int kReducedSize = 14;
  static constexpr std::string_view kDropped = "-";

  static LabelReduction parse(std::string_view text, const SenseHierarchy& hierarchy) {
    auto rows = parse_delimited(text, '\t');
    if (rows.empty() || rows[0] != Row{"level2", "label"}) {
      fail(ErrorKind::kMalformedInput, "label reduction needs header level2/label");
    }
    LabelReduction red;
    red.target_.assign(static_cast<std::size_t>(hierarchy.count(2)), -2);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() != 2) fail(ErrorKind::kMalformedInput, "label reduction line " + std::to_string(i + 1));
      int src = hierarchy.index_of(2, rows[i][0]);
      if (red.target_[static_cast<std::size_t>(src)] != -2) {
        fail(ErrorKind::kMalformedInput, "level-2 sense listed twice: " + rows[i][0]);
      }
      const auto& label = rows[i][1];
      if (label == kDropped) {
        red.target_[static_cast<std::size_t>(src)] = -1;
        continue;
      }
      auto it = std::find(red.labels_.begin(), red.labels_.end(), label);
      if (it == red.labels_.end()) {
        red.labels_.push_back(label);
        it = red.labels_.end() - 1;
      }
      red.target_[static_cast<std::size_t>(src)] = static_cast<int>(it - red.labels_.begin());
    }
    for (int i = 0; i < hierarchy.count(2); ++i) {
      if (red.target_[static_cast<std::size_t>(i)] == -2) {
        fail(ErrorKind::kMalformedInput, "label reduction does not cover " + hierarchy.sense(2, i).name);
      }
    }
    if (static_cast<int>(red.labels_.size()) != kReducedSize) {
      fail(ErrorKind::kWrongCount, "label reduction defines " + std::to_string(red.labels_.size()) +
                                       " labels, expected " + std::to_string(kReducedSize));
    }
    return red;
  }

  static LabelReduction load(const std::filesystem::path& path, const SenseHierarchy& hierarchy) {
    return parse(read_file(path), hierarchy);
  }

  const std::vector<std::string>& labels() const { return labels_; }
  // -1 when dropped.
  int target(int level2_index) const { return target_.at(static_cast<std::size_t>(level2_index)); }

  Eigen::VectorXd apply(const SenseDistribution& dist) const {
    if (dist.level != 2) fail(ErrorKind::kLevelMismatch, "label reduction applies to level-2 distributions");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(labels_.size()));
    for (int i = 0; i < dist.values.size(); ++i) {
      int t = target(i);
      if (t >= 0) out(t) += dist.values(i);
    }
    double total = out.sum();
    if (!(total > 0.0)) fail(ErrorKind::kAllZero, "all mass sits on dropped labels");
    return out / total;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<int> target_;
};

inline Eigen::VectorXd reduce_to_14(const SenseDistribution& dist, const std::optional<LabelReduction>& reduction) {
  if (!reduction) fail(ErrorKind::kMappingUnavailable, "no 14-label reduction table configured");
  return reduction->apply(dist);
}

}  // namespace harch
