#pragma once

#include <array>
#include <bitset>
#include <optional>
#include <string>
#include <vector>

#include "monoscene/errors.hpp"
#include "monoscene/mask.hpp"

namespace monoscene {

inline constexpr int kMaxInstances = 60;
inline constexpr int kNumCategories = 40;
inline constexpr int kQuestionsPerGroup = 4;
inline constexpr int kQuestionBits = 106;  // 60 + 40 + 4 + 2
inline constexpr int kNumAnswers = 104;    // 60 + 40 + 2 + 2

/// NYU-40 category table (0-based). Layout categories: wall 0, floor 1,
/// ceiling 21; the three trailing "other" categories use cuboid models.
const std::array<const char*, kNumCategories>& category_names();
inline constexpr int kCategoryWall = 0;
inline constexpr int kCategoryFloor = 1;
inline constexpr int kCategoryCeiling = 21;

inline bool is_layout_category(int category) {
  return category == kCategoryWall || category == kCategoryFloor || category == kCategoryCeiling;
}
inline bool is_other_category(int category) { return category >= 37 && category <= 39; }

enum class QuestionGroup : int { NonRelational = 0, Relational = 1 };
enum class SupportType : int { Below = 0, Behind = 1 };

/// One-hot-per-block binary question encoding: bits [0,60) instance,
/// [60,100) category, [100,104) question index, [104,106) group.
struct QuestionCode {
  int instance_id = 0;
  int category = 0;
  int question_index = 0;
  QuestionGroup group = QuestionGroup::NonRelational;
  std::bitset<kQuestionBits> vector;
};

QuestionCode encode_question(int instance_id, int category, int question_index,
                             QuestionGroup group);
/// Inverse of encode_question; rejects vectors without exactly one bit per block.
QuestionCode decode_question(const std::bitset<kQuestionBits>& vector);

/// Scalar network answer in [0, 104). The fixed lookup table decodes
/// 0..59 -> instance id, 60..99 -> category, 100..101 -> support type
/// (below, behind), 102..103 -> yes/no.
struct AnswerCode {
  int scalar = 0;
};

enum class AnswerKind : int { Instance = 0, Category = 1, SupportType = 2, YesNo = 3 };

struct DecodedAnswer {
  AnswerKind kind = AnswerKind::Instance;
  int instance_id = -1;
  int category = -1;
  SupportType type = SupportType::Below;
  bool yes = false;
};

DecodedAnswer decode_answer(AnswerCode code);
AnswerCode encode_answer(const DecodedAnswer& answer);

inline AnswerCode answer_of_instance(int id) { return {id}; }
inline AnswerCode answer_of_category(int category) { return {60 + category}; }
inline AnswerCode answer_of_type(SupportType t) { return {100 + static_cast<int>(t)}; }
inline AnswerCode answer_of_yesno(bool yes) { return {yes ? 102 : 103}; }

/// Support-relation count tensor (child x parent x type) plus per-category
/// height ratio distributions (object height / room height).
struct PriorTables {
  std::vector<double> counts;  // 40*40*2, child-major
  std::array<double, kNumCategories> height_mu{};
  std::array<double, kNumCategories> height_sigma{};
  std::array<bool, kNumCategories> height_available{};

  PriorTables() : counts(static_cast<std::size_t>(kNumCategories) * kNumCategories * 2, 0.0) {}

  double count(int child, int parent, SupportType t) const {
    return counts[index(child, parent, t)];
  }
  double& count_ref(int child, int parent, SupportType t) { return counts[index(child, parent, t)]; }

  /// P(parent category | child category, type); 0 when the row is empty.
  double probability(int child, int parent, SupportType t) const;
  bool row_available(int child, SupportType t) const;
  /// Parent categories ranked by prior, strongest first, zero rows skipped.
  std::vector<int> top_parent_categories(int child, SupportType t, int k) const;

  static std::size_t index(int child, int parent, SupportType t) {
    return (static_cast<std::size_t>(child) * kNumCategories + parent) * 2 +
           static_cast<std::size_t>(t);
  }
};

struct InstanceRef {
  int id = 0;
  int category = 0;
  bool is_layout = false;
};

/// Injected per-object answers (ground truth or an external model).
struct InjectedAnswers {
  std::array<int, kQuestionsPerGroup> relational{};      // answer codes
  std::array<int, kQuestionsPerGroup> non_relational{};  // kept as regularizers
  std::vector<int> parent_category_top5;                 // optional SC(O_i)
};

struct SupportEdge {
  int child = -1;
  int parent = -1;
  SupportType type = SupportType::Below;
  double prior = 0.0;
  bool from_answers = false;
};

/// One parent per non-layout instance; layout instances are roots.
struct SupportGraph {
  std::vector<SupportEdge> edges;

  const SupportEdge* edge_for(int child) const {
    for (const auto& e : edges)
      if (e.child == child) return &e;
    return nullptr;
  }
};

/// Mask adjacency: i ~ j iff the dilated masks overlap. Layout instances
/// (flagged, mask optional) are neighbors to all objects.
std::vector<std::vector<int>> neighbors(const std::vector<Mask>& masks, int dilation_px,
                                        const std::vector<bool>& is_layout = {});

/// Eq.-style prior argmax: over neighbor instances whose category is in the
/// candidate set, maximize P(C(parent) | C(child), type). Ties break on the
/// lower instance id. Falls back to the floor instance when empty.
SupportEdge resolve_support(const InstanceRef& obj, const std::vector<InstanceRef>& instances,
                            const std::vector<int>& neighbor_ids,
                            const std::vector<int>& parent_category_candidates, SupportType type,
                            const PriorTables& priors, int floor_instance_id);

struct SupportInferenceOptions {
  int dilation_px = 5;
  int top_k_categories = 5;
};

/// Full-scene inference: derives the candidate set and type per object from
/// injected answers when present (the unreliable first relational answer is
/// ignored) or from the priors alone, resolves each edge, then repairs cycles
/// by re-parenting the lowest-prior edge of each cycle to the floor.
SupportGraph infer_support_graph(const std::vector<InstanceRef>& instances,
                                 const std::vector<Mask>& masks,
                                 const std::vector<std::optional<InjectedAnswers>>& answers,
                                 const PriorTables& priors, int floor_instance_id,
                                 const SupportInferenceOptions& opts = {});

/// Children after parents; layout roots first. Throws CyclicGraph.
std::vector<int> topological_order(const std::vector<InstanceRef>& instances,
                                   const SupportGraph& graph);

}  // namespace monoscene
