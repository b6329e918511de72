#include "monoscene/support.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace monoscene {

const std::array<const char*, kNumCategories>& category_names() {
  static const std::array<const char*, kNumCategories> names = {
      "wall",        "floor",      "cabinet",   "bed",           "chair",
      "sofa",        "table",      "door",      "window",        "bookshelf",
      "picture",     "counter",    "blinds",    "desk",          "shelves",
      "curtain",     "dresser",    "pillow",    "mirror",        "floor_mat",
      "clothes",     "ceiling",    "books",     "refrigerator",  "television",
      "paper",       "towel",      "shower_curtain", "box",      "whiteboard",
      "person",      "night_stand", "toilet",   "sink",          "lamp",
      "bathtub",     "bag",        "otherstructure", "otherfurniture", "otherprop"};
  return names;
}

QuestionCode encode_question(int instance_id, int category, int question_index,
                             QuestionGroup group) {
  if (instance_id < 0 || instance_id >= kMaxInstances)
    fail(Errc::OutOfRange, "encode_question: instance id " + std::to_string(instance_id));
  if (category < 0 || category >= kNumCategories)
    fail(Errc::OutOfRange, "encode_question: category " + std::to_string(category));
  if (question_index < 0 || question_index >= kQuestionsPerGroup)
    fail(Errc::OutOfRange, "encode_question: question index " + std::to_string(question_index));
  QuestionCode q;
  q.instance_id = instance_id;
  q.category = category;
  q.question_index = question_index;
  q.group = group;
  q.vector.set(static_cast<std::size_t>(instance_id));
  q.vector.set(static_cast<std::size_t>(60 + category));
  q.vector.set(static_cast<std::size_t>(100 + question_index));
  q.vector.set(static_cast<std::size_t>(104 + static_cast<int>(group)));
  return q;
}

QuestionCode decode_question(const std::bitset<kQuestionBits>& vector) {
  if (vector.count() != 4)
    fail(Errc::OutOfRange, "decode_question: expected exactly 4 set bits");
  auto block_index = [&](int lo, int hi) {
    int found = -1;
    for (int i = lo; i < hi; ++i)
      if (vector.test(static_cast<std::size_t>(i))) {
        if (found >= 0) fail(Errc::OutOfRange, "decode_question: multiple bits in one block");
        found = i - lo;
      }
    if (found < 0) fail(Errc::OutOfRange, "decode_question: empty block");
    return found;
  };
  const int inst = block_index(0, 60);
  const int cat = block_index(60, 100);
  const int qi = block_index(100, 104);
  const int grp = block_index(104, 106);
  return encode_question(inst, cat, qi, static_cast<QuestionGroup>(grp));
}

DecodedAnswer decode_answer(AnswerCode code) {
  const int a = code.scalar;
  if (a < 0 || a >= kNumAnswers)
    fail(Errc::OutOfRange, "decode_answer: scalar " + std::to_string(a));
  DecodedAnswer d;
  if (a < 60) {
    d.kind = AnswerKind::Instance;
    d.instance_id = a;
  } else if (a < 100) {
    d.kind = AnswerKind::Category;
    d.category = a - 60;
  } else if (a < 102) {
    d.kind = AnswerKind::SupportType;
    d.type = static_cast<SupportType>(a - 100);
  } else {
    d.kind = AnswerKind::YesNo;
    d.yes = a == 102;
  }
  return d;
}

AnswerCode encode_answer(const DecodedAnswer& answer) {
  switch (answer.kind) {
    case AnswerKind::Instance:
      if (answer.instance_id < 0 || answer.instance_id >= kMaxInstances)
        fail(Errc::OutOfRange, "encode_answer: instance id");
      return answer_of_instance(answer.instance_id);
    case AnswerKind::Category:
      if (answer.category < 0 || answer.category >= kNumCategories)
        fail(Errc::OutOfRange, "encode_answer: category");
      return answer_of_category(answer.category);
    case AnswerKind::SupportType:
      return answer_of_type(answer.type);
    case AnswerKind::YesNo:
      return answer_of_yesno(answer.yes);
  }
  fail(Errc::OutOfRange, "encode_answer: bad kind");
}

double PriorTables::probability(int child, int parent, SupportType t) const {
  double row = 0.0;
  for (int p = 0; p < kNumCategories; ++p) row += count(child, p, t);
  if (row <= 0.0) return 0.0;
  return count(child, parent, t) / row;
}

bool PriorTables::row_available(int child, SupportType t) const {
  for (int p = 0; p < kNumCategories; ++p)
    if (count(child, p, t) > 0.0) return true;
  return false;
}

std::vector<int> PriorTables::top_parent_categories(int child, SupportType t, int k) const {
  std::vector<int> cats;
  for (int p = 0; p < kNumCategories; ++p)
    if (count(child, p, t) > 0.0) cats.push_back(p);
  std::stable_sort(cats.begin(), cats.end(), [&](int a, int b) {
    const double ca = count(child, a, t), cb = count(child, b, t);
    if (ca != cb) return ca > cb;
    return a < b;
  });
  if (static_cast<int>(cats.size()) > k) cats.resize(static_cast<std::size_t>(k));
  return cats;
}

std::vector<std::vector<int>> neighbors(const std::vector<Mask>& masks, int dilation_px,
                                        const std::vector<bool>& is_layout) {
  const std::size_t n = masks.size();
  std::vector<bool> layout = is_layout;
  layout.resize(n, false);

  std::vector<Mask> dilated(n);
  for (std::size_t i = 0; i < n; ++i)
    if (!layout[i] && !masks[i].empty_dims()) dilated[i] = masks[i].dilated(dilation_px);

  std::vector<std::vector<int>> adj(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      bool linked = layout[i] || layout[j];
      if (!linked && !dilated[i].empty_dims() && !dilated[j].empty_dims() &&
          dilated[i].same_dims(dilated[j]))
        linked = dilated[i].intersects(dilated[j]);
      if (linked) {
        adj[i].push_back(static_cast<int>(j));
        adj[j].push_back(static_cast<int>(i));
      }
    }
  return adj;
}

SupportEdge resolve_support(const InstanceRef& obj, const std::vector<InstanceRef>& instances,
                            const std::vector<int>& neighbor_ids,
                            const std::vector<int>& parent_category_candidates, SupportType type,
                            const PriorTables& priors, int floor_instance_id) {
  SupportEdge best;
  best.child = obj.id;
  best.parent = -1;
  best.type = type;
  for (int nb : neighbor_ids) {
    const InstanceRef* ref = nullptr;
    for (const auto& r : instances)
      if (r.id == nb) {
        ref = &r;
        break;
      }
    if (!ref || ref->id == obj.id) continue;
    const bool in_sc = std::find(parent_category_candidates.begin(),
                                 parent_category_candidates.end(),
                                 ref->category) != parent_category_candidates.end();
    if (!in_sc) continue;
    const double p = priors.probability(obj.category, ref->category, type);
    if (best.parent < 0 || p > best.prior || (p == best.prior && ref->id < best.parent)) {
      best.parent = ref->id;
      best.prior = p;
    }
  }
  if (best.parent < 0) {
    // Hidden or unmatched support: treat as supported by the floor.
    best.parent = floor_instance_id;
    best.type = SupportType::Below;
    best.prior = priors.probability(obj.category, kCategoryFloor, SupportType::Below);
  }
  return best;
}

namespace {

struct Derived {
  std::vector<int> candidates;
  SupportType type = SupportType::Below;
  bool from_answers = false;
  bool force_layout = false;
};

Derived derive_candidates(const InstanceRef& obj, const std::optional<InjectedAnswers>& ans,
                          const std::vector<InstanceRef>& instances,
                          const std::vector<int>& neighbor_ids, const PriorTables& priors,
                          int top_k) {
  Derived d;
  if (ans) {
    d.from_answers = true;
    // Relational answers: [0] supporting instance (unreliable, regularizer
    // only), [1] supporting category, [2] support type, [3] hidden-support.
    const DecodedAnswer cat = decode_answer({ans->relational[1]});
    const DecodedAnswer type = decode_answer({ans->relational[2]});
    const DecodedAnswer hidden = decode_answer({ans->relational[3]});
    if (type.kind == AnswerKind::SupportType) d.type = type.type;
    if (!ans->parent_category_top5.empty())
      d.candidates = ans->parent_category_top5;
    else if (cat.kind == AnswerKind::Category)
      d.candidates = {cat.category};
    if (hidden.kind == AnswerKind::YesNo && hidden.yes) d.force_layout = true;
    return d;
  }
  // Priors only: pick the type whose best achievable Eq-score over the
  // neighborhood is larger (below wins ties), then its top-k categories.
  double best_score[2] = {-1.0, -1.0};
  for (int t = 0; t < 2; ++t) {
    const auto st = static_cast<SupportType>(t);
    const auto cats = priors.top_parent_categories(obj.category, st, top_k);
    for (int nb : neighbor_ids)
      for (const auto& r : instances)
        if (r.id == nb &&
            std::find(cats.begin(), cats.end(), r.category) != cats.end())
          best_score[t] = std::max(best_score[t], priors.probability(obj.category, r.category, st));
  }
  d.type = best_score[1] > best_score[0] ? SupportType::Behind : SupportType::Below;
  d.candidates = priors.top_parent_categories(obj.category, d.type, top_k);
  return d;
}

}  // namespace

SupportGraph infer_support_graph(const std::vector<InstanceRef>& instances,
                                 const std::vector<Mask>& masks,
                                 const std::vector<std::optional<InjectedAnswers>>& answers,
                                 const PriorTables& priors, int floor_instance_id,
                                 const SupportInferenceOptions& opts) {
  const std::size_t n = instances.size();
  std::vector<bool> layout_flags(n);
  for (std::size_t i = 0; i < n; ++i) layout_flags[i] = instances[i].is_layout;
  const auto adj = neighbors(masks, opts.dilation_px, layout_flags);

  auto neighbor_ids_of = [&](std::size_t i) {
    std::vector<int> ids;
    for (int j : adj[i]) ids.push_back(instances[static_cast<std::size_t>(j)].id);
    return ids;
  };

  SupportGraph graph;
  for (std::size_t i = 0; i < n; ++i) {
    if (instances[i].is_layout) continue;
    const auto nbr = neighbor_ids_of(i);
    const auto& ans = i < answers.size() ? answers[i] : std::optional<InjectedAnswers>{};
    const Derived d = derive_candidates(instances[i], ans, instances, nbr, priors,
                                        opts.top_k_categories);
    SupportEdge e;
    if (d.force_layout) {
      // Restrict the argmax to layout instances.
      std::vector<int> layout_nbr;
      for (int id : nbr)
        for (const auto& r : instances)
          if (r.id == id && r.is_layout) layout_nbr.push_back(id);
      e = resolve_support(instances[i], instances, layout_nbr, d.candidates, d.type, priors,
                          floor_instance_id);
    } else {
      e = resolve_support(instances[i], instances, nbr, d.candidates, d.type, priors,
                          floor_instance_id);
    }
    e.from_answers = d.from_answers;
    graph.edges.push_back(e);
  }

  // Cycle repair: each non-layout object has exactly one parent, so cycles
  // are simple loops; re-parent the lowest-prior edge of each to the floor.
  std::map<int, std::size_t> edge_of_child;
  for (std::size_t k = 0; k < graph.edges.size(); ++k) edge_of_child[graph.edges[k].child] = k;
  std::map<int, const InstanceRef*> ref_of;
  for (const auto& r : instances) ref_of[r.id] = &r;

  for (const auto& start : graph.edges) {
    // Walk parents from this child; a revisit of the walk marks a cycle.
    std::vector<int> path;
    int cur = start.child;
    while (true) {
      const auto it = ref_of.find(cur);
      if (it == ref_of.end() || it->second->is_layout) break;
      if (std::find(path.begin(), path.end(), cur) != path.end()) {
        // Collect the cycle suffix and break it.
        const auto first = std::find(path.begin(), path.end(), cur);
        std::size_t weakest = edge_of_child[*first];
        for (auto p = first; p != path.end(); ++p) {
          const std::size_t e = edge_of_child[*p];
          if (graph.edges[e].prior < graph.edges[weakest].prior ||
              (graph.edges[e].prior == graph.edges[weakest].prior &&
               graph.edges[e].child < graph.edges[weakest].child))
            weakest = e;
        }
        graph.edges[weakest].parent = floor_instance_id;
        graph.edges[weakest].type = SupportType::Below;
        break;
      }
      path.push_back(cur);
      const auto eit = edge_of_child.find(cur);
      if (eit == edge_of_child.end()) break;
      cur = graph.edges[eit->second].parent;
    }
  }
  return graph;
}

std::vector<int> topological_order(const std::vector<InstanceRef>& instances,
                                   const SupportGraph& graph) {
  std::vector<int> order;
  std::vector<int> pending;
  std::map<int, bool> placed;
  for (const auto& r : instances)
    if (r.is_layout) {
      order.push_back(r.id);
      placed[r.id] = true;
    } else {
      pending.push_back(r.id);
    }
  std::sort(pending.begin(), pending.end());

  bool progress = true;
  while (!pending.empty() && progress) {
    progress = false;
    for (auto it = pending.begin(); it != pending.end();) {
      const SupportEdge* e = graph.edge_for(*it);
      const bool ready = !e || placed.count(e->parent) || e->parent < 0;
      if (ready) {
        placed[*it] = true;
        order.push_back(*it);
        it = pending.erase(it);
        progress = true;
      } else {
        ++it;
      }
    }
  }
  if (!pending.empty()) fail(Errc::CyclicGraph, "topological_order: cycle among instances");
  return order;
}

}  // namespace monoscene
