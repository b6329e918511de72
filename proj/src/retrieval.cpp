#include "monoscene/retrieval.hpp"

#include <algorithm>

namespace monoscene {

double similarity(const Eigen::VectorXf& descriptor, const ViewDescriptorSet& model) {
  if (descriptor.size() != kDescriptorDim)
    fail(Errc::DimensionMismatch, "similarity: descriptor dimension");
  const double fn = descriptor.norm();
  if (fn == 0.0) fail(Errc::ZeroNorm, "similarity: zero-norm query descriptor");
  double best = -1.0;
  for (int i = 0; i < model.views.rows(); ++i) {
    const double vn = model.views.row(i).norm();
    if (vn == 0.0) fail(Errc::ZeroNorm, "similarity: zero-norm view descriptor");
    const double dot = model.views.row(i).dot(descriptor.transpose());
    best = std::max(best, dot / (fn * vn));
  }
  return best;
}

std::vector<RankedModel> top_k(const Eigen::VectorXf& descriptor,
                               const std::vector<ViewDescriptorSet>& library, int k) {
  if (library.empty()) fail(Errc::EmptyLibrary, "top_k: empty model library");
  if (k > static_cast<int>(library.size()))
    fail(Errc::OutOfRange, "top_k: k exceeds library size");
  std::vector<RankedModel> ranked;
  ranked.reserve(library.size());
  for (const auto& m : library) ranked.push_back({m.model_id, similarity(descriptor, m)});
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedModel& a, const RankedModel& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.model_id < b.model_id;
  });
  ranked.resize(static_cast<std::size_t>(k));
  return ranked;
}

}  // namespace monoscene
