#pragma once

#include <Eigen/Dense>
#include <vector>

#include "monoscene/errors.hpp"

namespace monoscene {

inline constexpr int kDescriptorViews = 32;   // 2 elevations x 16 azimuths
inline constexpr int kDescriptorDim = 2048;

/// Precomputed multi-view shape descriptors of one library model.
struct ViewDescriptorSet {
  int model_id = -1;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> views;  // 32 x 2048

  bool well_formed() const {
    if (views.rows() != kDescriptorViews || views.cols() != kDescriptorDim) return false;
    for (int i = 0; i < views.rows(); ++i) {
      if (!views.row(i).allFinite()) return false;
      if (views.row(i).norm() == 0.f) return false;
    }
    return true;
  }
};

/// max_i cos(f, f_i^m) over the model's 32 views.
double similarity(const Eigen::VectorXf& descriptor, const ViewDescriptorSet& model);

struct RankedModel {
  int model_id = -1;
  double similarity = 0.0;
};

/// Best-k models by descending similarity; ties break on the model id.
std::vector<RankedModel> top_k(const Eigen::VectorXf& descriptor,
                               const std::vector<ViewDescriptorSet>& library, int k);

}  // namespace monoscene
