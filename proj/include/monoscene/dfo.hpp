#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace monoscene {

/// Bound-constrained derivative-free maximization. The trust-region method
/// keeps a diagonal quadratic interpolation model refreshed from coordinate
/// probes (one objective evaluation per iteration); coordinate descent is the
/// plain fallback with the same accept-only-improvements contract.
enum class DfoMethod { TrustRegion, CoordinateDescent };

struct DfoOptions {
  int max_iterations = 30;
  DfoMethod method = DfoMethod::TrustRegion;
  double initial_radius_frac = 0.1;  // of each variable's box width
  double min_radius_frac = 1e-4;
  double expand = 1.4;
  double shrink = 0.6;
};

struct DfoResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::vector<double> trace;  // best value after each iteration (monotone)
  int accepted_moves = 0;
  int evaluations = 0;
};

/// Maximize f over [lower, upper]. `project` maps any trial point onto the
/// feasible set (identity if empty) and is applied before every evaluation,
/// including the start. Accepted iterates never decrease the objective.
DfoResult dfo_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                       const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                       const Eigen::VectorXd& upper,
                       const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& project,
                       const DfoOptions& opts = {});

}  // namespace monoscene
