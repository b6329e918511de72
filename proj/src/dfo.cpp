#include "monoscene/dfo.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace monoscene {

namespace {

Eigen::VectorXd clamp_box(Eigen::VectorXd x, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

struct Sample {
  double delta = 0.0;
  double value = 0.0;
};

}  // namespace

DfoResult dfo_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                       const Eigen::VectorXd& x0, const Eigen::VectorXd& lower,
                       const Eigen::VectorXd& upper,
                       const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& project,
                       const DfoOptions& opts) {
  const int n = static_cast<int>(x0.size());
  auto feasible = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd y = clamp_box(x, lower, upper);
    return project ? project(y) : y;
  };

  DfoResult res;
  res.x = feasible(x0);
  res.value = f(res.x);
  res.evaluations = 1;

  const Eigen::VectorXd box = upper - lower;
  Eigen::VectorXd radius = opts.initial_radius_frac * box;
  const Eigen::VectorXd radius_min = opts.min_radius_frac * box;
  const Eigen::VectorXd radius_max = 0.5 * box;

  std::vector<std::optional<Sample>> plus(static_cast<std::size_t>(n));
  std::vector<std::optional<Sample>> minus(static_cast<std::size_t>(n));
  Eigen::VectorXd probe_dir = Eigen::VectorXd::Ones(n);

  auto eval_trial = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd y = feasible(x);
    ++res.evaluations;
    return std::pair<Eigen::VectorXd, double>(y, f(y));
  };

  auto accept = [&](const Eigen::VectorXd& y, double v) {
    const double shift = v - res.value;
    // Stored differences stay approximately valid for a separable model;
    // re-anchor the values to the new center.
    for (int j = 0; j < n; ++j) {
      if (plus[static_cast<std::size_t>(j)]) plus[static_cast<std::size_t>(j)]->value += shift;
      if (minus[static_cast<std::size_t>(j)]) minus[static_cast<std::size_t>(j)]->value += shift;
    }
    res.x = y;
    res.value = v;
    ++res.accepted_moves;
  };

  auto probe_step = [&](int j) {
    const std::size_t ju = static_cast<std::size_t>(j);
    double dir = probe_dir[j];
    // Probe into the box when pinned to a bound.
    if (res.x[j] + dir * radius[j] > upper[j]) dir = -1.0;
    if (res.x[j] + dir * radius[j] < lower[j]) dir = 1.0;
    Eigen::VectorXd trial = res.x;
    trial[j] += dir * radius[j];
    auto [y, v] = eval_trial(trial);
    const double d = y[j] - res.x[j];
    if (std::abs(d) > 1e-15) {
      const Sample s{d, v};
      (d > 0 ? plus[ju] : minus[ju]) = s;
    }
    if (v > res.value) {
      // The old center becomes the opposite-side sample of dimension j.
      const Sample back{-d, res.value};
      accept(y, v);
      (d > 0 ? minus[ju] : plus[ju]) = back;
      (d > 0 ? plus[ju] : minus[ju]).reset();
      radius[j] = std::min(radius[j] * opts.expand, radius_max[j]);
    } else {
      probe_dir[j] = -dir;
      radius[j] = std::max(radius[j] * opts.shrink, radius_min[j]);
    }
  };

  auto model_step = [&]() -> bool {
    Eigen::VectorXd step = Eigen::VectorXd::Zero(n);
    bool any = false;
    for (int j = 0; j < n; ++j) {
      const std::size_t ju = static_cast<std::size_t>(j);
      double g = 0.0, h = 0.0;
      if (plus[ju] && minus[ju]) {
        const double dp = plus[ju]->delta, dm = minus[ju]->delta;
        const double fp = plus[ju]->value - res.value, fm = minus[ju]->value - res.value;
        const double det = dp * dm * (dm - dp);
        if (std::abs(det) > 1e-18) {
          g = (fp * dm * dm - fm * dp * dp) / (dp * dm * (dm - dp));
          h = 2.0 * (fm * dp - fp * dm) / (dp * dm * (dm - dp));
        }
      } else if (plus[ju]) {
        g = (plus[ju]->value - res.value) / plus[ju]->delta;
      } else if (minus[ju]) {
        g = (minus[ju]->value - res.value) / minus[ju]->delta;
      } else {
        continue;
      }
      double d;
      if (h < -1e-18) {
        d = std::clamp(-g / h, -radius[j], radius[j]);
      } else {
        d = (g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0)) * radius[j];
      }
      if (d != 0.0) any = true;
      step[j] = d;
    }
    if (!any) return false;
    auto [y, v] = eval_trial(res.x + step);
    if (v > res.value) {
      accept(y, v);
      radius = radius.cwiseProduct(Eigen::VectorXd::Constant(n, opts.expand)).cwiseMin(radius_max);
      return true;
    }
    radius = radius.cwiseProduct(Eigen::VectorXd::Constant(n, opts.shrink)).cwiseMax(radius_min);
    return false;
  };

  int probe_cursor = 0;
  bool last_model_ok = true;
  for (int it = 0; it < opts.max_iterations; ++it) {
    if (opts.method == DfoMethod::CoordinateDescent) {
      probe_step(it % n);
    } else if (it < 2 * n) {
      probe_step(it % n);  // warm-up builds the interpolation model
    } else if (last_model_ok) {
      last_model_ok = model_step();
    } else {
      // Refresh one stale coordinate sample after a rejected model step.
      probe_step(probe_cursor);
      probe_cursor = (probe_cursor + 1) % n;
      last_model_ok = true;
    }
    res.trace.push_back(res.value);
  }
  return res;
}

}  // namespace monoscene
