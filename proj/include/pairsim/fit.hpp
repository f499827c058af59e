#pragma once

// Small Levenberg-Marquardt solver for the few-parameter curve fits used on
// coincidence and dip histograms. Residuals are weighted by Poisson variance.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace pairsim::fit {

struct Result {
  Eigen::VectorXd params;
  Eigen::VectorXd stderrs;
  double chi2 = 0;
  int dof = 0;
  int iterations = 0;
  bool converged = false;
};

/// model(params, i) -> predicted value for data point i.
using Model = std::function<double(const Eigen::VectorXd&, std::size_t)>;

/// Weighted least squares; `variance` defaults to max(y, 1) per point.
inline Result levenberg_marquardt(const Model& model, const std::vector<double>& y,
                                  Eigen::VectorXd p0, std::vector<double> variance = {},
                                  int max_iterations = 200) {
  const auto n = static_cast<Eigen::Index>(y.size());
  const auto m = p0.size();
  if (variance.empty())
    for (double v : y) variance.push_back(std::max(v, 1.0));
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = 1.0 / std::max(variance[static_cast<std::size_t>(i)], 0.5);

  auto residuals = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i)
      r[i] = y[static_cast<std::size_t>(i)] - model(p, static_cast<std::size_t>(i));
    return r;
  };
  auto jacobian = [&](const Eigen::VectorXd& p) {
    Eigen::MatrixXd J(n, m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double h = 1e-6 * std::max(std::abs(p[k]), 1e-3);
      Eigen::VectorXd hi = p, lo = p;
      hi[k] += h;
      lo[k] -= h;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        J(i, k) = (model(hi, ii) - model(lo, ii)) / (2.0 * h);
      }
    }
    return J;
  };
  auto chi2_of = [&](const Eigen::VectorXd& r) { return (r.array().square() * w.array()).sum(); };

  Result res;
  Eigen::VectorXd p = std::move(p0);
  Eigen::VectorXd r = residuals(p);
  double chi2 = chi2_of(r);
  double lambda = 1e-3;
  for (int it = 0; it < max_iterations; ++it) {
    res.iterations = it + 1;
    const Eigen::MatrixXd J = jacobian(p);
    const Eigen::MatrixXd JtW = J.transpose() * w.asDiagonal();
    const Eigen::MatrixXd A = JtW * J;
    const Eigen::VectorXd g = JtW * r;
    bool improved = false;
    for (int inner = 0; inner < 30; ++inner) {
      Eigen::MatrixXd damped = A;
      damped.diagonal().array() += lambda * A.diagonal().array().max(1e-12);
      const Eigen::VectorXd step = damped.ldlt().solve(g);
      if (!step.allFinite()) {
        lambda *= 10;
        continue;
      }
      const Eigen::VectorXd trial = p + step;
      const Eigen::VectorXd rt = residuals(trial);
      const double c2 = chi2_of(rt);
      if (std::isfinite(c2) && c2 <= chi2) {
        const double rel = (chi2 - c2) / std::max(chi2, 1e-300);
        p = trial;
        r = rt;
        chi2 = c2;
        lambda = std::max(lambda / 10, 1e-12);
        improved = true;
        if (rel < 1e-10 || step.norm() < 1e-12 * (1.0 + p.norm())) res.converged = true;
        break;
      }
      lambda *= 10;
    }
    if (!improved) {
      res.converged = true; // no downhill step left: at a minimum
      break;
    }
    if (res.converged) break;
  }

  res.params = p;
  res.chi2 = chi2;
  res.dof = static_cast<int>(n - m);
  const Eigen::MatrixXd J = jacobian(p);
  const Eigen::MatrixXd A = J.transpose() * w.asDiagonal() * J;
  Eigen::MatrixXd cov = A.completeOrthogonalDecomposition().pseudoInverse();
  if (res.dof > 0) cov *= std::max(1.0, chi2 / res.dof);
  res.stderrs = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  if (!p.allFinite()) res.converged = false;
  return res;
}

/// Two passes: data-variance weights, then weights from the first fitted
/// model, which removes most of the low-count bias of the first pass.
inline Result poisson_fit(const Model& model, const std::vector<double>& y, Eigen::VectorXd p0) {
  Result first = levenberg_marquardt(model, y, std::move(p0));
  if (!first.params.allFinite()) return first;
  std::vector<double> variance(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) variance[i] = std::max(model(first.params, i), 0.5);
  Result second = levenberg_marquardt(model, y, first.params, std::move(variance));
  return second.converged ? second : first;
}

} // namespace pairsim::fit
