#ifndef PALATE_LBFGSB_HPP
#define PALATE_LBFGSB_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "palate/common.hpp"

namespace palate {

template <typename Scalar>
struct LbfgsbOptions {
  int memory = 6;
  int max_iter = 200;
  /// Converged when the infinity norm of the projected gradient is below this.
  Scalar pg_tol = Scalar(1e-8);
  int max_line_search = 40;
  Scalar armijo = Scalar(1e-4);
};

template <typename Scalar>
struct LbfgsbReport {
  int iterations = 0;
  Scalar value = Scalar(0);
  Scalar projected_gradient = Scalar(0);
  bool converged = false;
  /// Objective at the start and after each accepted step.
  std::vector<Scalar> history;
};

/// Infinity norm of P(x - g) - x, with P the projection onto [lower, upper].
template <typename Scalar>
Scalar projected_gradient_norm(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x,
                               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& g,
                               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& lower,
                               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& upper) {
  Scalar norm = Scalar(0);
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar moved = std::clamp(x[i] - g[i], lower[i], upper[i]);
    norm = std::max(norm, std::abs(moved - x[i]));
  }
  return norm;
}

/// Limited-memory BFGS with simple bounds (Byrd, Lu, Nocedal, Zhu), using the
/// compact representation B = theta I - W M W^T, the generalized Cauchy point
/// along the projected steepest-descent path, direct primal subspace
/// minimization over the free variables, and a backtracking Armijo search
/// along a feasible direction. Iterates are clamped to the box after every
/// step, so returned values never leave it.
///
/// `objective(x, grad)` returns f(x) and writes the gradient into `grad`.
template <typename Scalar, typename Objective>
LbfgsbReport<Scalar> minimize_box_constrained(Objective&& objective,
                                              Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& x,
                                              const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& lower,
                                              const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& upper,
                                              const LbfgsbOptions<Scalar>& options = {}) {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  constexpr Scalar kInf = std::numeric_limits<Scalar>::infinity();
  constexpr Scalar kEps = std::numeric_limits<Scalar>::epsilon();

  const Index n = x.size();
  if (lower.size() != n || upper.size() != n) throw Error("lbfgsb: bound size mismatch");
  for (Index i = 0; i < n; ++i)
    if (lower[i] > upper[i]) throw Error("lbfgsb: lower bound above upper bound");
  const int memory = std::max(1, options.memory);

  for (Index i = 0; i < n; ++i) x[i] = std::clamp(x[i], lower[i], upper[i]);

  Vector g(n);
  Scalar f = objective(x, g);
  LbfgsbReport<Scalar> report;
  report.history.push_back(f);

  std::vector<Vector> s_hist, y_hist;
  Scalar theta = Scalar(1);
  Matrix W(n, 0), M(0, 0);

  auto rebuild = [&]() {
    const Index m = static_cast<Index>(s_hist.size());
    Matrix S(n, m), Y(n, m);
    for (Index j = 0; j < m; ++j) {
      S.col(j) = s_hist[j];
      Y.col(j) = y_hist[j];
    }
    W.resize(n, 2 * m);
    W << Y, theta * S;
    const Matrix sty = S.transpose() * Y;
    Matrix middle = Matrix::Zero(2 * m, 2 * m);
    middle.topLeftCorner(m, m) = (-sty.diagonal()).asDiagonal();
    const Matrix lower_sty = sty.template triangularView<Eigen::StrictlyLower>();
    middle.topRightCorner(m, m) = lower_sty.transpose();
    middle.bottomLeftCorner(m, m) = lower_sty;
    middle.bottomRightCorner(m, m) = theta * (S.transpose() * S);
    M = middle.fullPivLu().inverse();
  };

  auto reset = [&]() {
    s_hist.clear();
    y_hist.clear();
    theta = Scalar(1);
    W.resize(n, 0);
    M.resize(0, 0);
  };

  for (int iter = 0; iter < options.max_iter; ++iter) {
    report.projected_gradient = projected_gradient_norm<Scalar>(x, g, lower, upper);
    if (report.projected_gradient <= options.pg_tol) {
      report.converged = true;
      break;
    }

    // Generalized Cauchy point.
    Vector breakpoints(n), d = Vector::Zero(n);
    for (Index i = 0; i < n; ++i) {
      Scalar t = kInf;
      if (g[i] < Scalar(0) && upper[i] < kInf)
        t = (x[i] - upper[i]) / g[i];
      else if (g[i] > Scalar(0) && lower[i] > -kInf)
        t = (x[i] - lower[i]) / g[i];
      breakpoints[i] = t;
      if (t != Scalar(0)) d[i] = -g[i];
    }
    std::vector<Index> order;
    for (Index i = 0; i < n; ++i)
      if (breakpoints[i] > Scalar(0) && breakpoints[i] < kInf) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return breakpoints[a] < breakpoints[b]; });

    const Index m2 = W.cols();
    Vector xc = x;
    Vector p = W.transpose() * d;
    Vector c = Vector::Zero(m2);
    Scalar fp = -d.squaredNorm();
    Scalar fpp = -theta * fp - (m2 > 0 ? Scalar(p.dot(M * p)) : Scalar(0));
    const Scalar fpp0 = -theta * fp;
    Scalar dt_min = fpp > Scalar(0) ? -fp / fpp : Scalar(0);
    Scalar t_old = Scalar(0);
    std::vector<bool> at_bound(static_cast<std::size_t>(n), false);
    for (Index i = 0; i < n; ++i)
      if (breakpoints[i] == Scalar(0)) at_bound[i] = true;

    for (const Index b : order) {
      const Scalar dt = breakpoints[b] - t_old;
      if (dt_min < dt) break;
      xc[b] = d[b] > Scalar(0) ? upper[b] : lower[b];
      const Scalar zb = xc[b] - x[b];
      c += dt * p;
      const Scalar gb = g[b];
      Scalar wMc = Scalar(0), wMp = Scalar(0), wMw = Scalar(0);
      if (m2 > 0) {
        const Vector wb = W.row(b).transpose();
        const Vector Mwb = M * wb;
        wMc = Mwb.dot(c);
        wMp = Mwb.dot(p);
        wMw = Mwb.dot(wb);
        p += gb * wb;
      }
      fp += dt * fpp + gb * gb + theta * gb * zb - gb * wMc;
      fpp -= theta * gb * gb + Scalar(2) * gb * wMp + gb * gb * wMw;
      fpp = std::max(kEps * fpp0, fpp);
      d[b] = Scalar(0);
      at_bound[b] = true;
      dt_min = fpp > Scalar(0) ? -fp / fpp : Scalar(0);
      t_old = breakpoints[b];
    }
    dt_min = std::max(dt_min, Scalar(0));
    t_old += dt_min;
    for (Index i = 0; i < n; ++i)
      if (!at_bound[i]) xc[i] = std::clamp(x[i] + t_old * d[i], lower[i], upper[i]);
    c += dt_min * p;

    // Subspace minimization over variables free at the Cauchy point.
    std::vector<Index> free_vars;
    for (Index i = 0; i < n; ++i)
      if (xc[i] > lower[i] && xc[i] < upper[i]) free_vars.push_back(i);
    Vector xbar = xc;
    if (!free_vars.empty()) {
      const Index nf = static_cast<Index>(free_vars.size());
      Vector full_r = g + theta * (xc - x);
      if (m2 > 0) full_r -= W * (M * c);
      Vector r(nf);
      Matrix WtZ(m2, nf);
      for (Index j = 0; j < nf; ++j) {
        r[j] = full_r[free_vars[j]];
        if (m2 > 0) WtZ.col(j) = W.row(free_vars[j]).transpose();
      }
      Vector du = -r / theta;
      if (m2 > 0) {
        Vector v = M * (WtZ * r);
        const Matrix N = Matrix::Identity(m2, m2) - (M * (WtZ * WtZ.transpose())) / theta;
        v = N.fullPivLu().solve(v);
        du -= WtZ.transpose() * v / (theta * theta);
      }
      for (Index j = 0; j < nf; ++j) {
        const Index i = free_vars[j];
        xbar[i] = std::clamp(xc[i] + du[j], lower[i], upper[i]);
      }
    }

    Vector dir = xbar - x;
    Scalar slope = g.dot(dir);
    if (!(slope < Scalar(0))) {
      dir = xc - x;
      slope = g.dot(dir);
    }
    if (!(slope < Scalar(0))) {
      reset();
      for (Index i = 0; i < n; ++i) dir[i] = std::clamp(x[i] - g[i], lower[i], upper[i]) - x[i];
      slope = g.dot(dir);
      if (!(slope < Scalar(0))) break;
    }

    Scalar step = Scalar(1);
    if (s_hist.empty() && iter == 0) step = std::min(Scalar(1), Scalar(1) / dir.norm());
    bool accepted = false;
    Vector xn(n), gn(n);
    Scalar fn = f;
    for (int ls = 0; ls < options.max_line_search; ++ls) {
      xn = x + step * dir;
      for (Index i = 0; i < n; ++i) xn[i] = std::clamp(xn[i], lower[i], upper[i]);
      fn = objective(xn, gn);
      if (std::isfinite(fn) && fn <= f + options.armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= Scalar(0.5);
    }
    if (!accepted) {
      if (s_hist.empty()) break;
      reset();
      continue;
    }

    const Vector s = xn - x;
    const Vector y = gn - g;
    const Scalar sy = s.dot(y);
    x = xn;
    f = fn;
    g = gn;
    report.iterations = iter + 1;
    report.history.push_back(f);

    if (sy > kEps * y.squaredNorm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      if (static_cast<int>(s_hist.size()) > memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
      }
      theta = y.squaredNorm() / sy;
      rebuild();
    }
  }

  report.value = f;
  report.projected_gradient = projected_gradient_norm<Scalar>(x, g, lower, upper);
  if (report.projected_gradient <= options.pg_tol) report.converged = true;
  return report;
}

}  // namespace palate

#endif  // PALATE_LBFGSB_HPP
