#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace oracle {

inline double kl(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i)
    if (q(i) > 0) s += q(i) * std::log(q(i) / p(i));
  return s;
}

/// argmax_q <q, l> subject to KL(q || p) <= eta on the simplex, by a
/// log-barrier interior point method with equality-constrained Newton steps.
inline Eigen::VectorXd max_tilted(const Eigen::VectorXd& l, const Eigen::VectorXd& p, double eta) {
  const Eigen::Index n = l.size();
  Eigen::VectorXd q = p;
  // Orthonormal basis of {v : sum(v) = 0}.
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(n, 1);
  const Eigen::MatrixXd basis =
      Eigen::HouseholderQR<Eigen::MatrixXd>(ones).householderQ() * Eigen::MatrixXd::Identity(n, n).rightCols(n - 1);
  const auto phi = [&](const Eigen::VectorXd& x, double t) {
    if ((x.array() <= 0.0).any()) return -std::numeric_limits<double>::infinity();
    const double slack = eta - kl(x, p);
    if (slack <= 0.0) return -std::numeric_limits<double>::infinity();
    return t * l.dot(x) + std::log(slack);
  };
  for (double t = 1.0; t <= 1e13; t *= 4.0) {
    for (int it = 0; it < 200; ++it) {
      const double slack = eta - kl(q, p);
      Eigen::VectorXd dkl(n);
      for (Eigen::Index i = 0; i < n; ++i) dkl(i) = std::log(q(i) / p(i)) + 1.0;
      const Eigen::VectorXd grad = t * l - dkl / slack;
      Eigen::MatrixXd hess = -(dkl * dkl.transpose()) / (slack * slack);
      for (Eigen::Index i = 0; i < n; ++i) hess(i, i) -= 1.0 / (q(i) * slack);
      // Newton step restricted to the null space of the sum constraint.
      const Eigen::MatrixXd reduced = -(basis.transpose() * hess * basis);
      const Eigen::VectorXd step = basis * reduced.ldlt().solve(basis.transpose() * grad);
      const double decrement = -step.dot(hess * step);
      if (decrement < 1e-20) break;
      double a = 1.0;
      const double f0 = phi(q, t);
      while (a > 1e-16 && phi(q + a * step, t) < f0 + 0.25 * a * grad.dot(step)) a *= 0.5;
      q += a * step;
    }
  }
  return q / q.sum();
}

}  // namespace oracle
