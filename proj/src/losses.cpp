#include "mmrep/losses.hpp"

#include <cmath>

#include "mmrep/errors.hpp"

namespace mmrep {

namespace {

void check_shapes(const Eigen::VectorXd& q, const Eigen::VectorXd& p, const Eigen::MatrixXd& n, double tau) {
  require(tau > 0.0, "loss: temperature must be positive");
  require(q.size() == p.size(), "loss: query/positive dimension mismatch");
  require(n.cols() == 0 || n.rows() == q.size(), "loss: negative dimension mismatch");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

LossResult infonce_loss(const Eigen::VectorXd& query, const Eigen::VectorXd& positive,
                        const Eigen::MatrixXd& negatives, double tau) {
  check_shapes(query, positive, negatives, tau);
  LossResult r;
  r.grad_query = Eigen::VectorXd::Zero(query.size());
  r.grad_positive = Eigen::VectorXd::Zero(query.size());
  r.grad_negatives = Eigen::MatrixXd::Zero(query.size(), negatives.cols());
  if (negatives.cols() == 0) return r;

  const double zp = query.dot(positive) / tau;
  const Eigen::VectorXd zn = (negatives.transpose() * query) / tau;
  const double zmax = std::max(zp, zn.maxCoeff());
  const double ep = std::exp(zp - zmax);
  const Eigen::VectorXd en = (zn.array() - zmax).exp().matrix();
  const double denom = ep + en.sum();
  r.loss = -(zp - zmax) + std::log(denom);

  const double dzp = ep / denom - 1.0;
  const Eigen::VectorXd dzn = en / denom;
  r.grad_query = (dzp * positive + negatives * dzn) / tau;
  r.grad_positive = (dzp / tau) * query;
  r.grad_negatives.noalias() = query * (dzn.transpose() / tau);
  return r;
}

LossResult circle_loss(const Eigen::VectorXd& query, const Eigen::VectorXd& positive,
                       const Eigen::MatrixXd& negatives, double tau) {
  check_shapes(query, positive, negatives, tau);
  LossResult r;
  const double zp = query.dot(positive) / tau;
  r.loss = softplus(-zp);
  const double dzp = -sigmoid(-zp);

  Eigen::VectorXd dzn(negatives.cols());
  if (negatives.cols() > 0) {
    const Eigen::VectorXd zn = (negatives.transpose() * query) / tau;
    for (Eigen::Index i = 0; i < zn.size(); ++i) {
      r.loss += softplus(zn(i));
      dzn(i) = sigmoid(zn(i));
    }
  }
  r.grad_query = dzp / tau * positive;
  if (negatives.cols() > 0) r.grad_query.noalias() += negatives * dzn / tau;
  r.grad_positive = (dzp / tau) * query;
  r.grad_negatives = query * (dzn.transpose() / tau);
  return r;
}

}  // namespace mmrep
