#pragma once

// Contrastive objectives over dot-product similarities with exact analytic
// gradients. Negatives are the columns of a (dim x n) matrix; an empty
// matrix is allowed.

#include <Eigen/Dense>

namespace mmrep {

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXd grad_query;
  Eigen::VectorXd grad_positive;
  Eigen::MatrixXd grad_negatives;  // same shape as the negatives
};

// -log( e^{q.p/t} / (e^{q.p/t} + sum_n e^{q.n/t}) ). Zero when there are
// no negatives.
LossResult infonce_loss(const Eigen::VectorXd& query, const Eigen::VectorXd& positive,
                        const Eigen::MatrixXd& negatives, double tau);

// log(1 + e^{-q.p/t}) + sum_n log(1 + e^{q.n/t}). The hard negative, when
// present, is simply one of the negative columns.
LossResult circle_loss(const Eigen::VectorXd& query, const Eigen::VectorXd& positive,
                       const Eigen::MatrixXd& negatives, double tau);

// Numerically stable log(1 + e^x).
double softplus(double x);

}  // namespace mmrep
