#pragma once

#include <Eigen/Dense>

namespace cogdrive {

enum class QpStatus { optimal, infeasible, max_iter };

struct QpResult {
    QpStatus status = QpStatus::optimal;
    Eigen::VectorXd x;
    Eigen::VectorXd lambda;  // one multiplier per row of A, zero for inactive rows
    double objective = 0.0;  // 0.5 x'Hx + g'x
    int iterations = 0;
    int blocking_row = -1;   // row that could not be satisfied when infeasible
};

/// Minimises 0.5 x'Hx + g'x subject to A x <= b with the Goldfarb-Idnani dual
/// active-set method. H must be symmetric positive definite. The iteration
/// count covers constraint additions and drops.
QpResult solve_dense_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::MatrixXd& A,
                        const Eigen::VectorXd& b, int max_iter = 200);

/// max |lambda_i * (b_i - a_i x)| over all rows.
double complementarity_residual(const QpResult& r, const Eigen::MatrixXd& A, const Eigen::VectorXd& b);
/// Infinity norm of H x + g + A' lambda.
double stationarity_residual(const QpResult& r, const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                             const Eigen::MatrixXd& A);

}  // namespace cogdrive
