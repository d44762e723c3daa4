#include "cogdrive/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cogdrive/common.hpp"

namespace cogdrive {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Working set in the factored form of Goldfarb and Idnani: J J' = H^-1 and
// J' N = [R; 0] for the matrix N of active constraint normals.
// Columns (a, b) <- (c a + s b, -s a + c b), in place.
void rotate_columns(Eigen::MatrixXd& M, Eigen::Index i, Eigen::Index j, double c, double s) {
    double* a = M.col(i).data();
    double* b = M.col(j).data();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        const double x = a[r], y = b[r];
        a[r] = c * x + s * y;
        b[r] = -s * x + c * y;
    }
}

struct Factors {
    Eigen::MatrixXd J;
    Eigen::MatrixXd R;
    int q = 0;

    // Appends the normal whose transformed vector is d = J' n.
    bool add(Eigen::VectorXd& d) {
        const Eigen::Index n = J.rows();
        for (Eigen::Index j = n - 1; j > q; --j) {
            double a = d[j - 1], b = d[j];
            if (b == 0.0) continue;
            double h = std::hypot(a, b), c = a / h, s = b / h;
            d[j - 1] = h;
            d[j] = 0.0;
            rotate_columns(J, j - 1, j, c, s);
        }
        if (std::abs(d[q]) <= 1e-12 * std::max(1.0, d.head(q + 1).norm())) return false;
        R.col(q).head(q + 1) = d.head(q + 1);
        ++q;
        return true;
    }

    // Removes active column l and restores the triangular shape of R.
    void drop(int l) {
        for (int j = l; j < q - 1; ++j) R.col(j).head(q) = R.col(j + 1).head(q);
        R.col(q - 1).setZero();
        for (int j = l; j < q - 1; ++j) {
            double a = R(j, j), b = R(j + 1, j);
            if (b == 0.0) continue;
            double h = std::hypot(a, b), c = a / h, s = b / h;
            for (int k = j; k < q - 1; ++k) {
                double rj = R(j, k), rj1 = R(j + 1, k);
                R(j, k) = c * rj + s * rj1;
                R(j + 1, k) = -s * rj + c * rj1;
            }
            rotate_columns(J, j, j + 1, c, s);
        }
        --q;
        R.row(q).setZero();
    }
};

double kkt_error(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::MatrixXd& A,
                 const Eigen::VectorXd& b, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda) {
    double e = (H * x + g + A.transpose() * lambda).lpNorm<Eigen::Infinity>();
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        double s = b[i] - A.row(i).dot(x);
        e = std::max({e, -s, -lambda[i], std::abs(lambda[i] * s)});
    }
    return e;
}

// Rounding in the factor updates leaves active rows a little off their bound.
// One solve of the equality-constrained problem on the final working set puts
// them back; the result is kept only when the KKT error shrinks.
void polish(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::MatrixXd& A,
            const Eigen::VectorXd& b, const Eigen::LLT<Eigen::MatrixXd>& llt, const std::vector<int>& active,
            QpResult& res) {
    const Eigen::Index q = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd Aa(q, A.cols());
    Eigen::VectorXd ba(q);
    for (Eigen::Index k = 0; k < q; ++k) {
        Aa.row(k) = A.row(active[static_cast<std::size_t>(k)]);
        ba[k] = b[active[static_cast<std::size_t>(k)]];
    }
    Eigen::MatrixXd HiAt = llt.solve(Aa.transpose());
    Eigen::VectorXd Hig = llt.solve(g);
    Eigen::LDLT<Eigen::MatrixXd> schur(Aa * HiAt);
    Eigen::VectorXd mu = schur.solve(-(ba + Aa * Hig));
    if (schur.info() != Eigen::Success || !mu.allFinite()) return;
    Eigen::VectorXd x = -(Hig + HiAt * mu);
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(A.rows());
    for (Eigen::Index k = 0; k < q; ++k) lambda[active[static_cast<std::size_t>(k)]] = mu[k];
    if (kkt_error(H, g, A, b, x, lambda) < kkt_error(H, g, A, b, res.x, res.lambda)) {
        res.x = x;
        res.lambda = lambda;
    }
}

}  // namespace

QpResult solve_dense_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, const Eigen::MatrixXd& A,
                        const Eigen::VectorXd& b, int max_iter) {
    const Eigen::Index n = H.rows();
    const Eigen::Index m = A.rows();
    if (H.cols() != n || g.size() != n || (m > 0 && A.cols() != n) || b.size() != m)
        throw ValidationError("qp: inconsistent dimensions");
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) throw ValidationError("qp: Hessian is not positive definite");

    Factors f;
    Eigen::MatrixXd Linv = llt.matrixL().solve(Eigen::MatrixXd::Identity(n, n));
    f.J = Linv.transpose();
    f.R = Eigen::MatrixXd::Zero(n, n);

    QpResult res;
    res.x = -llt.solve(g);
    res.lambda = Eigen::VectorXd::Zero(m);

    // Constraints are handled internally as n_i' x >= c_i with n_i = -a_i, c_i = -b_i.
    std::vector<int> active;     // row index per active column
    std::vector<double> u;       // multipliers of the active rows
    std::vector<char> is_active(static_cast<std::size_t>(m), 0);
    const Eigen::MatrixXd At = A.transpose();  // contiguous rows
    auto slack = [&](Eigen::Index i) { return b[i] - At.col(i).dot(res.x); };
    auto tol = [&](Eigen::Index i) { return 1e-10 * std::max(1.0, std::abs(b[i])); };

    auto finish = [&](QpStatus status) {
        res.status = status;
        for (std::size_t k = 0; k < active.size(); ++k) res.lambda[active[k]] = u[k];
        if (status == QpStatus::optimal && !active.empty() &&
            kkt_error(H, g, A, b, res.x, res.lambda) > 1e-9 * std::max(1.0, res.lambda.lpNorm<Eigen::Infinity>()))
            polish(H, g, A, b, llt, active, res);
        res.objective = 0.5 * res.x.dot(H * res.x) + g.dot(res.x);
        return res;
    };

    while (true) {
        Eigen::Index p = -1;
        double worst = 0.0;
        const Eigen::VectorXd slacks = b - A * res.x;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (is_active[static_cast<std::size_t>(i)]) continue;
            double s = slacks[i];
            if (s < -tol(i) && (p < 0 || s < worst)) {
                worst = s;
                p = i;
            }
        }
        if (p < 0) return finish(QpStatus::optimal);

        Eigen::VectorXd np = -At.col(p);
        double up = 0.0;
        double sp = slack(p);
        while (true) {
            if (res.iterations >= max_iter) return finish(QpStatus::max_iter);
            ++res.iterations;
            Eigen::VectorXd d = f.J.transpose() * np;
            Eigen::VectorXd z = f.J.rightCols(n - f.q) * d.tail(n - f.q);
            Eigen::VectorXd r;
            if (f.q > 0)
                r = f.R.topLeftCorner(f.q, f.q).triangularView<Eigen::Upper>().solve(d.head(f.q));

            double t1 = kInf;
            int l = -1;
            for (int j = 0; j < f.q; ++j)
                if (r[j] > 0.0 && u[static_cast<std::size_t>(j)] / r[j] < t1) {
                    t1 = u[static_cast<std::size_t>(j)] / r[j];
                    l = j;
                }
            double zn = z.dot(np);
            double t2 = (z.norm() > 1e-14 && zn > 0.0) ? -sp / zn : kInf;
            double t = std::min(t1, t2);
            if (t == kInf) {
                res.blocking_row = static_cast<int>(p);
                return finish(QpStatus::infeasible);
            }
            for (int j = 0; j < f.q; ++j) u[static_cast<std::size_t>(j)] -= t * r[j];
            up += t;
            if (t2 == kInf) {
                // Pure dual step: the blocking constraint leaves the working set.
                is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(l)])] = 0;
                active.erase(active.begin() + l);
                u.erase(u.begin() + l);
                f.drop(l);
                continue;
            }
            res.x += t * z;
            if (t == t2) {
                if (!f.add(d)) {
                    res.blocking_row = static_cast<int>(p);
                    return finish(QpStatus::infeasible);
                }
                active.push_back(static_cast<int>(p));
                u.push_back(up);
                is_active[static_cast<std::size_t>(p)] = 1;
                break;
            }
            is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(l)])] = 0;
            active.erase(active.begin() + l);
            u.erase(u.begin() + l);
            f.drop(l);
            sp = slack(p);
        }
    }
}

double complementarity_residual(const QpResult& r, const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        worst = std::max(worst, std::abs(r.lambda[i] * (b[i] - A.row(i).dot(r.x))));
    return worst;
}

double stationarity_residual(const QpResult& r, const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                             const Eigen::MatrixXd& A) {
    Eigen::VectorXd s = H * r.x + g;
    if (A.rows() > 0) s += A.transpose() * r.lambda;
    return s.lpNorm<Eigen::Infinity>();
}

}  // namespace cogdrive
