#include "vmass/lp.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "vmass/error.hpp"

namespace vmass {

const char* to_string(LpStatus s) {
    switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

namespace {

class Simplex {
public:
    // b is the right-hand side the basis is built for; rows are flipped so
    // that it is nonnegative and the artificial basis starts feasible.
    Simplex(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b, const LpOptions& opts)
        : A_(A), opts_(opts), m_(static_cast<int>(A.rows())), n_(static_cast<int>(A.cols())) {
        sign_ = Eigen::VectorXd::Ones(m_);
        for (int i = 0; i < m_; ++i)
            if (b[i] < 0) sign_[i] = -1.0;
        b_ = b.cwiseProduct(sign_);
        basic_.resize(m_);
        for (int i = 0; i < m_; ++i) basic_[i] = n_ + i;
        in_basis_.assign(n_ + m_, -1);
        for (int i = 0; i < m_; ++i) in_basis_[n_ + i] = i;
        binv_ = Eigen::MatrixXd::Identity(m_, m_);
        xb_ = b_;
    }

    // Column j of the row-flipped system [sign*A | I].
    Eigen::VectorXd column(int j) const {
        Eigen::VectorXd col = Eigen::VectorXd::Zero(m_);
        if (j >= n_) {
            col[j - n_] = 1.0;
            return col;
        }
        for (Eigen::SparseMatrix<double>::InnerIterator it(A_, j); it; ++it) col[it.row()] = sign_[it.row()] * it.value();
        return col;
    }

    double column_dot(int j, const Eigen::VectorXd& y) const {
        if (j >= n_) return y[j - n_];
        double s = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(A_, j); it; ++it) s += sign_[it.row()] * it.value() * y[it.row()];
        return s;
    }

    void refactor() {
        Eigen::MatrixXd B(m_, m_);
        for (int i = 0; i < m_; ++i) B.col(i) = column(basic_[i]);
        binv_ = B.partialPivLu().inverse();
        xb_ = binv_ * b_;
    }

    void set_rhs(const Eigen::VectorXd& b) {
        b_ = b.cwiseProduct(sign_);
        refactor();
    }

    void pivot(int r, int q, const Eigen::VectorXd& w) {
        const double wr = w[r];
        const double theta = xb_[r] / wr;
        for (int i = 0; i < m_; ++i)
            if (i != r) xb_[i] -= theta * w[i];
        xb_[r] = theta;
        binv_.row(r) /= wr;
        for (int i = 0; i < m_; ++i)
            if (i != r && w[i] != 0.0) binv_.row(i) -= w[i] * binv_.row(r);
        in_basis_[basic_[r]] = -1;
        basic_[r] = q;
        in_basis_[q] = r;
        if (++since_refactor_ >= opts_.refactor_every) {
            refactor();
            since_refactor_ = 0;
        }
    }

    Eigen::VectorXd duals(const Eigen::VectorXd& cost) const {
        Eigen::VectorXd cb(m_);
        for (int i = 0; i < m_; ++i) cb[i] = cost[basic_[i]];
        return binv_.transpose() * cb;
    }

    // Primal simplex on `cost` (size n+m). Artificial columns may enter only
    // when allow_artificial is set. Dantzig pricing with a Harris ratio test;
    // Bland's rule after a run of degenerate pivots.
    LpStatus run(const Eigen::VectorXd& cost, bool allow_artificial, int& iterations, bool& used_bland) {
        int degenerate = 0;
        const int total = allow_artificial ? n_ + m_ : n_;
        while (iterations < opts_.max_iterations) {
            const Eigen::VectorXd y = duals(cost);
            const bool bland = degenerate >= opts_.degenerate_switch;
            used_bland = used_bland || bland;
            int q = -1;
            double best = -opts_.optimality_tol;
            for (int j = 0; j < total; ++j) {
                if (in_basis_[j] >= 0) continue;
                const double d = cost[j] - column_dot(j, y);
                if (d < best) {
                    q = j;
                    if (bland) break;
                    best = d;
                }
            }
            if (q < 0) return LpStatus::Optimal;
            const Eigen::VectorXd w = binv_ * column(q);
            const double piv = 1e-9 * std::max(1.0, w.cwiseAbs().maxCoeff());
            int r = -1;
            if (bland) {
                double ratio = std::numeric_limits<double>::infinity();
                for (int i = 0; i < m_; ++i) {
                    if (w[i] <= piv) continue;
                    const double t = std::max(xb_[i], 0.0) / w[i];
                    if (r < 0 || t < ratio - 1e-14 || (t <= ratio + 1e-14 && basic_[i] < basic_[r])) {
                        ratio = t;
                        r = i;
                    }
                }
            } else {
                double theta_max = std::numeric_limits<double>::infinity();
                for (int i = 0; i < m_; ++i)
                    if (w[i] > piv) theta_max = std::min(theta_max, (std::max(xb_[i], 0.0) + opts_.feasibility_tol) / w[i]);
                for (int i = 0; i < m_; ++i)
                    if (w[i] > piv && std::max(xb_[i], 0.0) / w[i] <= theta_max && (r < 0 || w[i] > w[r])) r = i;
            }
            if (r < 0) return LpStatus::Unbounded;
            degenerate = xb_[r] / w[r] <= 1e-14 ? degenerate + 1 : 0;
            if (xb_[r] < 0.0) xb_[r] = 0.0;
            pivot(r, q, w);
            ++iterations;
        }
        return LpStatus::IterationLimit;
    }

    // Dual simplex from a dual-feasible basis whose primal values went
    // slightly negative (after the right-hand side was restored).
    LpStatus repair(const Eigen::VectorXd& cost, int& iterations) {
        const double tol = opts_.feasibility_tol * std::max(1.0, b_.cwiseAbs().maxCoeff());
        while (iterations < opts_.max_iterations) {
            int r = -1;
            for (int i = 0; i < m_; ++i)
                if (xb_[i] < -tol && (r < 0 || xb_[i] < xb_[r])) r = i;
            if (r < 0) return LpStatus::Optimal;
            const Eigen::VectorXd y = duals(cost);
            const Eigen::RowVectorXd row = binv_.row(r);
            int q = -1;
            double ratio = std::numeric_limits<double>::infinity();
            for (int j = 0; j < n_; ++j) {
                if (in_basis_[j] >= 0) continue;
                double alpha = 0.0;
                for (Eigen::SparseMatrix<double>::InnerIterator it(A_, j); it; ++it)
                    alpha += row[it.row()] * sign_[it.row()] * it.value();
                if (alpha >= -1e-9) continue;
                const double t = std::max(cost[j] - column_dot(j, y), 0.0) / -alpha;
                if (t < ratio) {
                    ratio = t;
                    q = j;
                }
            }
            if (q < 0) return LpStatus::Infeasible;
            pivot(r, q, binv_ * column(q));
            ++iterations;
        }
        return LpStatus::IterationLimit;
    }

    // After phase 1: swap zero-valued artificials out of the basis when some
    // structural column can replace them; rows with none are redundant.
    void drive_out_artificials() {
        for (int r = 0; r < m_; ++r) {
            if (basic_[r] < n_) continue;
            const Eigen::RowVectorXd row = binv_.row(r);
            for (int j = 0; j < n_; ++j) {
                if (in_basis_[j] >= 0) continue;
                double v = 0.0;
                for (Eigen::SparseMatrix<double>::InnerIterator it(A_, j); it; ++it)
                    v += row[it.row()] * sign_[it.row()] * it.value();
                if (std::abs(v) > 1e-9) {
                    pivot(r, j, binv_ * column(j));
                    break;
                }
            }
        }
    }

    const Eigen::SparseMatrix<double>& A_;
    const LpOptions& opts_;
    int m_, n_;
    int since_refactor_ = 0;
    Eigen::VectorXd sign_, b_, xb_;
    Eigen::MatrixXd binv_;
    std::vector<int> basic_;
    std::vector<int> in_basis_;
};

} // namespace

LpResult solve_lp(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                  const LpOptions& opts) {
    require(A.rows() == b.size() && A.cols() == c.size(), "solve_lp: dimension mismatch");
    const int m = static_cast<int>(A.rows()), n = static_cast<int>(A.cols());
    LpResult res;

    // Ground-structure problems are massively degenerate (most rows have a
    // zero right-hand side). Solving first with b + A d for a small random
    // d > 0 keeps the right-hand side in the range of A (redundant rows stay
    // consistent) while breaking the ties; the true b is restored at the end.
    Eigen::VectorXd d(n);
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> unit(0.5, 1.0);
    const double scale = std::max(1.0, b.cwiseAbs().maxCoeff()) * opts.perturbation;
    for (int j = 0; j < n; ++j) d[j] = scale * unit(rng);
    const Eigen::VectorXd bp = opts.perturbation > 0.0 ? Eigen::VectorXd(b + A * d) : b;
    Simplex s(A, bp, opts);

    Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n + m);
    phase1.tail(m).setOnes();
    LpStatus st = s.run(phase1, true, res.iterations, res.used_bland);
    if (st == LpStatus::IterationLimit) {
        res.status = st;
        return res;
    }
    s.refactor();
    double infeas = 0.0;
    for (int i = 0; i < m; ++i)
        if (s.basic_[i] >= n) infeas += std::abs(s.xb_[i]);
    if (!std::isfinite(infeas) || infeas > opts.feasibility_tol * std::max(1.0, bp.cwiseAbs().sum())) {
        res.status = LpStatus::Infeasible;
        return res;
    }
    s.drive_out_artificials();

    Eigen::VectorXd cost = Eigen::VectorXd::Zero(n + m);
    cost.head(n) = c;
    st = s.run(cost, false, res.iterations, res.used_bland);
    if (st != LpStatus::Optimal) {
        res.status = st;
        return res;
    }
    s.set_rhs(b);
    st = s.repair(cost, res.iterations);
    if (st == LpStatus::Optimal) {
        // Phase 2 from the repaired basis in case the repair lost optimality.
        s.refactor();
        st = s.run(cost, false, res.iterations, res.used_bland);
    }
    res.status = st;
    if (st != LpStatus::Optimal) return res;
    s.refactor();
    if (!s.xb_.allFinite()) fail(ErrorCode::Internal, "simplex basis became singular");

    res.x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < m; ++i)
        if (s.basic_[i] < n) res.x[s.basic_[i]] = std::max(0.0, s.xb_[i]);
    // Multipliers of the flipped rows, mapped back to the caller's signs.
    res.y = s.duals(cost).cwiseProduct(s.sign_);
    res.objective = c.dot(res.x);
    return res;
}

} // namespace vmass
