#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace vmass {

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };
const char* to_string(LpStatus s);

struct LpOptions {
    int max_iterations = 200000;
    double feasibility_tol = 1e-9;
    double optimality_tol = 1e-10;
    /// Consecutive degenerate pivots before switching to Bland's rule.
    int degenerate_switch = 50;
    int refactor_every = 50;
    /// Size of the random right-hand-side perturbation (relative to max |b|)
    /// used to break degeneracy; 0 disables it.
    double perturbation = 1e-7;
};

struct LpResult {
    LpStatus status = LpStatus::IterationLimit;
    Eigen::VectorXd x;
    /// Equality multipliers: c - A^T y >= 0 on nonbasic columns at optimality.
    Eigen::VectorXd y;
    double objective = 0.0;
    int iterations = 0;
    bool used_bland = false;
};

/// minimize c^T x subject to A x = b, x >= 0. Two-phase revised simplex with
/// a dense basis inverse, Dantzig pricing, a Harris ratio test and a Bland
/// fallback on stalling. Degeneracy is broken by a perturbed right-hand side,
/// removed at the end by dual simplex steps.
LpResult solve_lp(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                  const LpOptions& opts = {});

} // namespace vmass
