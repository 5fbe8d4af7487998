#pragma once

#include <vector>

#include "vmass/grid.hpp"
#include "vmass/integrands.hpp"

namespace vmass {

struct MKOptions {
    /// Relative gap between the mass of an equilibrated stress and the load
    /// work of a feasible displacement.
    double tol = 1e-4;
    int max_iterations = 50000;
    int gap_every = 10;
    /// Use the gauge of the original law j (rho = sqrt(2 j)) instead of the
    /// relaxed one; the value is then min c(mu) over probability measures.
    bool original_law = false;
};

struct TrussBar {
    Bar bar;
    double force = 0.0; // axial, tension positive
    double mass = 0.0;  // gauge cost |q| sqrt(g) L, before normalization
};

struct MKSolution {
    double I = 0.0;
    /// primal = sum of rho0(lambda) over the stress support (upper bound),
    /// dual = <F,u> of a displacement with rho(e(u)) <= 1 (lower bound).
    double primal = 0.0;
    double dual = 0.0;
    double gap = 0.0;
    int iterations = 0;
    bool converged = false;
    bool truss = false;
    /// Cell-averaged stress (grid path) and bar forces (truss path).
    StressField lambda;
    /// Stress at each Gauss point, ns values per point, 2^dim points per cell.
    std::vector<double> lambda_gauss;
    DisplacementField u;
    /// max over points of rho(e(u)) before rescaling to feasibility.
    double max_strain_gauge = 0.0;
    /// max |B^T lambda - F| over free dofs.
    double equilibrium_residual = 0.0;
    DensityMeasure mu_opt;
    std::vector<TrussBar> bars;
};

/// Mass-minimal stress on the grid: min sum rho0(lambda) s.t. -div lambda = F
/// off the clamped nodes, solved on the displacement side (max <F,u> with
/// rho(e(u)) <= 1 at every Gauss point). 2D and scalar grids use barrier
/// path following, 3D grids an augmented-Lagrangian splitting; both report
/// an exactly equilibrated stress. Scalar grids use the Euclidean gauge
/// (flux form of optimal transport).
MKSolution solve_mk_grid(const DiscreteDomain& dom, const ElasticLaw& law, const MKOptions& opts = {});

/// Ground-structure version: min sum sqrt(g) |q_b| L_b s.t. node equilibrium,
/// as a linear program over the bars within the connectivity radius.
MKSolution solve_mk_truss(const DiscreteDomain& dom, const ElasticLaw& law, double connectivity_radius);

/// I^2 / 2, cross-checked against compliance_E of mu_opt. Throws
/// Inconsistent when the two differ by more than rel_tol.
double optimal_mass_value(const DiscreteDomain& dom, const ElasticLaw& law, const MKSolution& sol,
                          double rel_tol = 0.05, double* compliance_out = nullptr);

} // namespace vmass
