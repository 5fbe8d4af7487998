#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vmass/compliance.hpp"
#include "vmass/grid.hpp"
#include "vmass/integrands.hpp"

namespace vmass {

/// Finitely supported probability measure on symmetric tensors.
class DiscreteYoungMeasure {
public:
    DiscreteYoungMeasure() = default;
    /// Weights must be positive; they are normalized to sum 1.
    DiscreteYoungMeasure(int dim, std::vector<std::pair<double, SymTensor>> atoms);
    int dim() const noexcept { return dim_; }
    const std::vector<std::pair<double, SymTensor>>& atoms() const noexcept { return atoms_; }
    const SymTensor& barycenter() const noexcept { return barycenter_; }
    std::size_t size() const noexcept { return atoms_.size(); }
    /// Recomputes the barycenter and compares with the stored one.
    bool consistent(double tol = 1e-14) const;
    /// Weight carried by atoms within tol (Frobenius) of xi.
    double weight_near(const SymTensor& xi, double tol) const;

private:
    int dim_ = 2;
    std::vector<std::pair<double, SymTensor>> atoms_;
    SymTensor barycenter_;
};

struct GammaSweepStep {
    double eps = 0.0;
    double c_eps = 0.0; // c(mu_eps) of the fattened measure
    bool finite = true;
    double covered_volume = 0.0;
    std::vector<std::string> warnings;
};

struct GammaSweepReport {
    std::vector<GammaSweepStep> steps; // eps strictly decreasing
    double c_target = 0.0;             // c of the lower-dimensional target
    double E_target = 0.0;             // relaxed compliance of the target
    /// c_eps(mu_eps) at the smallest eps, the available limsup estimate.
    double limsup_estimate = 0.0;
    /// c_eps <= E_target (1 + band) at the smallest eps.
    bool upper_bound_holds = false;
};

/// Fattens a segment measure at each eps and evaluates c on the result.
GammaSweepReport gamma_upper_sweep(const DiscreteDomain& dom, const DensityMeasure& target,
                                   const std::vector<double>& eps_ladder, const ElasticLaw& law, double band = 0.1);

struct SeppecherField {
    double eps = 0.0;
    double radius = 0.0; // r with pi r^2 = eps, in period units
    int cells_per_period = 0;
    DiscreteDomain dom;
    DensityMeasure mu;  // 1_A / eps on the rasterized balls
    StressField sigma;  // discrete Airy field, I on the balls, 0 away from them
    /// Cells whose centre lies in a ball (these carry sigma = I exactly).
    std::vector<int> ball_cells;
    /// max |div sigma| over nodes, and the reference bound 1e-8 |sigma|_inf / h.
    double div_residual = 0.0;
    double div_bound = 0.0;
    /// max |sigma - I| over ball cells.
    double ball_deviation = 0.0;
    /// int |sigma|^2 dmu.
    double energy = 0.0;
    /// Mean of sigma over dx and over dmu (both packed xx, yy, xy).
    std::array<double, 3> mean_dx{};
    std::array<double, 3> mean_dmu{};
    /// Largest |mean of sigma dx| over a single period cell.
    double period_mean = 0.0;
};

/// Periodic ball microstructure on (-1/2, 1/2)^2 with period eps. The stress
/// is the discrete Airy field of a radial potential, quadratic on the balls,
/// constant beyond twice the radius. `resolution` is the number of cells per
/// unit length; eps * resolution must be an integer and the ball diameter
/// must span at least 8 cells.
SeppecherField seppecher_field(double eps, int resolution);

using TestFunction = std::function<double(const SymTensor&)>;

struct YoungOptions {
    int probe_cells = 2;          // probe blocks per axis
    double cluster_radius = 0.05; // relative to the largest stress norm
    double bump_width = 0.25;     // default test functions, relative as above
    int max_atoms = 12;
    double max_condition = 1e10;
};

struct YoungFit {
    Vec3 centre{};
    double mass = 0.0;
    bool ok = false;
    std::string message;
    double residual = 0.0;
    DiscreteYoungMeasure measure;
};

struct YoungReport {
    /// fits[step][probe]
    std::vector<std::vector<YoungFit>> fits;
    std::vector<double> mean_residual;
};

/// Moment-matching estimate of the Young measure of each (mu, sigma) pair on
/// coarse probe blocks. Without test functions, Gaussian bumps centred at the
/// dictionary atoms are used.
YoungReport young_extract(const DiscreteDomain& dom, const std::vector<std::pair<DensityMeasure, StressField>>& fields,
                          const std::vector<TestFunction>& psi = {}, const YoungOptions& opts = {});

struct Conj2Result {
    double lhs = 0.0; // int j* dnu
    double rhs = 0.0; // relaxed conjugate of the barycenter
    bool satisfied = false;
};

Conj2Result conj2_check(const DiscreteYoungMeasure& nu, const ElasticLaw& law);

struct Conj3Report {
    DiscreteYoungMeasure composed;
    /// int j* dnu >= int j* dnu0 >= int jbar* dnu0 >= jbar*([nu])
    double q1 = 0.0, q2 = 0.0, q3 = 0.0, q4 = 0.0;
    bool chain_holds = false;
    Conj2Result conj2;
};

/// nu0 atoms must be singular; kernel i must have barycenter atom i.
Conj3Report conj3_verify(const DiscreteYoungMeasure& nu0, const std::vector<DiscreteYoungMeasure>& kernels,
                         const ElasticLaw& law);

struct GapStep {
    double eps = 0.0;
    int cells = 0;
    bool finite = true;
    double c_eps = 0.0; // heuristic upper bound on inf c_eps
    double gap = 0.0;   // c_eps - min c
    int exchanges = 0;
};

struct GapReport {
    double min_c = 0.0;      // I^2/2 with the gauge of j
    double min_E = 0.0;      // I^2/2 with the relaxed gauge
    std::vector<GapStep> steps;
};

/// Upper estimates of inf{c_eps(mu)} by greedy cell selection plus local
/// exchanges, started from the optimal transport density. These are
/// heuristic: the combinatorial problem is not solved exactly.
GapReport gap_probe(const DiscreteDomain& dom, const std::vector<double>& eps_ladder, const ElasticLaw& law,
                    int max_exchanges = 20);

} // namespace vmass
