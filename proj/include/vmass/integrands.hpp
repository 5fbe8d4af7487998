#pragma once

#include <optional>
#include <vector>

#include "vmass/tensor.hpp"

namespace vmass {

/// Isotropic quadratic law j(z) = 1/2 alpha (tr z)^2 + beta |z|^2 in dimension 2 or 3.
/// Requires beta > 0 and dim*alpha + 2*beta > 0.
class ElasticLaw {
public:
    ElasticLaw(int dim, double alpha, double beta);

    int dim() const noexcept { return dim_; }
    double alpha() const noexcept { return alpha_; }
    double beta() const noexcept { return beta_; }
    /// (alpha + 2 beta) / (4 beta (alpha + beta)); the rank-one coefficient of j* in 2D.
    double gamma() const noexcept { return gamma_; }
    /// alpha / (dim alpha + 2 beta), the trace coupling in j*.
    double coupling() const noexcept { return coupling_; }
    /// j*(tau e(x)e) = 1/2 * rank_one_coefficient() * tau^2 in any dimension.
    double rank_one_coefficient() const noexcept { return rank_one_; }

private:
    int dim_;
    double alpha_;
    double beta_;
    double gamma_;
    double coupling_;
    double rank_one_;
};

double eval_j(const ElasticLaw& law, const SymTensor& z);
SymTensor grad_j(const ElasticLaw& law, const SymTensor& z);
double eval_j_star(const ElasticLaw& law, const SymTensor& xi);

/// Rank-constrained potential j_k(z) = sup{ z.xi - j*(xi) : rank xi <= k }.
double eval_j_k(const ElasticLaw& law, int k, const SymTensor& z);
/// Maximizing xi of the sup above (a subgradient of j_k). At ties between
/// eigen-assignments the symmetric average of the tied maximizers is returned.
SymTensor grad_j_k(const ElasticLaw& law, int k, const SymTensor& z);
/// Relaxed potential, j_{n-1}.
double eval_j_bar(const ElasticLaw& law, const SymTensor& z);
SymTensor grad_j_bar(const ElasticLaw& law, const SymTensor& z);

/// Conjugate of j_k. Equals j* on tensors of rank <= k; otherwise the minimum
/// of sum w_i j*(xi_i) over decompositions into rank <= k pieces. Infinite for
/// k = 0 and xi != 0.
double eval_j_k_star(const ElasticLaw& law, int k, const SymTensor& xi, double rank_tol = 1e-9);
double eval_j_bar_star(const ElasticLaw& law, const SymTensor& xi);

/// Spectral forms on eigenvalue vectors (entries beyond law.dim() ignored).
double j_k_of_values(const ElasticLaw& law, int k, const Vec3& lambda, Vec3* maximizer = nullptr);
double j_k_star_of_values(const ElasticLaw& law, int k, const Vec3& tau);

/// Gauges: rho = sqrt(2 j_bar), rho0 = sqrt(2 j_bar*) (its polar).
double rho(const ElasticLaw& law, const SymTensor& z);
double rho0(const ElasticLaw& law, const SymTensor& xi);

/// argmin_y rho0(y) + |y - xi|^2 / (2 step). Closed form in 2D (eigenvalue
/// soft-thresholding by sqrt(gamma) step); otherwise Moreau decomposition
/// with a projection onto {rho <= 1} computed to about 1e-10.
SymTensor prox_rho0(const ElasticLaw& law, const SymTensor& xi, double step);
Vec3 prox_rho0_values(const ElasticLaw& law, const Vec3& tau, double step);

/// argmin_y j_k(y) + |y - z|^2 / (2 step), spectral like j_k itself.
SymTensor prox_j_k(const ElasticLaw& law, int k, const SymTensor& z, double step);
Vec3 prox_j_k_values(const ElasticLaw& law, int k, const Vec3& x, double step);

enum class GaugeMode { ClosedForm2D, ClosedForm3DShear, Numeric };
const char* to_string(GaugeMode mode);

/// Polar gauge evaluator. Closed form when the law admits one; otherwise a
/// direct numeric conjugate, optionally backed by a tabulation over the unit
/// sphere of eigenvalue triples (linear interpolation in the angles).
class GaugeTable {
public:
    explicit GaugeTable(const ElasticLaw& law);

    const ElasticLaw& law() const noexcept { return law_; }
    GaugeMode mode() const noexcept { return mode_; }

    /// Builds the sphere tabulation (numeric mode only; no-op otherwise).
    void tabulate(double resolution_deg = 1.0);
    bool tabulated() const noexcept { return !samples_.empty(); }
    double resolution_deg() const noexcept { return resolution_deg_; }

    /// Exact (closed form or direct numeric) polar gauge.
    double rho0(const SymTensor& xi) const;
    double rho0_values(const Vec3& tau) const;
    /// Table lookup when tabulated, exact value otherwise.
    double rho0_fast(const Vec3& tau) const;
    /// Value stored at a table node (theta index, phi index).
    double node_value(int i_theta, int i_phi) const;
    static Vec3 node_direction(double resolution_deg, int i_theta, int i_phi);
    int theta_nodes() const noexcept { return n_theta_; }
    int phi_nodes() const noexcept { return n_phi_; }

private:
    ElasticLaw law_;
    GaugeMode mode_;
    double resolution_deg_ = 0.0;
    int n_theta_ = 0;
    int n_phi_ = 0;
    std::vector<double> samples_;
};

} // namespace vmass
