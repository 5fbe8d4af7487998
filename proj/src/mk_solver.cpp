#include "vmass/mk_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#ifdef VMASS_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include "vmass/compliance.hpp"
#include "vmass/error.hpp"
#include "vmass/lp.hpp"

namespace vmass {

namespace {

using SpMat = Eigen::SparseMatrix<double>;

// Loads on clamped nodes go straight into the support.
bool zero_load(const DiscreteDomain& dom) {
    const std::vector<double> f = dom.nodal_load();
    for (int n = 0; n < dom.num_nodes(); ++n)
        for (int i = 0; i < dom.ncomp(); ++i)
            if (!dom.clamped(n) && f[dom.ncomp() * n + i] != 0.0) return false;
    return true;
}

// Pointwise gauges on packed vectors; scalar grids use the Euclidean norm.
struct Gauge {
    const ElasticLaw& law;
    int dim;
    int ns;
    bool scalar;
    bool original = false; // sqrt(2 j) and sqrt(2 j*) instead of the relaxed pair

    double rho(const double* e) const {
        if (scalar) return std::sqrt(std::inner_product(e, e + ns, e, 0.0));
        if (original) return std::sqrt(2.0 * eval_j(law, unpack_strain(dim, e)));
        return vmass::rho(law, unpack_strain(dim, e));
    }
    double rho0(const double* s) const {
        if (scalar) return std::sqrt(std::inner_product(s, s + ns, s, 0.0));
        if (original) return std::sqrt(2.0 * eval_j_star(law, unpack_strain(dim, s)));
        return vmass::rho0(law, unpack_strain(dim, s));
    }
};

struct Reduced {
    std::vector<int> dof_of_red;
    std::vector<int> red_of_dof;
    Eigen::VectorXd F;
};

Reduced reduce(const DiscreteDomain& dom) {
    Reduced r;
    const int nc = dom.ncomp();
    const std::vector<double> f = dom.nodal_load();
    r.red_of_dof.assign(dom.num_dofs(), -1);
    for (int n = 0; n < dom.num_nodes(); ++n) {
        if (dom.clamped(n)) continue;
        for (int i = 0; i < nc; ++i) {
            r.red_of_dof[nc * n + i] = static_cast<int>(r.dof_of_red.size());
            r.dof_of_red.push_back(nc * n + i);
        }
    }
    r.F.resize(static_cast<Eigen::Index>(r.dof_of_red.size()));
    for (std::size_t i = 0; i < r.dof_of_red.size(); ++i) r.F[static_cast<Eigen::Index>(i)] = f[r.dof_of_red[i]];
    return r;
}

SparseMatrix select_columns(const SparseMatrix& m, const Reduced& r, int ndofs) {
    std::vector<Eigen::Triplet<double>> sel;
    for (std::size_t i = 0; i < r.dof_of_red.size(); ++i) sel.emplace_back(r.dof_of_red[i], static_cast<int>(i), 1.0);
    SpMat P(ndofs, static_cast<Eigen::Index>(r.dof_of_red.size()));
    P.setFromTriplets(sel.begin(), sel.end());
    return SparseMatrix(m * P);
}

MKSolution trivial_solution(const DiscreteDomain& dom) {
    MKSolution s;
    s.converged = true;
    s.lambda = {dom.dim(), dom.nstrain(), std::vector<double>(dom.nstrain() * dom.num_cells(), 0.0), {}};
    s.u = {dom.ncomp(), std::vector<double>(dom.num_dofs(), 0.0)};
    s.mu_opt = DensityMeasure(dom);
    return s;
}

// Rigid motions not killed by the clamp make B^T D B singular; the right-hand
// sides are then balanced, so a tiny shift plus refinement solves the
// consistent system. The shift is tied to the smallest diagonal entry so that
// stiff points elsewhere do not inflate it.
struct ShiftedSolver {
#ifdef VMASS_HAVE_CHOLMOD
    Eigen::CholmodSupernodalLLT<SpMat> ldlt;
#else
    Eigen::SimplicialLDLT<SpMat> ldlt;
#endif
    SpMat A;
    double shift = 0.0;
    bool singular = false;

    void analyze(const SpMat& pattern, bool may_be_singular) {
#ifdef VMASS_HAVE_CHOLMOD
        ldlt.cholmod().print = 0; // failures are handled below
#endif
        ldlt.analyzePattern(pattern);
        singular = may_be_singular;
    }
    void factorize(const SpMat& a) {
        A = a;
        double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            if (A.coeff(i, i) > 0.0) {
                dmin = std::min(dmin, A.coeff(i, i));
                dmax = std::max(dmax, A.coeff(i, i));
            }
        shift = 0.0;
        if (!singular) {
            ldlt.factorize(A);
            if (ldlt.info() == Eigen::Success) return;
        }
        // Roundoff at the stiff end (late barrier stages, free rigid modes)
        // can push the last pivot negative; shift and refine instead.
        shift = std::max(singular ? 1e-10 * dmin : 0.0, 1e-14 * dmax);
        SpMat I(A.rows(), A.cols());
        I.setIdentity();
        for (int attempt = 0; attempt < 4; ++attempt, shift *= 100.0) {
            ldlt.factorize(SpMat(A + shift * I));
            if (ldlt.info() == Eigen::Success) return;
        }
        fail(ErrorCode::Internal, "factorization failed in the transport solver");
    }
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
        Eigen::VectorXd x = ldlt.solve(b);
        if (shift > 0.0)
            for (int r = 0; r < 3; ++r) x += ldlt.solve(b - A * x);
        return x;
    }
};

// True when the clamp leaves rigid motions free: the rigid modes restricted
// to the clamped dofs lose rank.
bool has_free_rigid_modes(const DiscreteDomain& dom) {
    if (!dom.any_clamped()) return true;
    if (dom.scalar()) return false;
    const int d = dom.dim(), nr = d == 2 ? 3 : 6;
    Vec3 c{0, 0, 0};
    for (int n = 0; n < dom.num_nodes(); ++n)
        if (dom.clamped(n))
            for (int i = 0; i < 3; ++i) c[i] += dom.node_position(n)[i] / dom.num_clamped();
    const double L = dom.h() * std::max({dom.cells(0), dom.cells(1), d == 3 ? dom.cells(2) : 1});
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nr, nr);
    for (int n = 0; n < dom.num_nodes(); ++n) {
        if (!dom.clamped(n)) continue;
        const Vec3 x0 = dom.node_position(n);
        const double x = (x0[0] - c[0]) / L, y = (x0[1] - c[1]) / L, z = (x0[2] - c[2]) / L;
        Eigen::MatrixXd R = Eigen::MatrixXd::Zero(d, nr);
        for (int i = 0; i < d; ++i) R(i, i) = 1.0;
        if (d == 2) {
            R(0, 2) = -y;
            R(1, 2) = x;
        } else {
            R(1, 3) = -z; R(2, 3) = y;
            R(0, 4) = z;  R(2, 4) = -x;
            R(0, 5) = -y; R(1, 5) = x;
        }
        G += R.transpose() * R;
    }
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G).eigenvalues();
    return ev.minCoeff() <= 1e-10 * ev.maxCoeff();
}

// Discrete transport problem on the Gauss points of the free dofs:
// I = min sum_q w_q rho0(sig_q) s.t. B^T D sig = F  =  max <F,u> s.t. rho(B_q u) <= 1,
// with D = diag(w_q * pairing weight).
struct GridProblem {
    const DiscreteDomain* dom;
    Gauge gauge;
    int ns;
    double wq;
    SpMat B;
    SpMat Bt;
    Eigen::VectorXd dw;
    Eigen::VectorXd F;
    std::vector<int> red_of_dof;
    Eigen::Index points() const { return B.rows() / ns; }
};

// Assembles B^T blockdiag(H_q) B cell by cell into a fixed sparsity pattern.
class ElementAssembler {
public:
    explicit ElementAssembler(const GridProblem& p) : p_(p) {
        const DiscreteDomain& dom = *p.dom;
        nq_ = gauss_points_per_cell(dom);
        nloc_ = dom.ncomp() * dom.corners();
        const DiscreteDomain unit(dom.dim(), {1, 1, 1}, dom.h(), {0, 0, 0}, dom.scalar());
        local_ = Eigen::MatrixXd(gauss_strain_matrix(unit));
        std::vector<Eigen::Triplet<double>> trip;
        dofs_.resize(static_cast<std::size_t>(dom.num_cells()) * nloc_);
        for (int c = 0; c < dom.num_cells(); ++c) {
            const auto nodes = dom.cell_nodes(c);
            for (int k = 0; k < dom.corners(); ++k)
                for (int i = 0; i < dom.ncomp(); ++i)
                    dofs_[c * nloc_ + k * dom.ncomp() + i] = p.red_of_dof[dom.ncomp() * nodes[k] + i];
            for (int a = 0; a < nloc_; ++a)
                for (int b = 0; b < nloc_; ++b) {
                    const int ra = dofs_[c * nloc_ + a], rb = dofs_[c * nloc_ + b];
                    if (ra >= 0 && rb >= 0) trip.emplace_back(ra, rb, 1.0);
                }
        }
        const Eigen::Index n = p.B.cols();
        H_.resize(n, n);
        H_.setFromTriplets(trip.begin(), trip.end());
        H_.makeCompressed();
        slot_.assign(static_cast<std::size_t>(dom.num_cells()) * nloc_ * nloc_, -1);
        for (int c = 0; c < dom.num_cells(); ++c)
            for (int a = 0; a < nloc_; ++a)
                for (int b = 0; b < nloc_; ++b) {
                    const int ra = dofs_[c * nloc_ + a], rb = dofs_[c * nloc_ + b];
                    if (ra < 0 || rb < 0) continue;
                    const int* inner = H_.innerIndexPtr();
                    const int lo = H_.outerIndexPtr()[rb], hi = H_.outerIndexPtr()[rb + 1];
                    slot_[(static_cast<std::size_t>(c) * nloc_ + a) * nloc_ + b] =
                        static_cast<int>(std::lower_bound(inner + lo, inner + hi, ra) - inner);
                }
    }
    const SpMat& pattern() const { return H_; }
    // hq: ns*ns per Gauss point, already weighted.
    const SpMat& assemble(const std::vector<double>& hq) {
        const int ns = p_.ns;
        std::fill(H_.valuePtr(), H_.valuePtr() + H_.nonZeros(), 0.0);
        Eigen::MatrixXd ke(nloc_, nloc_);
        for (int c = 0; c < p_.dom->num_cells(); ++c) {
            ke.setZero();
            for (int q = 0; q < nq_; ++q) {
                const auto Bq = local_.middleRows(q * ns, ns);
                const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Hm(
                    hq.data() + static_cast<std::size_t>(ns) * ns * (c * nq_ + q), ns, ns);
                ke.noalias() += Bq.transpose() * Hm * Bq;
            }
            for (int a = 0; a < nloc_; ++a)
                for (int b = 0; b < nloc_; ++b) {
                    const int sl = slot_[(static_cast<std::size_t>(c) * nloc_ + a) * nloc_ + b];
                    if (sl >= 0) H_.valuePtr()[sl] += ke(a, b);
                }
        }
        return H_;
    }

private:
    const GridProblem& p_;
    int nq_ = 0;
    int nloc_ = 0;
    Eigen::MatrixXd local_;
    std::vector<int> dofs_;
    std::vector<int> slot_;
    SpMat H_;
};

struct GridIterate {
    Eigen::VectorXd sigma; // equilibrated stress, packed per Gauss point
    Eigen::VectorXd u;     // feasible displacement (rho(Bu) <= 1)
    double primal = std::numeric_limits<double>::infinity();
    double dual = 0.0;
    double max_gauge = 0.0;
    int iterations = 0;
    bool converged = false;
};

double stress_mass(const GridProblem& p, const Eigen::VectorXd& sig) {
    double m = 0.0;
    for (Eigen::Index q = 0; q < p.points(); ++q) m += p.wq * p.gauge.rho0(sig.data() + p.ns * q);
    return m;
}

double strain_gauge_max(const GridProblem& p, const Eigen::VectorXd& e) {
    double g = 0.0;
    for (Eigen::Index q = 0; q < p.points(); ++q) g = std::max(g, p.gauge.rho(e.data() + p.ns * q));
    return g;
}

double relative_gap(double primal, double dual) {
    return (primal - dual) / std::max(std::abs(primal), 1e-300);
}

// Self-concordant barrier of the feasible strain set {rho <= 1} at one point,
// in packed coordinates: the Euclidean unit ball (scalar grids) or, for the
// planar elastic gauge, the spectral-norm ball of radius sqrt(gamma) written as
// sI - e > 0 and sI + e > 0.
struct PointBarrier {
    bool scalar;
    int dim;
    int ns;
    double s; // eigenvalue bound in 2D
    const ElasticLaw* law;
    bool original = false;

    // Barrier parameter per point (number of logarithms).
    double weight() const { return scalar || original ? 1.0 : (dim == 2 ? 4.0 : 3.0); }

    // Returns false outside the open set. grad and hess are packed.
    bool eval(const double* v, double* value, double* grad, double* hess) const {
        if (original && !scalar) return eval_quadratic(v, value, grad, hess);
        if (scalar) {
            double n2 = 0.0;
            for (int a = 0; a < ns; ++a) n2 += v[a] * v[a];
            const double d = 1.0 - n2;
            if (d <= 0.0) return false;
            if (value) *value = -std::log(d);
            if (grad)
                for (int a = 0; a < ns; ++a) grad[a] = 2.0 * v[a] / d;
            if (hess)
                for (int a = 0; a < ns; ++a)
                    for (int b = 0; b < ns; ++b)
                        hess[a * ns + b] = (a == b ? 2.0 / d : 0.0) + 4.0 * v[a] * v[b] / (d * d);
            return true;
        }
        if (dim == 3) return eval3(v, value, grad, hess);
        Eigen::Matrix2d e;
        e << v[0], v[2], v[2], v[1];
        const Eigen::Matrix2d P = s * Eigen::Matrix2d::Identity() - e, M = s * Eigen::Matrix2d::Identity() + e;
        const double dp = P.determinant(), dm = M.determinant();
        if (!(dp > 0.0 && dm > 0.0 && P.trace() > 0.0 && M.trace() > 0.0)) return false;
        if (value) *value = -std::log(dp) - std::log(dm);
        const Eigen::Matrix2d Pi = P.inverse(), Mi = M.inverse();
        if (grad) {
            const Eigen::Matrix2d G = Pi - Mi;
            grad[0] = G(0, 0);
            grad[1] = G(1, 1);
            grad[2] = 2.0 * G(0, 1);
        }
        if (hess) {
            // d^2 = <Ea, Pi Eb Pi> + <Ea, Mi Eb Mi>, Ea the packed basis matrices.
            Eigen::Matrix2d E[3];
            E[0] << 1, 0, 0, 0;
            E[1] << 0, 0, 0, 1;
            E[2] << 0, 1, 1, 0;
            for (int b = 0; b < 3; ++b) {
                const Eigen::Matrix2d H = Pi * E[b] * Pi + Mi * E[b] * Mi;
                for (int a = 0; a < 3; ++a) hess[a * 3 + b] = (E[a].array() * H.array()).sum();
            }
        }
        return true;
    }

    // Original law: -log(1 - 2 j(e)), an ellipsoid in packed coordinates with
    // 2 j = alpha (sum of diagonal)^2 + 2 beta (diagonal^2 + 2 off-diagonal^2).
    bool eval_quadratic(const double* v, double* value, double* grad, double* hess) const {
        double Qv[6];
        double tr = 0.0;
        for (int a = 0; a < dim; ++a) tr += v[a];
        for (int a = 0; a < ns; ++a) Qv[a] = a < dim ? law->alpha() * tr + 2.0 * law->beta() * v[a] : 4.0 * law->beta() * v[a];
        double q = 0.0;
        for (int a = 0; a < ns; ++a) q += v[a] * Qv[a];
        const double d = 1.0 - q;
        if (d <= 0.0) return false;
        if (value) *value = -std::log(d);
        if (grad)
            for (int a = 0; a < ns; ++a) grad[a] = 2.0 * Qv[a] / d;
        if (hess)
            for (int a = 0; a < ns; ++a)
                for (int b = 0; b < ns; ++b) {
                    double qab = (a < dim && b < dim ? law->alpha() : 0.0) +
                                 (a == b ? (a < dim ? 2.0 : 4.0) * law->beta() : 0.0);
                    hess[a * ns + b] = 2.0 * qab / d + 4.0 * Qv[a] * Qv[b] / (d * d);
                }
        return true;
    }

    // 3D: {rho <= 1} is the set where every eigenvalue pair satisfies
    // lam_S^T Q_S lam_S <= 1, Q_S = 2 beta (I + a 1 1^T). The barrier
    // -sum_S log(1 - q_S(lam)) is a symmetric convex function of the
    // eigenvalues, hence convex in the tensor; its Hessian follows from the
    // divided differences of the eigenvalue gradient.
    bool eval3(const double* v, double* value, double* grad, double* hess) const {
        Eigen::Matrix3d e;
        e << v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2];
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(e);
        const Eigen::Vector3d lam = es.eigenvalues();
        const Eigen::Matrix3d& V = es.eigenvectors();
        const double c = law->coupling(), a = c / (1.0 - 2.0 * c), tb = 2.0 * law->beta();
        static constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
        double f = 0.0;
        Eigen::Vector3d g = Eigen::Vector3d::Zero();
        Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
        for (const auto& pr : pairs) {
            const int i = pr[0], j = pr[1];
            const double sum = lam[i] + lam[j];
            const double d = 1.0 - tb * (lam[i] * lam[i] + lam[j] * lam[j] + a * sum * sum);
            if (d <= 0.0) return false;
            f -= std::log(d);
            Eigen::Vector3d dq = Eigen::Vector3d::Zero();
            dq[i] = tb * 2.0 * (lam[i] + a * sum);
            dq[j] = tb * 2.0 * (lam[j] + a * sum);
            g += dq / d;
            h += dq * dq.transpose() / (d * d);
            h(i, i) += 2.0 * tb * (1.0 + a) / d;
            h(j, j) += 2.0 * tb * (1.0 + a) / d;
            h(i, j) += 2.0 * tb * a / d;
            h(j, i) += 2.0 * tb * a / d;
        }
        if (value) *value = f;
        static constexpr int ij[6][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}};
        if (grad) {
            const Eigen::Matrix3d G = V * g.asDiagonal() * V.transpose();
            for (int p = 0; p < 6; ++p) grad[p] = (p < 3 ? 1.0 : 2.0) * G(ij[p][0], ij[p][1]);
        }
        if (hess) {
            const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
            Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    if (i == j) continue;
                    const double gap = lam[i] - lam[j];
                    A(i, j) = std::abs(gap) > 1e-7 * scale ? (g[i] - g[j]) / gap : h(i, i) - h(i, j);
                }
            // Packed basis matrices in the eigenbasis.
            Eigen::Matrix3d Et[6];
            for (int p = 0; p < 6; ++p) {
                Eigen::Matrix3d E = Eigen::Matrix3d::Zero();
                E(ij[p][0], ij[p][1]) = 1.0;
                E(ij[p][1], ij[p][0]) = 1.0;
                Et[p] = V.transpose() * E * V;
            }
            for (int p = 0; p < 6; ++p)
                for (int q = p; q < 6; ++q) {
                    double val = Et[p].diagonal().dot(h * Et[q].diagonal());
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j)
                            if (i != j) val += A(i, j) * Et[p](i, j) * Et[q](i, j);
                    hess[p * 6 + q] = hess[q * 6 + p] = val;
                }
        }
        return true;
    }

    // Stress from the barrier gradient: packed tensor whose Frobenius pairing
    // reproduces the packed gradient.
    void gradient_stress(const double* grad, double* sig) const {
        for (int a = 0; a < ns; ++a) sig[a] = grad[a] / (scalar || a < dim ? 1.0 : 2.0);
    }
};

// Barrier path following on  max <F,u>  s.t.  rho(B_q u) <= 1: Newton steps on
// t <F,u> - sum w_q phi(B_q u) with t growing geometrically, each centre
// predicted along the path tangent. At a centre sigma = grad phi / t balances
// F up to the Newton residual, which a least-squares correction removes so the
// reported mass is a true upper bound.
GridIterate run_barrier(const GridProblem& p, const MKOptions& opts) {
    const int ns = p.ns;
    const Eigen::Index npts = p.points(), m = p.B.rows();
    const PointBarrier bar{p.dom->scalar(), p.dom->dim(), ns, p.dom->scalar() ? 1.0 : std::sqrt(p.gauge.law.gamma()),
                           &p.gauge.law, p.gauge.original};
    const SpMat BtDB = SpMat(p.Bt * p.dw.asDiagonal() * p.B);
    const bool singular = has_free_rigid_modes(*p.dom);
    ShiftedSolver corr;
    corr.analyze(BtDB, singular);
    corr.factorize(BtDB);

    auto barrier_value = [&](const Eigen::VectorXd& u, double* val) {
        const Eigen::VectorXd e = p.B * u;
        double phi = 0.0;
        for (Eigen::Index q = 0; q < npts; ++q) {
            double v;
            if (!bar.eval(e.data() + ns * q, &v, nullptr, nullptr)) return false;
            phi += p.wq * v;
        }
        *val = phi;
        return true;
    };

    GridIterate out;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(p.B.cols());
    const double vol = p.wq * static_cast<double>(npts);
    double t = std::sqrt(vol) / std::max(p.F.norm(), 1e-300);
    const double nu = vol * bar.weight();
    ShiftedSolver newton;
    ElementAssembler assembler(p);
    newton.analyze(assembler.pattern(), singular);
    std::vector<double> hq(static_cast<std::size_t>(npts) * ns * ns);
    Eigen::VectorXd gpack(m);

    auto factor_hessian = [&](const Eigen::VectorXd& e) {
        for (Eigen::Index q = 0; q < npts; ++q) {
            double* h = hq.data() + static_cast<std::size_t>(ns) * ns * q;
            bar.eval(e.data() + ns * q, nullptr, gpack.data() + ns * q, h);
            for (int a = 0; a < ns * ns; ++a) h[a] *= p.wq;
        }
        newton.factorize(assembler.assemble(hq));
    };

    for (int stage = 0; stage < 100 && out.iterations < opts.max_iterations; ++stage) {
        for (int k = 0; k < 200; ++k) {
            factor_hessian(p.B * u);
            const Eigen::VectorXd grad = -t * p.F + p.Bt * (p.wq * gpack);
            const Eigen::VectorXd du = -newton.solve(grad);
            const double dec2 = -grad.dot(du);
            ++out.iterations;
            if (dec2 < 1e-10 * p.wq) break;
            double f0 = 0.0;
            barrier_value(u, &f0);
            f0 -= t * p.F.dot(u);
            double step = 1.0, f1 = 0.0;
            while (step >= 1e-12) {
                if (barrier_value(u + step * du, &f1) && f1 - t * p.F.dot(u + step * du) <= f0 - 0.25 * step * dec2)
                    break;
                step *= 0.5;
            }
            if (step < 1e-12) break;
            u += step * du;
        }
        // Certificates at this centre.
        const Eigen::VectorXd e = p.B * u;
        Eigen::VectorXd sig(m);
        for (Eigen::Index q = 0; q < npts; ++q) {
            bar.eval(e.data() + ns * q, nullptr, gpack.data() + ns * q, nullptr);
            bar.gradient_stress(gpack.data() + ns * q, sig.data() + ns * q);
        }
        sig /= t;
        sig += p.B * corr.solve(p.F - p.Bt * p.dw.cwiseProduct(sig));
        const double primal = stress_mass(p, sig);
        const double gmax = strain_gauge_max(p, e);
        const double dual = p.F.dot(u) / std::max(gmax, 1.0);
        if (primal < out.primal) {
            out.primal = primal;
            out.sigma = sig;
        }
        if (dual > out.dual) {
            out.dual = dual;
            out.u = u / std::max(gmax, 1.0);
            out.max_gauge = gmax;
        }
        if (relative_gap(out.primal, out.dual) <= opts.tol) {
            out.converged = true;
            break;
        }
        // Predictor along the central path: du/dt = H^{-1} F at the centre.
        const double t_new = t * std::max(2.0, std::min(20.0, nu / std::max(t * (out.primal - out.dual), 1e-300)));
        factor_hessian(e);
        const Eigen::VectorXd tangent = newton.solve(p.F);
        double step = t_new - t, val = 0.0;
        while (step > 1e-12 * t && !barrier_value(u + step * tangent, &val)) step *= 0.5;
        if (barrier_value(u + 0.9 * step * tangent, &val)) u += 0.9 * step * tangent;
        t = t_new;
    }
    return out;
}

} // namespace

MKSolution solve_mk_grid(const DiscreteDomain& dom, const ElasticLaw& law, const MKOptions& opts) {
    require(dom.scalar() || law.dim() == dom.dim(), "law and grid dimensions differ");
    require(opts.tol > 0.0 && opts.max_iterations > 0 && opts.gap_every > 0, "invalid transport solver options");
    dom.check_admissible();
    if (zero_load(dom)) return trivial_solution(dom);
    require(dom.num_cells() > 0, "grid transport solve needs cells");

    const int dim = dom.dim(), ns = dom.nstrain(), nq = gauss_points_per_cell(dom);
    const Reduced red = reduce(dom);
    GridProblem p{&dom, Gauge{law, dim, ns, dom.scalar(), opts.original_law}, ns, dom.cell_volume() / nq, {}, {}, {}, red.F, red.red_of_dof};
    p.B = SpMat(select_columns(gauss_strain_matrix(dom), red, dom.num_dofs()));
    p.Bt = p.B.transpose();
    p.dw.resize(p.B.rows());
    for (Eigen::Index r = 0; r < p.B.rows(); ++r)
        p.dw[r] = p.wq * (dom.scalar() || r % ns < dim ? 1.0 : 2.0);

    const GridIterate it = run_barrier(p, opts);
    MKSolution out;
    out.iterations = it.iterations;
    out.primal = it.primal;
    out.dual = it.dual;
    out.gap = relative_gap(it.primal, it.dual);
    if (!it.converged)
        fail(ErrorCode::NonConvergence, "transport solver stopped at gap " + std::to_string(out.gap) + " (primal " +
                                            std::to_string(out.primal) + ", dual " + std::to_string(out.dual) + ")");
    out.converged = true;
    out.I = 0.5 * (out.primal + out.dual);
    out.max_strain_gauge = it.max_gauge;
    const Eigen::VectorXd& sig = it.sigma;
    out.equilibrium_residual = (p.Bt * p.dw.cwiseProduct(sig) - p.F).cwiseAbs().maxCoeff();
    out.lambda_gauss.assign(sig.data(), sig.data() + sig.size());
    out.lambda = {dim, ns, std::vector<double>(static_cast<std::size_t>(ns) * dom.num_cells(), 0.0), {}};
    out.mu_opt = DensityMeasure(dom);
    for (int c = 0; c < dom.num_cells(); ++c) {
        double mass = 0.0;
        for (int q = 0; q < nq; ++q) {
            const double* sq = sig.data() + ns * (c * nq + q);
            for (int a = 0; a < ns; ++a) out.lambda.values[ns * c + a] += sq[a] / nq;
            mass += p.wq * p.gauge.rho0(sq);
        }
        out.mu_opt.density()[c] = mass / out.primal / dom.cell_volume();
    }
    out.u = {dom.ncomp(), std::vector<double>(dom.num_dofs(), 0.0)};
    for (std::size_t i = 0; i < red.dof_of_red.size(); ++i)
        out.u.values[red.dof_of_red[i]] = it.u[static_cast<Eigen::Index>(i)];
    return out;
}

MKSolution solve_mk_truss(const DiscreteDomain& dom, const ElasticLaw& law, double connectivity_radius) {
    require(dom.scalar() || law.dim() == dom.dim(), "law and grid dimensions differ");
    require(connectivity_radius > 0.0, "connectivity radius must be positive");
    dom.check_admissible();
    if (zero_load(dom)) {
        MKSolution s = trivial_solution(dom);
        s.truss = true;
        return s;
    }
    const GroundStructure gs = ground_structure(dom, connectivity_radius);
    const int nc = dom.ncomp();

    // Every loaded free node must reach a clamp (or, with no clamp, at least
    // be joined to other nodes) through the ground structure.
    std::vector<int> parent(dom.num_nodes());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const Bar& b : gs.bars) parent[find(b.a)] = find(b.b);
    std::vector<char> root_clamped(dom.num_nodes(), 0);
    for (int n = 0; n < dom.num_nodes(); ++n)
        if (dom.clamped(n)) root_clamped[find(n)] = 1;
    const std::vector<double> f = dom.nodal_load();
    for (int n = 0; n < dom.num_nodes(); ++n) {
        if (dom.clamped(n)) continue;
        bool loaded = false;
        for (int i = 0; i < nc; ++i) loaded = loaded || f[nc * n + i] != 0.0;
        if (!loaded) continue;
        const bool stranded = dom.any_clamped() ? !root_clamped[find(n)]
                                                : std::none_of(gs.bars.begin(), gs.bars.end(), [&](const Bar& b) {
                                                      return b.a == n || b.b == n;
                                                  });
        if (stranded) {
            const Vec3 x = dom.node_position(n);
            fail(ErrorCode::Infeasible, "ground structure leaves loaded node " + std::to_string(n) + " at (" +
                                            std::to_string(x[0]) + ", " + std::to_string(x[1]) +
                                            (dom.dim() == 3 ? ", " + std::to_string(x[2]) : std::string()) +
                                            ") stranded from the clamp");
        }
    }

    const Reduced red = reduce(dom);
    const SparseMatrix Ar = select_columns(SparseMatrix(gs.equilibrium.transpose()), red, dom.num_dofs());
    // Ar is bars x free dofs; the LP needs free dofs x (q+, q-).
    const SpMat A1 = SpMat(Ar.transpose());
    const Eigen::Index nb = static_cast<Eigen::Index>(gs.bars.size());
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < A1.outerSize(); ++k)
        for (SpMat::InnerIterator it(A1, k); it; ++it) {
            trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
            trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col() + nb), -it.value());
        }
    SpMat A(A1.rows(), 2 * nb);
    A.setFromTriplets(trip.begin(), trip.end());
    const double sg = dom.scalar() ? 1.0 : std::sqrt(law.rank_one_coefficient());
    Eigen::VectorXd cost(2 * nb);
    for (Eigen::Index b = 0; b < nb; ++b) cost[b] = cost[b + nb] = sg * gs.bars[static_cast<std::size_t>(b)].length;
    const LpResult lp = solve_lp(A, red.F, cost);
    if (lp.status == LpStatus::Infeasible)
        fail(ErrorCode::Infeasible, "no bar forces on the ground structure balance the load");
    if (lp.status != LpStatus::Optimal)
        fail(ErrorCode::NonConvergence, std::string("truss linear program ended with status ") + to_string(lp.status));

    MKSolution out;
    out.truss = true;
    out.converged = true;
    out.iterations = lp.iterations;
    out.primal = lp.objective;
    out.dual = red.F.dot(lp.y);
    out.I = out.primal;
    out.gap = std::abs(out.primal - out.dual) / std::max(std::abs(out.primal), 1e-300);
    out.lambda = {dom.dim(), dom.nstrain(), std::vector<double>(dom.nstrain() * dom.num_cells(), 0.0), {}};
    out.lambda.bar_forces.resize(static_cast<std::size_t>(nb));
    out.mu_opt = DensityMeasure(dom);
    double qmax = 0.0;
    for (Eigen::Index b = 0; b < nb; ++b) qmax = std::max(qmax, std::abs(lp.x[b] - lp.x[b + nb]));
    for (Eigen::Index b = 0; b < nb; ++b) {
        double q = lp.x[b] - lp.x[b + nb];
        // Simplex roundoff leaves 1e-17 forces on idle bars.
        if (std::abs(q) <= 1e-12 * qmax) q = 0.0;
        const Bar& bar = gs.bars[static_cast<std::size_t>(b)];
        out.lambda.bar_forces[static_cast<std::size_t>(b)] = q;
        if (q == 0.0) continue;
        const double mass = std::abs(q) * sg * bar.length;
        out.bars.push_back({bar, q, mass});
        out.mu_opt.segments().push_back(
            {dom.node_position(bar.a), dom.node_position(bar.b), mass / out.I / bar.length});
    }
    const Eigen::VectorXd resid = A * lp.x - red.F;
    out.equilibrium_residual = resid.size() ? resid.cwiseAbs().maxCoeff() : 0.0;
    out.u = {dom.ncomp(), std::vector<double>(dom.num_dofs(), 0.0)};
    for (std::size_t i = 0; i < red.dof_of_red.size(); ++i)
        out.u.values[red.dof_of_red[i]] = lp.y[static_cast<Eigen::Index>(i)];
    double gmax = 0.0;
    for (const Bar& bar : gs.bars) {
        double d = 0.0;
        for (int i = 0; i < nc; ++i)
            d += (dom.scalar() ? 1.0 : bar.dir[i]) * (out.u.values[nc * bar.b + i] - out.u.values[nc * bar.a + i]);
        gmax = std::max(gmax, std::abs(d) / (sg * bar.length));
    }
    out.max_strain_gauge = gmax;
    return out;
}

double optimal_mass_value(const DiscreteDomain& dom, const ElasticLaw& law, const MKSolution& sol, double rel_tol,
                          double* compliance_out) {
    if (!sol.converged) fail(ErrorCode::NonConvergence, "optimal mass needs a converged transport solution");
    const double value = 0.5 * sol.I * sol.I;
    if (sol.I == 0.0) {
        if (compliance_out) *compliance_out = 0.0;
        return 0.0;
    }
    if (dom.scalar()) return value;
    ComplianceOptions copts;
    copts.tol = 1e-6;
    const ComplianceReport rep = compliance_E(dom, sol.mu_opt, law, std::nullopt, copts);
    if (compliance_out) *compliance_out = rep.value;
    if (!rep.finite || std::abs(rep.value - value) > rel_tol * value)
        fail(ErrorCode::Inconsistent, "I^2/2 = " + std::to_string(value) + " but the relaxed compliance of mu_opt is " +
                                          std::to_string(rep.value));
    return value;
}

} // namespace vmass
