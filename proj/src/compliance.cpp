#include "vmass/compliance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/SparseCholesky>

#include "vmass/error.hpp"

namespace vmass {

const char* to_string(LawKind k) {
    switch (k) {
    case LawKind::J: return "j";
    case LawKind::JBar: return "j_bar";
    case LawKind::JK: return "j_k";
    }
    return "unknown";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
using SpMat = Eigen::SparseMatrix<double>;

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

// Reduced linear system on the free dofs of the supported material.
struct System {
    const DiscreteDomain* dom = nullptr;
    const ElasticLaw* law = nullptr;
    std::vector<int> red_of_dof;
    std::vector<int> dof_of_red;
    int nq = 1;                 // Gauss points per cell
    std::vector<double> weight; // cell volume * density / nq, per Gauss point
    std::vector<int> active_points;
    std::vector<double> pw;     // pairing weights per strain row
    SparseMatrix B;             // strain rows at the Gauss points, reduced columns
    SpMat Kx;                   // bars (+ rigid-mode regularization)
    SpMat K;                    // full quadratic stiffness
    Eigen::VectorXd F;
    std::string diagnosis;
    bool supported = true;
    double regularization = 0.0;
};

// Packed Hessian of j: alpha t t^T + 2 beta diag(w).
Eigen::MatrixXd law_hessian(const DiscreteDomain& dom, const ElasticLaw& law) {
    const int ns = dom.nstrain();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(ns, ns);
    if (dom.scalar()) return 2.0 * law.beta() * Eigen::MatrixXd::Identity(ns, ns);
    for (int a = 0; a < ns; ++a) H(a, a) = 2.0 * law.beta() * (a < dom.dim() ? 1.0 : 2.0);
    for (int a = 0; a < dom.dim(); ++a)
        for (int b = 0; b < dom.dim(); ++b) H(a, b) += law.alpha();
    return H;
}

std::string node_label(const DiscreteDomain& dom, int node) {
    const Vec3 x = dom.node_position(node);
    std::string s = "node " + std::to_string(node) + " at (" + std::to_string(x[0]) + ", " + std::to_string(x[1]);
    if (dom.dim() == 3) s += ", " + std::to_string(x[2]);
    return s + ")";
}

// density: per-cell density (already including any floor); bars with their
// linear densities. Nodes not touched by material are eliminated; loads on
// them, or on material floating free of the clamp, make the system unsupported.
System build_system(const DiscreteDomain& dom, const ElasticLaw& law, const std::vector<double>& density,
                    const std::vector<std::pair<Bar, double>>& bars) {
    System s;
    s.dom = &dom;
    s.law = &law;
    const int nc = dom.ncomp(), ns = dom.nstrain();
    const double vol = dom.cell_volume();
    s.nq = gauss_points_per_cell(dom);
    s.weight.assign(static_cast<std::size_t>(dom.num_cells()) * s.nq, 0.0);
    UnionFind uf(dom.num_nodes());
    std::vector<char> touched(dom.num_nodes(), 0);
    for (int c = 0; c < dom.num_cells(); ++c) {
        if (density[c] <= 0.0) continue;
        for (int q = 0; q < s.nq; ++q) {
            s.weight[s.nq * c + q] = vol * density[c] / s.nq;
            s.active_points.push_back(s.nq * c + q);
        }
        const auto nodes = dom.cell_nodes(c);
        for (int k = 0; k < dom.corners(); ++k) {
            touched[nodes[k]] = 1;
            uf.unite(nodes[0], nodes[k]);
        }
    }
    for (const auto& [bar, rho] : bars) {
        if (rho <= 0.0) continue;
        touched[bar.a] = touched[bar.b] = 1;
        uf.unite(bar.a, bar.b);
    }
    const bool any_clamp = dom.any_clamped();
    std::vector<char> root_clamped(dom.num_nodes(), 0);
    for (int n = 0; n < dom.num_nodes(); ++n)
        if (touched[n] && dom.clamped(n)) root_clamped[uf.find(n)] = 1;

    const std::vector<double> f = dom.nodal_load();
    s.red_of_dof.assign(dom.num_dofs(), -1);
    bool floating_loaded = false;
    for (int n = 0; n < dom.num_nodes(); ++n) {
        if (dom.clamped(n)) continue;
        bool loaded = false;
        for (int i = 0; i < nc; ++i) loaded = loaded || f[nc * n + i] != 0.0;
        if (!touched[n]) {
            if (loaded && s.supported) {
                s.supported = false;
                s.diagnosis = "load at " + node_label(dom, n) + " lies outside the support of mu";
            }
            continue;
        }
        const bool anchored = root_clamped[uf.find(n)] != 0;
        if (!anchored && any_clamp) {
            if (loaded && s.supported) {
                s.supported = false;
                s.diagnosis = "load at " + node_label(dom, n) + " sits on material not connected to the clamp";
            }
            continue;
        }
        if (!anchored) floating_loaded = floating_loaded || loaded;
        for (int i = 0; i < nc; ++i) {
            s.red_of_dof[nc * n + i] = static_cast<int>(s.dof_of_red.size());
            s.dof_of_red.push_back(nc * n + i);
        }
    }
    if (!s.supported) return s;
    if (!any_clamp && !dom.self_equilibrated(1e-10)) {
        s.supported = false;
        s.diagnosis = "no clamp and the load is not self-equilibrated";
        return s;
    }
    const int nr = static_cast<int>(s.dof_of_red.size());
    s.F = Eigen::VectorXd::Zero(nr);
    for (int r = 0; r < nr; ++r) s.F[r] = f[s.dof_of_red[r]];

    // Column selection full dofs -> reduced.
    std::vector<Eigen::Triplet<double>> sel;
    for (int r = 0; r < nr; ++r) sel.emplace_back(s.dof_of_red[r], r, 1.0);
    SpMat P(dom.num_dofs(), nr);
    P.setFromTriplets(sel.begin(), sel.end());
    s.B = SparseMatrix(gauss_strain_matrix(dom) * P);
    s.pw.assign(s.B.rows(), 1.0);
    if (!dom.scalar())
        for (Eigen::Index r = 0; r < s.B.rows(); ++r)
            if (r % ns >= dom.dim()) s.pw[r] = 2.0;

    const Eigen::MatrixXd H = law_hessian(dom, law);
    std::vector<Eigen::Triplet<double>> dt;
    for (int q : s.active_points)
        for (int a = 0; a < ns; ++a)
            for (int b = 0; b < ns; ++b)
                if (H(a, b) != 0.0) dt.emplace_back(ns * q + a, ns * q + b, s.weight[q] * H(a, b));
    SpMat D(s.B.rows(), s.B.rows());
    D.setFromTriplets(dt.begin(), dt.end());
    const SpMat Bc(s.B);
    SpMat Kgrid = SpMat(Bc.transpose() * D * Bc);

    s.Kx = SpMat(nr, nr);

    // Bars: stiffness density / (g L) along the bar direction.
    if (!bars.empty()) {
        const double g = dom.scalar() ? 1.0 / (2.0 * law.beta()) : law.rank_one_coefficient();
        std::vector<Eigen::Triplet<double>> bt;
        for (const auto& [bar, rho] : bars) {
            if (rho <= 0.0) continue;
            const double kb = rho / (g * bar.length);
            std::array<int, 6> idx{};
            std::array<double, 6> val{};
            int m = 0;
            for (int i = 0; i < nc; ++i) {
                idx[m] = s.red_of_dof[nc * bar.a + i];
                val[m++] = -(dom.scalar() ? 1.0 : bar.dir[i]);
                idx[m] = s.red_of_dof[nc * bar.b + i];
                val[m++] = dom.scalar() ? 1.0 : bar.dir[i];
            }
            for (int p = 0; p < m; ++p)
                for (int q = 0; q < m; ++q)
                    if (idx[p] >= 0 && idx[q] >= 0 && val[p] != 0.0 && val[q] != 0.0)
                        bt.emplace_back(idx[p], idx[q], kb * val[p] * val[q]);
        }
        SpMat Kb(nr, nr);
        Kb.setFromTriplets(bt.begin(), bt.end());
        s.Kx += Kb;
    }
    s.K = Kgrid + s.Kx;
    if (!any_clamp && nr > 0) {
        // Rigid motions are in the kernel; a tiny shift selects one solution.
        double dmax = 0.0;
        for (int r = 0; r < nr; ++r) dmax = std::max(dmax, s.K.coeff(r, r));
        s.regularization = 1e-12 * dmax;
        SpMat I(nr, nr);
        I.setIdentity();
        s.K += s.regularization * I;
        s.Kx += s.regularization * I;
    }
    (void)floating_loaded;
    return s;
}

struct Factor {
    Eigen::SimplicialLDLT<SpMat> ldlt;
    bool ok = false;
};

void factorize(const System& s, Factor& f) {
    f.ldlt.compute(s.K);
    f.ok = f.ldlt.info() == Eigen::Success;
    if (!f.ok) return;
    const Eigen::VectorXd d = f.ldlt.vectorD();
    if (d.size() == 0) return;
    const double dmax = d.cwiseAbs().maxCoeff();
    // Zero-energy modes (hinges between cells touching at a corner, loose
    // bar chains) show up as vanishing pivots.
    if (d.minCoeff() <= 1e-13 * dmax) f.ok = false;
}

std::vector<double> full_field(const System& s, const Eigen::VectorXd& ured) {
    std::vector<double> u(s.dom->num_dofs(), 0.0);
    for (std::size_t r = 0; r < s.dof_of_red.size(); ++r) u[s.dof_of_red[r]] = ured[static_cast<Eigen::Index>(r)];
    return u;
}

double mean_density(const DiscreteDomain& dom, const DensityMeasure& mu) { return mu.total_mass() / dom.volume(); }

// Packed stress of a packed strain under j.
void law_stress(const DiscreteDomain& dom, const ElasticLaw& law, const double* e, double* sig) {
    const int ns = dom.nstrain();
    if (dom.scalar()) {
        for (int a = 0; a < ns; ++a) sig[a] = 2.0 * law.beta() * e[a];
        return;
    }
    double tr = 0.0;
    for (int a = 0; a < dom.dim(); ++a) tr += e[a];
    for (int a = 0; a < ns; ++a) sig[a] = 2.0 * law.beta() * e[a] + (a < dom.dim() ? law.alpha() * tr : 0.0);
}

struct QuadSolve {
    bool finite = false;
    bool mechanism = false;
    double value = kInf;
    Eigen::VectorXd u;
    double residual = 0.0; // max |K u - F| without any mechanism shift
    std::string diagnosis;
};

// Unloaded zero-energy modes (a bar pinned at one end, a loose cell corner)
// leave K singular while F still lies in its range. A tiny diagonal shift
// picks the minimal solution; the residual against the unshifted K tells
// whether the load actually drives the mechanism.
QuadSolve solve_quadratic(System& s) {
    QuadSolve out;
    if (!s.supported) {
        out.diagnosis = s.diagnosis;
        return out;
    }
    if (s.F.size() == 0 || s.F.cwiseAbs().maxCoeff() == 0.0) {
        out.finite = true;
        out.value = 0.0;
        out.u = Eigen::VectorXd::Zero(s.F.size());
        return out;
    }
    Factor f;
    factorize(s, f);
    if (!f.ok) {
        const Eigen::Index nr = s.K.rows();
        double dmax = 0.0;
        for (Eigen::Index r = 0; r < nr; ++r) dmax = std::max(dmax, s.K.coeff(r, r));
        const double shift = 1e-10 * dmax;
        SpMat I(nr, nr);
        I.setIdentity();
        const SpMat K0 = s.K;
        s.K += shift * I;
        f.ldlt.compute(s.K);
        Eigen::VectorXd u = f.ldlt.solve(s.F);
        // The shift can be comparable to the softest loaded mode (long slender
        // strips), so refine until the residual stops shrinking.
        double res = (s.F - K0 * u).norm();
        for (int r = 0; r < 500 && u.allFinite() && res > 1e-14 * s.F.norm(); ++r) {
            const Eigen::VectorXd next = u + f.ldlt.solve(s.F - K0 * u);
            const double rn = (s.F - K0 * next).norm();
            if (!(rn < 0.999 * res)) break;
            u = next;
            res = rn;
        }
        if (f.ldlt.info() != Eigen::Success || !u.allFinite() ||
            (K0 * u - s.F).norm() > 1e-6 * s.F.norm()) {
            s.K = K0;
            out.mechanism = true;
            out.diagnosis = "stiffness of the supported material is singular (zero-energy mechanism)";
            return out;
        }
        s.Kx += shift * I;
        s.regularization += shift;
        out.u = u;
        out.residual = (K0 * u - s.F).cwiseAbs().maxCoeff();
    } else {
        out.u = f.ldlt.solve(s.F);
        for (int r = 0; r < 2; ++r) out.u += f.ldlt.solve(s.F - s.K * out.u);
        out.residual = (s.K * out.u - s.F).cwiseAbs().maxCoeff();
    }
    out.finite = true;
    out.value = 0.5 * s.F.dot(out.u);
    return out;
}

QuadSolve prepare(const DiscreteDomain& dom, const ElasticLaw& law, const std::vector<double>& density,
                  const std::vector<std::pair<Bar, double>>& bars, System& s) {
    s = build_system(dom, law, density, bars);
    return solve_quadratic(s);
}

std::vector<double> floored_density(const DiscreteDomain& dom, const DensityMeasure& mu, double floor) {
    std::vector<double> d(dom.num_cells(), floor);
    if (!mu.density().empty())
        for (int c = 0; c < dom.num_cells(); ++c) d[c] += mu.density()[c];
    return d;
}

void fill_stress(const System& s, const Eigen::VectorXd& ured, ComplianceReport& rep) {
    const DiscreteDomain& dom = *s.dom;
    const int ns = dom.nstrain();
    rep.stress.dim = dom.dim();
    rep.stress.nstrain = ns;
    rep.stress.values.assign(static_cast<std::size_t>(ns) * dom.num_cells(), 0.0);
    const Eigen::VectorXd e = s.B * ured;
    double sig[6];
    for (int q : s.active_points) {
        law_stress(dom, *s.law, e.data() + ns * q, sig);
        const int c = q / s.nq;
        for (int a = 0; a < ns; ++a) rep.stress.values[ns * c + a] += sig[a] / s.nq;
    }
    rep.displacement.ncomp = dom.ncomp();
    rep.displacement.values = full_field(s, ured);
}

// Richardson extrapolation in the floor (values linear in delta to leading order).
void extrapolate(ComplianceReport& rep) {
    const auto& lad = rep.floor_ladder;
    const std::size_t n = lad.size();
    if (n == 1) {
        rep.value = lad[0].second;
        return;
    }
    auto ext = [&](std::size_t i) {
        const double r = lad[i].first / lad[i + 1].first;
        return lad[i + 1].second + (lad[i + 1].second - lad[i].second) / (r - 1.0);
    };
    // Growth like 1/delta means the load is not carried by mu itself.
    const double g1 = lad[n - 1].second / lad[n - 2].second;
    const double r1 = lad[n - 2].first / lad[n - 1].first;
    if (g1 > 0.5 * r1 && (n < 3 || lad[n - 2].second / lad[n - 3].second > 0.5 * lad[n - 3].first / lad[n - 2].first)) {
        rep.finite = false;
        rep.value = kInf;
        rep.diagnosis = "compliance grows like 1/floor: the load is not supported by mu";
        return;
    }
    rep.value = ext(n - 2);
    rep.extrapolation_residual = n >= 3 ? std::abs(ext(n - 2) - ext(n - 3)) : 0.0;
}

} // namespace

std::vector<std::pair<Bar, double>> segments_to_bars(const DiscreteDomain& dom, const std::vector<Segment>& segs) {
    std::vector<std::pair<Bar, double>> out;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const auto na = dom.find_node(segs[i].a), nb = dom.find_node(segs[i].b);
        if (!na || !nb) fail(ErrorCode::InputError, "segment " + std::to_string(i) + " has an endpoint off the grid nodes");
        const auto a = dom.node_ijk(*na), b = dom.node_ijk(*nb);
        std::array<int, 3> d{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
        const int g = std::gcd(std::gcd(std::abs(d[0]), std::abs(d[1])), std::abs(d[2]));
        require(g > 0, "segment " + std::to_string(i) + " has zero length");
        for (int k = 0; k < g; ++k) {
            const int p = dom.node_index(a[0] + k * d[0] / g, a[1] + k * d[1] / g, a[2] + k * d[2] / g);
            const int q = dom.node_index(a[0] + (k + 1) * d[0] / g, a[1] + (k + 1) * d[1] / g, a[2] + (k + 1) * d[2] / g);
            out.emplace_back(make_bar(dom, p, q), segs[i].density);
        }
    }
    return out;
}

namespace {

double max_density(const DensityMeasure& mu) {
    double m = 0.0;
    for (double d : mu.density()) m = std::max(m, d);
    for (const Segment& sg : mu.segments()) m = std::max(m, sg.density);
    return m;
}

ComplianceReport compliance_c_unit(const DiscreteDomain& dom, const DensityMeasure& mu, const ElasticLaw& law,
                                   const ComplianceOptions& opts);

} // namespace

// c(t mu) = c(mu) / t: the solve runs on mu / max density so the stiffness
// matrix does not depend on the overall scale of mu.
ComplianceReport compliance_c(const DiscreteDomain& dom, const DensityMeasure& mu, const ElasticLaw& law,
                              const ComplianceOptions& opts) {
    require(law.dim() == dom.dim(), "law and grid dimensions differ");
    mu.validate();
    const double t = max_density(mu);
    if (t == 1.0 || !(t > 0.0)) return compliance_c_unit(dom, mu, law, opts);
    DensityMeasure unit = mu;
    for (double& d : unit.density()) d /= t;
    for (Segment& sg : unit.segments()) sg.density /= t;
    ComplianceReport rep = compliance_c_unit(dom, unit, law, opts);
    rep.value /= t;
    rep.primal /= t;
    rep.dual /= t;
    rep.floor *= t;
    for (auto& [fl, v] : rep.floor_ladder) {
        fl *= t;
        v /= t;
    }
    for (double& u : rep.displacement.values) u /= t;
    for (double& sg : rep.stress.values) sg /= t;
    return rep;
}

namespace {

ComplianceReport compliance_c_unit(const DiscreteDomain& dom, const DensityMeasure& mu, const ElasticLaw& law,
                                   const ComplianceOptions& opts) {
    ComplianceReport rep;
    rep.law = LawKind::J;
    rep.k = dom.dim();
    const auto bars = segments_to_bars(dom, mu.segments());
    const std::vector<double> f = dom.nodal_load();
    if (std::all_of(f.begin(), f.end(), [](double v) { return v == 0.0; })) {
        rep.displacement = {dom.ncomp(), std::vector<double>(dom.num_dofs(), 0.0)};
        rep.stress = {dom.dim(), dom.nstrain(), std::vector<double>(dom.nstrain() * dom.num_cells(), 0.0), {}};
        return rep;
    }
    if (!opts.force_floor) {
        System s;
        const QuadSolve q = prepare(dom, law, floored_density(dom, mu, 0.0), bars, s);
        if (q.finite) {
            rep.value = rep.primal = rep.dual = q.value;
            fill_stress(s, q.u, rep);
            rep.equilibrium_residual = q.residual;
            return rep;
        }
        if (!q.mechanism) {
            rep.finite = false;
            rep.value = rep.primal = rep.dual = kInf;
            rep.diagnosis = q.diagnosis;
            return rep;
        }
    }
    const double mean = mean_density(dom, mu);
    require(mean > 0.0, "compliance of a zero measure");
    for (double fl : opts.floors) {
        System s;
        const QuadSolve q = prepare(dom, law, floored_density(dom, mu, fl * mean), bars, s);
        if (!q.finite) {
            rep.finite = false;
            rep.value = rep.primal = rep.dual = kInf;
            rep.diagnosis = q.diagnosis;
            return rep;
        }
        rep.floor_ladder.emplace_back(fl * mean, q.value);
        rep.floor = fl * mean;
        fill_stress(s, q.u, rep);
        rep.equilibrium_residual = q.residual;
    }
    extrapolate(rep);
    rep.primal = rep.dual = rep.value;
    return rep;
}

struct AdmmOut {
    Eigen::VectorXd u;
    double primal = -kInf;
    double dual = kInf;
    int iterations = 0;
    bool converged = false;
    std::vector<double> stress;
};

// ADMM on  min sum_c w_c j_k(e_c) + 1/2 u.Kx u - F.u  s.t.  e = B u,
// in the Frobenius pairing weighted by the Gauss-point masses. The stress
// s + rho (Bu - e_old) right after the u-step is exactly equilibrated
// (B^T D_w sigma + Kx u = F), so it gives a dual bound at every iteration.
AdmmOut run_admm(const System& s, const ElasticLaw& law, int k, const Eigen::VectorXd& u0,
                 const ComplianceOptions& opts) {
    const DiscreteDomain& dom = *s.dom;
    const int ns = dom.nstrain(), dim = dom.dim();
    const Eigen::Index m = s.B.rows();
    Eigen::VectorXd dw = Eigen::VectorXd::Zero(m);
    for (int q : s.active_points)
        for (int a = 0; a < ns; ++a) dw[ns * q + a] = s.weight[q] * s.pw[ns * q + a];
    const SpMat Bc(s.B);
    const SpMat BtDB = SpMat(Bc.transpose() * dw.asDiagonal() * Bc);

    double rho = 2.0 * law.beta();
    Eigen::SimplicialLDLT<SpMat> fac;
    fac.analyzePattern(SpMat(s.Kx + BtDB));
    auto refactor = [&] {
        fac.factorize(SpMat(s.Kx + rho * BtDB));
        if (fac.info() != Eigen::Success) fail(ErrorCode::Internal, "ADMM system factorization failed");
    };
    refactor();

    auto primal_of = [&](const Eigen::VectorXd& u) {
        const Eigen::VectorXd e = s.B * u;
        double v = s.F.dot(u) - 0.5 * u.dot(s.Kx * u);
        for (int q : s.active_points) v -= s.weight[q] * eval_j_k(law, k, unpack_strain(dim, e.data() + ns * q));
        return v;
    };
    auto dual_of = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& sig) {
        double v = 0.5 * u.dot(s.Kx * u);
        for (int q : s.active_points) v += s.weight[q] * eval_j_k_star(law, k, unpack_strain(dim, sig.data() + ns * q));
        return v;
    };
    auto prox_all = [&](const Eigen::VectorXd& x, Eigen::VectorXd& e) {
        for (int q : s.active_points) {
            const SymTensor y = prox_j_k(law, k, unpack_strain(dim, x.data() + ns * q), 1.0 / rho);
            pack_strain(y, e.data() + ns * q);
        }
    };

    AdmmOut out;
    Eigen::VectorXd u = u0;
    Eigen::VectorXd e = s.B * u;
    Eigen::VectorXd sg = Eigen::VectorXd::Zero(m);
    for (int q : s.active_points) {
        double packed[6];
        pack_strain(grad_j_k(law, k, unpack_strain(dim, e.data() + ns * q)), packed);
        for (int a = 0; a < ns; ++a) sg[ns * q + a] = packed[a];
    }
    out.u = u;
    out.primal = primal_of(u);
    for (int it = 1; it <= opts.max_iterations; ++it) {
        const Eigen::VectorXd rhs = s.F - Bc.transpose() * dw.cwiseProduct(sg - rho * e);
        u = fac.solve(rhs);
        const Eigen::VectorXd bu = s.B * u;
        const Eigen::VectorXd sig_eq = sg + rho * (bu - e);
        const Eigen::VectorXd e_old = e;
        prox_all(bu + sg / rho, e);
        sg += rho * (bu - e);
        out.iterations = it;

        if (it % opts.gap_every == 0 || it == opts.max_iterations) {
            const double p = primal_of(u);
            if (p > out.primal) {
                out.primal = p;
                out.u = u;
            }
            const double d = dual_of(u, sig_eq);
            if (d < out.dual) {
                out.dual = d;
                out.stress.assign(static_cast<std::size_t>(ns) * dom.num_cells(), 0.0);
                for (int q : s.active_points)
                    for (int a = 0; a < ns; ++a) out.stress[ns * (q / s.nq) + a] += sig_eq[ns * q + a] / s.nq;
            }
            if ((out.dual - out.primal) / std::max(1.0, std::abs(out.dual)) <= opts.tol) {
                out.converged = true;
                break;
            }
            // Residual balancing, each residual relative to its own scale.
            auto dnorm = [&](const Eigen::VectorXd& x) { return std::sqrt(x.dot(dw.cwiseProduct(x))); };
            const double r_prim = dnorm(bu - e) / std::max({dnorm(bu), dnorm(e), 1e-300});
            const double r_dual = rho * (Bc.transpose() * dw.cwiseProduct(e - e_old)).norm() /
                                  std::max((Bc.transpose() * dw.cwiseProduct(sg)).norm(), 1e-300);
            const double rho0 = 2.0 * law.beta();
            if (r_prim > 10.0 * r_dual && rho < 1e4 * rho0) {
                rho *= 2.0;
                refactor();
            } else if (r_dual > 10.0 * r_prim && rho > 1e-4 * rho0) {
                rho *= 0.5;
                refactor();
            }
        }
    }
    return out;
}

} // namespace

ComplianceReport compliance_E(const DiscreteDomain& dom, const DensityMeasure& mu, const ElasticLaw& law,
                              std::optional<int> k_opt, const ComplianceOptions& opts) {
    require(law.dim() == dom.dim(), "law and grid dimensions differ");
    require(!dom.scalar(), "compliance_E needs a vector-mode grid");
    const int k = k_opt.value_or(dom.dim() - 1);
    require(k >= 0 && k <= dom.dim(), "rank bound k must lie in [0, dim]");
    if (k == dom.dim()) {
        ComplianceReport rep = compliance_c(dom, mu, law, opts);
        rep.law = LawKind::JK;
        return rep;
    }
    mu.validate();
    ComplianceReport rep;
    rep.law = k == dom.dim() - 1 ? LawKind::JBar : LawKind::JK;
    rep.k = k;
    const std::vector<double> f = dom.nodal_load();
    if (std::all_of(f.begin(), f.end(), [](double v) { return v == 0.0; })) {
        rep.displacement = {dom.ncomp(), std::vector<double>(dom.num_dofs(), 0.0)};
        rep.stress = {dom.dim(), dom.nstrain(), std::vector<double>(dom.nstrain() * dom.num_cells(), 0.0), {}};
        return rep;
    }
    if (k == 0) {
        rep.finite = false;
        rep.value = rep.primal = rep.dual = kInf;
        rep.diagnosis = "j_0 vanishes, so no nonzero load can be balanced";
        return rep;
    }
    const auto bars = segments_to_bars(dom, mu.segments());

    auto one = [&](double floor_density, double& primal, double& dual, bool& singular) -> bool {
        System s;
        const QuadSolve q = prepare(dom, law, floored_density(dom, mu, floor_density), bars, s);
        singular = q.mechanism;
        if (!q.finite) {
            rep.diagnosis = q.diagnosis;
            return false;
        }
        const AdmmOut fo = run_admm(s, law, k, q.u, opts);
        if (!fo.converged)
            fail(ErrorCode::NonConvergence, "compliance_E did not reach the gap target: primal " +
                                                std::to_string(fo.primal) + ", dual " + std::to_string(fo.dual));
        primal = fo.primal;
        dual = fo.dual;
        rep.iterations += fo.iterations;
        rep.displacement = {dom.ncomp(), full_field(s, fo.u)};
        rep.stress = {dom.dim(), dom.nstrain(), fo.stress, {}};
        return true;
    };

    double p = 0.0, d = 0.0;
    bool singular = false;
    if (!opts.force_floor) {
        if (one(0.0, p, d, singular)) {
            rep.primal = p;
            rep.dual = d;
            rep.value = p;
            rep.gap = (d - p) / std::max(1.0, d);
            return rep;
        }
        if (!singular) {
            rep.finite = false;
            rep.value = rep.primal = rep.dual = kInf;
            return rep;
        }
    }
    const double mean = mean_density(dom, mu);
    double worst_gap = 0.0;
    for (double fl : opts.floors) {
        if (!one(fl * mean, p, d, singular)) {
            rep.finite = false;
            rep.value = rep.primal = rep.dual = kInf;
            return rep;
        }
        rep.floor = fl * mean;
        rep.floor_ladder.emplace_back(fl * mean, p);
        worst_gap = std::max(worst_gap, (d - p) / std::max(1.0, d));
    }
    extrapolate(rep);
    rep.primal = rep.dual = rep.value;
    rep.gap = worst_gap;
    return rep;
}

double compliance_c_eps(const DiscreteDomain& dom, const std::vector<int>& omega, double eps, const ElasticLaw& law,
                        const ComplianceOptions& opts) {
    require(eps > 0.0, "eps must be positive");
    const double vol = dom.cell_volume() * static_cast<double>(omega.size());
    if (std::abs(vol - eps) > dom.cell_volume() * (1.0 + 1e-12))
        fail(ErrorCode::InputError, "|omega| must equal eps within one cell volume");
    return compliance_c(dom, DensityMeasure::indicator(dom, omega, eps), law, opts).value;
}

} // namespace vmass
