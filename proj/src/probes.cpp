#include "vmass/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>

#include "vmass/error.hpp"
#include "vmass/mk_solver.hpp"

namespace vmass {

DiscreteYoungMeasure::DiscreteYoungMeasure(int dim, std::vector<std::pair<double, SymTensor>> atoms)
    : dim_(dim), atoms_(std::move(atoms)), barycenter_(dim) {
    require(dim == 2 || dim == 3, "Young measure dimension must be 2 or 3");
    require(!atoms_.empty(), "Young measure needs at least one atom");
    double total = 0.0;
    for (const auto& [w, xi] : atoms_) {
        require(std::isfinite(w) && w > 0.0, "Young measure weights must be positive");
        require(xi.dim() == dim, "Young measure atom has the wrong dimension");
        total += w;
    }
    for (auto& [w, xi] : atoms_) {
        w /= total;
        barycenter_ += w * xi;
    }
}

bool DiscreteYoungMeasure::consistent(double tol) const {
    SymTensor b(dim_);
    double total = 0.0;
    for (const auto& [w, xi] : atoms_) {
        b += w * xi;
        total += w;
    }
    double scale = 1.0;
    for (const auto& [w, xi] : atoms_) scale = std::max(scale, xi.norm());
    return std::abs(total - 1.0) <= tol * 10 && (b - barycenter_).norm() <= tol * scale * 10;
}

double DiscreteYoungMeasure::weight_near(const SymTensor& xi, double tol) const {
    double w = 0.0;
    for (const auto& [wi, a] : atoms_)
        if ((a - xi).norm() <= tol) w += wi;
    return w;
}

// ---------------------------------------------------------------------------

GammaSweepReport gamma_upper_sweep(const DiscreteDomain& dom, const DensityMeasure& target,
                                   const std::vector<double>& eps_ladder, const ElasticLaw& law, double band) {
    require(!eps_ladder.empty(), "empty eps ladder");
    for (std::size_t i = 0; i < eps_ladder.size(); ++i) {
        require(eps_ladder[i] > 0.0, "eps must be positive");
        if (i > 0) require(eps_ladder[i] < eps_ladder[i - 1], "eps ladder must be strictly decreasing");
    }
    require(target.has_segments() && target.segment_mass() > 0.0, "sweep target needs a segment part with mass");

    GammaSweepReport rep;
    const ComplianceReport c = compliance_c(dom, target, law);
    const ComplianceReport e = compliance_E(dom, target, law);
    rep.c_target = c.value;
    rep.E_target = e.value;
    for (double eps : eps_ladder) {
        FattenResult f = fatten(dom, target, eps);
        const ComplianceReport ce = compliance_c(dom, f.measure, law);
        rep.steps.push_back({eps, ce.value, ce.finite, f.covered_volume, std::move(f.warnings)});
    }
    const GammaSweepStep& last = rep.steps.back();
    rep.limsup_estimate = last.c_eps;
    rep.upper_bound_holds = last.finite && last.c_eps <= rep.E_target * (1.0 + band);
    return rep;
}

// ---------------------------------------------------------------------------

namespace {

// Radial potential in period units: r^2/2 up to r1, a cubic with matching
// value, slope and curvature at r1 and zero slope at r2, constant beyond.
struct RadialPotential {
    double r1, r2, b, c, d, top;
    RadialPotential(double r1_, double r2_) : r1(r1_), r2(r2_) {
        const double len = r2 - r1;
        b = r1 * len;
        c = 0.5 * len * len;
        d = -(b + 2.0 * c) / 3.0;
        top = 0.5 * r1 * r1 + b + c + d;
    }
    double operator()(double s) const {
        if (s <= r1) return 0.5 * s * s;
        if (s >= r2) return top;
        const double t = (s - r1) / (r2 - r1);
        return 0.5 * r1 * r1 + t * (b + t * (c + t * d));
    }
};

} // namespace

SeppecherField seppecher_field(double eps, int resolution) {
    require(eps > 0.0 && eps < 1.0, "eps must lie in (0, 1)");
    require(resolution > 0, "resolution must be positive");
    const double periods = 1.0 / eps;
    if (std::abs(periods - std::round(periods)) > 1e-9)
        fail(ErrorCode::InputError, "1/eps must be an integer so that the periods tile the unit square");
    const double cpp_real = eps * resolution;
    if (std::abs(cpp_real - std::round(cpp_real)) > 1e-9)
        fail(ErrorCode::InputError, "eps * resolution must be an integer (whole cells per period)");
    const int cpp = static_cast<int>(std::lround(cpp_real));
    const int np = static_cast<int>(std::lround(periods));

    const double r = std::sqrt(eps / std::numbers::pi);
    const double hy = 1.0 / cpp; // cell size in period units
    if (2.0 * r < 8.0 * hy)
        fail(ErrorCode::Unresolved, "ball diameter spans " + std::to_string(2.0 * r / hy) +
                                        " cells per period; at least 8 are needed (raise the resolution)");
    // The 3x3 Airy stencil reaches sqrt(2) cells from a cell centre, so the
    // potential stays quadratic a bit past r and every rasterized ball cell
    // carries the identity exactly.
    const double r1 = r + 1.5 * hy, r2 = 2.0 * r;
    if (r2 + 2.0 * hy >= 0.5)
        fail(ErrorCode::InputError, "eps too large: the stress support would leave its period cell");
    if (r1 >= r2) fail(ErrorCode::Unresolved, "resolution too coarse for the transition layer");
    const RadialPotential A(r1, r2);

    SeppecherField out{eps, r, cpp, DiscreteDomain(2, {np * cpp, np * cpp, 1}, 1.0 / (np * cpp), {-0.5, -0.5, 0}),
                       {}, {}, {}};
    const DiscreteDomain& dom = out.dom;
    const int n = np * cpp;
    const double h = dom.h();

    // Potential at cell centres in x units: eps^2 A(|y|), y the offset from
    // the ball centre in period units.
    auto phi = [&](int i, int j) {
        const int li = ((i % cpp) + cpp) % cpp, lj = ((j % cpp) + cpp) % cpp;
        const double y0 = (li + 0.5) * hy - 0.5, y1 = (lj + 0.5) * hy - 0.5;
        return eps * eps * A(std::hypot(y0, y1));
    };

    out.mu = DensityMeasure(dom);
    out.sigma = {2, 3, std::vector<double>(static_cast<std::size_t>(3) * dom.num_cells(), 0.0), {}};
    const double ih2 = 1.0 / (h * h);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            double f[3][3];
            for (int a = -1; a <= 1; ++a)
                for (int b = -1; b <= 1; ++b) f[a + 1][b + 1] = phi(i + a, j + b);
            // xx = (avg_x)^2 (d_y)^2, yy = (d_x)^2 (avg_y)^2, xy = -(avg_x d_x)(avg_y d_y)
            const double wx[3] = {0.25, 0.5, 0.25};
            double xx = 0.0, yy = 0.0;
            for (int a = 0; a < 3; ++a) {
                xx += wx[a] * (f[a][0] - 2.0 * f[a][1] + f[a][2]);
                yy += wx[a] * (f[0][a] - 2.0 * f[1][a] + f[2][a]);
            }
            const double xy = -0.25 * (f[2][2] - f[2][0] - f[0][2] + f[0][0]);
            const int c = dom.cell_index(i, j);
            double* s = out.sigma.values.data() + 3 * c;
            s[0] = xx * ih2;
            s[1] = yy * ih2;
            s[2] = xy * ih2;
            const int li = i % cpp, lj = j % cpp;
            const double y0 = (li + 0.5) * hy - 0.5, y1 = (lj + 0.5) * hy - 0.5;
            if (std::hypot(y0, y1) < r) {
                out.ball_cells.push_back(c);
                out.mu.density()[c] = 1.0 / eps;
            }
        }

    const std::vector<double> div = discrete_div(dom, out.sigma);
    double smax = 0.0;
    for (double v : out.sigma.values) smax = std::max(smax, std::abs(v));
    for (double v : div) out.div_residual = std::max(out.div_residual, std::abs(v));
    out.div_bound = 1e-8 * smax / h;

    for (int c : out.ball_cells) {
        const SymTensor s = out.sigma.tensor(c);
        out.ball_deviation = std::max(out.ball_deviation, (s - SymTensor::identity(2)).norm());
    }
    const double vol = dom.cell_volume();
    std::vector<std::array<double, 3>> period_sum(static_cast<std::size_t>(np) * np, {0.0, 0.0, 0.0});
    double mu_mass = 0.0;
    for (int c = 0; c < dom.num_cells(); ++c) {
        const double* s = out.sigma.values.data() + 3 * c;
        const double m = out.mu.density()[c] * vol;
        const auto ij = dom.cell_ijk(c);
        auto& ps = period_sum[static_cast<std::size_t>(ij[0] / cpp + np * (ij[1] / cpp))];
        for (int a = 0; a < 3; ++a) {
            out.mean_dx[a] += s[a] * vol;
            out.mean_dmu[a] += s[a] * m;
            ps[a] += s[a] * vol;
        }
        mu_mass += m;
        out.energy += m * out.sigma.tensor(c).dot(out.sigma.tensor(c));
    }
    for (double& v : out.mean_dmu) v /= std::max(mu_mass, 1e-300);
    for (const auto& ps : period_sum)
        for (double v : ps) out.period_mean = std::max(out.period_mean, std::abs(v) / (eps * eps));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

// Lawson-Hanson nonnegative least squares.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const Eigen::Index n = A.cols();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    std::vector<char> passive(static_cast<std::size_t>(n), 0);
    const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff() * b.cwiseAbs().maxCoeff());
    for (int outer = 0; outer < 3 * n + 10; ++outer) {
        const Eigen::VectorXd w = A.transpose() * (b - A * x);
        Eigen::Index t = -1;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[j] && w[j] > tol && (t < 0 || w[j] > w[t])) t = j;
        if (t < 0) break;
        passive[t] = 1;
        for (int inner = 0; inner < 3 * n + 10; ++inner) {
            std::vector<Eigen::Index> idx;
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[j]) idx.push_back(j);
            Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
            const Eigen::VectorXd z = Ap.colPivHouseholderQr().solve(b);
            if (z.minCoeff() > 0.0) {
                x.setZero();
                for (std::size_t k = 0; k < idx.size(); ++k) x[idx[k]] = z[static_cast<Eigen::Index>(k)];
                break;
            }
            double alpha = 1.0;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const double zk = z[static_cast<Eigen::Index>(k)];
                if (zk <= 0.0) alpha = std::min(alpha, x[idx[k]] / (x[idx[k]] - zk));
            }
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const Eigen::Index j = idx[k];
                x[j] += alpha * (z[static_cast<Eigen::Index>(k)] - x[j]);
                if (x[j] <= 1e-15) {
                    x[j] = 0.0;
                    passive[j] = 0;
                }
            }
        }
    }
    return x;
}

YoungFit fit_block(const std::vector<std::pair<double, SymTensor>>& samples, int dim,
                   const std::vector<TestFunction>& psi, const YoungOptions& opts) {
    YoungFit fit;
    for (const auto& s : samples) fit.mass += s.first;
    if (fit.mass <= 0.0) {
        fit.message = "no mass in the probe block";
        return fit;
    }
    double scale = 0.0;
    for (const auto& [m, xi] : samples) scale = std::max(scale, xi.norm());
    scale = std::max(scale, 1e-300);

    // Dictionary: greedy clustering, heaviest samples seed the clusters.
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return samples[a].first > samples[b].first; });
    std::vector<SymTensor> seeds, sums;
    std::vector<double> masses;
    const double radius = opts.cluster_radius * scale;
    for (std::size_t k : order) {
        const auto& [m, xi] = samples[k];
        if (m <= 0.0) continue;
        std::size_t best = seeds.size();
        double dbest = radius;
        for (std::size_t a = 0; a < seeds.size(); ++a) {
            const double d = (xi - seeds[a]).norm();
            if (d <= dbest) {
                dbest = d;
                best = a;
            }
        }
        if (best == seeds.size()) {
            seeds.push_back(xi);
            sums.push_back(SymTensor(dim));
            masses.push_back(0.0);
        }
        sums[best] += m * xi;
        masses[best] += m;
    }
    std::vector<std::size_t> keep(seeds.size());
    std::iota(keep.begin(), keep.end(), 0);
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return masses[a] > masses[b]; });
    if (static_cast<int>(keep.size()) > opts.max_atoms) keep.resize(static_cast<std::size_t>(opts.max_atoms));
    std::vector<SymTensor> atoms;
    for (std::size_t a : keep) atoms.push_back((1.0 / masses[a]) * sums[a]);

    std::vector<TestFunction> tests = psi;
    if (tests.empty()) {
        const double w2 = 2.0 * std::pow(opts.bump_width * scale, 2);
        for (const SymTensor& a : atoms)
            tests.push_back([a, w2](const SymTensor& x) { return std::exp(-(x - a).dot(x - a) / w2); });
    }
    const Eigen::Index nk = static_cast<Eigen::Index>(tests.size()), na = static_cast<Eigen::Index>(atoms.size());
    Eigen::VectorXd mom = Eigen::VectorXd::Zero(nk);
    for (const auto& [m, xi] : samples)
        for (Eigen::Index k = 0; k < nk; ++k) mom[k] += m * tests[static_cast<std::size_t>(k)](xi);
    mom /= fit.mass;
    Eigen::MatrixXd M(nk, na);
    for (Eigen::Index k = 0; k < nk; ++k)
        for (Eigen::Index a = 0; a < na; ++a) M(k, a) = tests[static_cast<std::size_t>(k)](atoms[static_cast<std::size_t>(a)]);
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const auto& sv = svd.singularValues();
    const double cond = sv.size() == 0 || sv[sv.size() - 1] <= 0.0 ? std::numeric_limits<double>::infinity()
                                                                    : sv[0] / sv[sv.size() - 1];
    if (nk < na || cond > opts.max_condition) {
        fit.message = "moment matrix is ill-conditioned (condition " + std::to_string(cond) + ")";
        return fit;
    }
    // Total weight 1 enters as a heavily weighted extra row.
    const double pen = 1e3 * std::max(1.0, M.cwiseAbs().maxCoeff());
    Eigen::MatrixXd Aug(nk + 1, na);
    Aug.topRows(nk) = M;
    Aug.row(nk).setConstant(pen);
    Eigen::VectorXd rhs(nk + 1);
    rhs.head(nk) = mom;
    rhs[nk] = pen;
    const Eigen::VectorXd w = nnls(Aug, rhs);
    fit.residual = (M * w - mom).norm() / std::max(mom.norm(), 1e-300);
    std::vector<std::pair<double, SymTensor>> out;
    for (Eigen::Index a = 0; a < na; ++a)
        if (w[a] > 1e-12) out.emplace_back(w[a], atoms[static_cast<std::size_t>(a)]);
    if (out.empty()) {
        fit.message = "moment fit returned no atoms";
        return fit;
    }
    fit.measure = DiscreteYoungMeasure(dim, std::move(out));
    fit.ok = true;
    return fit;
}

} // namespace

YoungReport young_extract(const DiscreteDomain& dom, const std::vector<std::pair<DensityMeasure, StressField>>& fields,
                          const std::vector<TestFunction>& psi, const YoungOptions& opts) {
    require(!dom.scalar(), "Young measures need a vector-mode grid");
    require(opts.probe_cells > 0 && opts.cluster_radius > 0.0 && opts.bump_width > 0.0 && opts.max_atoms > 0,
            "invalid Young extraction options");
    const int dim = dom.dim(), pc = opts.probe_cells;
    YoungReport rep;
    for (const auto& [mu, sigma] : fields) {
        require(mu.density().size() == static_cast<std::size_t>(dom.num_cells()) &&
                    sigma.values.size() == static_cast<std::size_t>(dom.nstrain()) * dom.num_cells(),
                "field does not live on the common grid");
        const int nblocks = dim == 2 ? pc * pc : pc * pc * pc;
        std::vector<std::vector<std::pair<double, SymTensor>>> samples(static_cast<std::size_t>(nblocks));
        for (int c = 0; c < dom.num_cells(); ++c) {
            const double m = mu.cell_mass(c);
            if (m <= 0.0) continue;
            const auto ijk = dom.cell_ijk(c);
            int block = 0, stride = 1;
            for (int a = 0; a < dim; ++a) {
                block += stride * std::min(pc - 1, ijk[a] * pc / dom.cells(a));
                stride *= pc;
            }
            samples[static_cast<std::size_t>(block)].emplace_back(m, sigma.tensor(c));
        }
        std::vector<YoungFit> fits;
        double res_sum = 0.0;
        int res_n = 0;
        for (int b = 0; b < nblocks; ++b) {
            YoungFit f = fit_block(samples[static_cast<std::size_t>(b)], dim, psi, opts);
            int rem = b;
            for (int a = 0; a < dim; ++a) {
                const double len = dom.cells(a) * dom.h();
                f.centre[a] = dom.origin()[a] + (rem % pc + 0.5) * len / pc;
                rem /= pc;
            }
            if (f.ok) {
                res_sum += f.residual;
                ++res_n;
            }
            fits.push_back(std::move(f));
        }
        rep.mean_residual.push_back(res_n > 0 ? res_sum / res_n : std::numeric_limits<double>::quiet_NaN());
        rep.fits.push_back(std::move(fits));
    }
    return rep;
}

// ---------------------------------------------------------------------------

Conj2Result conj2_check(const DiscreteYoungMeasure& nu, const ElasticLaw& law) {
    require(nu.dim() == law.dim(), "Young measure and law dimensions differ");
    Conj2Result r;
    for (const auto& [w, xi] : nu.atoms()) r.lhs += w * eval_j_star(law, xi);
    r.rhs = eval_j_bar_star(law, nu.barycenter());
    r.satisfied = r.lhs >= r.rhs - 1e-9 * std::max(1.0, std::abs(r.rhs));
    return r;
}

Conj3Report conj3_verify(const DiscreteYoungMeasure& nu0, const std::vector<DiscreteYoungMeasure>& kernels,
                         const ElasticLaw& law) {
    const int dim = law.dim();
    require(nu0.dim() == dim, "Young measure and law dimensions differ");
    require(kernels.size() == nu0.size(), "need one kernel per atom of nu0");
    for (std::size_t i = 0; i < nu0.size(); ++i) {
        const SymTensor& xi = nu0.atoms()[i].second;
        if (rank_eps(xi) >= dim)
            fail(ErrorCode::InputError, "atom " + std::to_string(i) + " of nu0 is not singular (det = " +
                                            std::to_string(xi.det()) + ")");
        require(kernels[i].dim() == dim, "kernel " + std::to_string(i) + " has the wrong dimension");
        if ((kernels[i].barycenter() - xi).norm() > 1e-10 * std::max(1.0, xi.norm()))
            fail(ErrorCode::InputError, "kernel " + std::to_string(i) + " does not have atom " + std::to_string(i) +
                                            " of nu0 as its barycenter");
    }
    std::vector<std::pair<double, SymTensor>> atoms;
    Conj3Report r;
    for (std::size_t i = 0; i < nu0.size(); ++i) {
        const auto& [wi, xi] = nu0.atoms()[i];
        r.q2 += wi * eval_j_star(law, xi);
        r.q3 += wi * eval_j_bar_star(law, xi);
        for (const auto& [v, y] : kernels[i].atoms()) {
            atoms.emplace_back(wi * v, y);
            r.q1 += wi * v * eval_j_star(law, y);
        }
    }
    r.composed = DiscreteYoungMeasure(dim, std::move(atoms));
    r.q4 = eval_j_bar_star(law, r.composed.barycenter());
    auto geq = [](double a, double b) { return a >= b - 1e-9 * std::max(1.0, std::abs(b)); };
    r.chain_holds = geq(r.q1, r.q2) && geq(r.q2, r.q3) && geq(r.q3, r.q4);
    r.conj2 = conj2_check(r.composed, law);
    return r;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> cell_neighbours(const DiscreteDomain& dom, int c) {
    std::vector<int> out;
    const auto ijk = dom.cell_ijk(c);
    for (int a = 0; a < dom.dim(); ++a)
        for (int s : {-1, 1}) {
            auto q = ijk;
            q[a] += s;
            if (q[a] < 0 || q[a] >= dom.cells(a)) continue;
            out.push_back(dom.cell_index(q[0], q[1], q[2]));
        }
    return out;
}

// Face-connected region of k cells grown from the cells touching loaded
// nodes, always adding the frontier cell of highest score.
std::vector<int> grow_subset(const DiscreteDomain& dom, const std::vector<double>& score, int k) {
    std::vector<char> in(static_cast<std::size_t>(dom.num_cells()), 0);
    std::vector<int> out;
    std::vector<std::pair<double, int>> heap;
    auto push = [&](int c) {
        heap.emplace_back(score[c], -c);
        std::push_heap(heap.begin(), heap.end());
    };
    const std::vector<double> f = dom.nodal_load();
    for (int c = 0; c < dom.num_cells(); ++c) {
        const auto nodes = dom.cell_nodes(c);
        for (int q = 0; q < dom.corners(); ++q) {
            bool loaded = false;
            for (int i = 0; i < dom.ncomp(); ++i) loaded = loaded || f[dom.ncomp() * nodes[q] + i] != 0.0;
            if (loaded && !dom.clamped(nodes[q])) {
                push(c);
                break;
            }
        }
    }
    if (heap.empty())
        for (int c = 0; c < dom.num_cells(); ++c) push(c);
    while (static_cast<int>(out.size()) < k && !heap.empty()) {
        std::pop_heap(heap.begin(), heap.end());
        const int c = -heap.back().second;
        heap.pop_back();
        if (in[c]) continue;
        in[c] = 1;
        out.push_back(c);
        for (int nb : cell_neighbours(dom, c))
            if (!in[nb]) push(nb);
    }
    return out;
}

double subset_compliance(const DiscreteDomain& dom, const std::vector<int>& cells, double eps, const ElasticLaw& law,
                         bool* finite) {
    ComplianceOptions o;
    const ComplianceReport r = compliance_c(dom, DensityMeasure::indicator(dom, cells, eps), law, o);
    *finite = r.finite;
    return r.value;
}

} // namespace

GapReport gap_probe(const DiscreteDomain& dom, const std::vector<double>& eps_ladder, const ElasticLaw& law,
                    int max_exchanges) {
    require(!eps_ladder.empty(), "empty eps ladder");
    require(max_exchanges >= 0, "max_exchanges must be nonnegative");
    GapReport rep;
    const MKSolution relaxed = solve_mk_grid(dom, law);
    rep.min_E = 0.5 * relaxed.I * relaxed.I;
    if (dom.scalar()) {
        rep.min_c = rep.min_E; // j = jbar for scalar potentials
    } else {
        MKOptions o;
        o.original_law = true;
        const MKSolution orig = solve_mk_grid(dom, law, o);
        rep.min_c = 0.5 * orig.I * orig.I;
    }

    // Candidate ranking: optimal density smoothed by a few neighbour passes so
    // that cells next to the optimal structure rank above empty ones.
    std::vector<double> score = relaxed.mu_opt.density();
    for (int pass = 0; pass < 3; ++pass) {
        std::vector<double> next(score);
        for (int c = 0; c < dom.num_cells(); ++c)
            for (int nb : cell_neighbours(dom, c)) next[c] += 0.25 * score[nb];
        score = std::move(next);
    }

    for (double eps : eps_ladder) {
        require(eps > 0.0 && eps <= dom.volume() * (1 + 1e-12), "eps must lie in (0, |Omega|]");
        const int k = std::max(1, static_cast<int>(std::lround(eps / dom.cell_volume())));
        const std::vector<int> omega0 = grow_subset(dom, score, k);
        std::vector<int> omega(omega0);
        const double eps_k = k * dom.cell_volume();
        GapStep st;
        st.eps = eps;
        st.cells = k;
        st.c_eps = subset_compliance(dom, omega, eps_k, law, &st.finite);

        // Local exchange: drop the member with the least strain energy, add
        // the outside neighbour with the most, keep the swap if c decreases.
        std::vector<char> in(static_cast<std::size_t>(dom.num_cells()), 0);
        for (int c : omega) in[c] = 1;
        std::vector<char> tried(static_cast<std::size_t>(dom.num_cells()), 0);
        for (int it = 0; it < max_exchanges && st.finite && k < dom.num_cells(); ++it) {
            const ComplianceReport r = compliance_c(dom, DensityMeasure::indicator(dom, omega, eps_k), law);
            std::vector<double> energy(static_cast<std::size_t>(dom.num_cells()), 0.0);
            const std::vector<double> e = discrete_strain_flat(dom, r.displacement.values);
            const int ns = dom.nstrain();
            for (int c = 0; c < dom.num_cells(); ++c) {
                double v = 0.0;
                if (dom.scalar()) {
                    for (int a = 0; a < ns; ++a) v += law.beta() * e[ns * c + a] * e[ns * c + a];
                } else {
                    v = eval_j(law, unpack_strain(dom.dim(), e.data() + ns * c));
                }
                energy[c] = v;
            }
            int out_cell = -1, in_cell = -1;
            for (int c : omega)
                if (!tried[c] && (out_cell < 0 || energy[c] < energy[out_cell])) out_cell = c;
            for (int c : omega)
                for (int nb : cell_neighbours(dom, c))
                    if (!in[nb] && (in_cell < 0 || energy[nb] > energy[in_cell])) in_cell = nb;
            if (out_cell < 0 || in_cell < 0) break;
            tried[out_cell] = 1;
            std::vector<int> trial(omega);
            std::replace(trial.begin(), trial.end(), out_cell, in_cell);
            bool fin = false;
            const double v = subset_compliance(dom, trial, eps_k, law, &fin);
            if (fin && v < st.c_eps) {
                in[out_cell] = 0;
                in[in_cell] = 1;
                omega = std::move(trial);
                st.c_eps = v;
                ++st.exchanges;
            }
        }
        st.gap = st.finite ? st.c_eps - rep.min_c : std::numeric_limits<double>::infinity();
        rep.steps.push_back(st);
    }
    return rep;
}

} // namespace vmass
