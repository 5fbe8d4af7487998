#include "vmass/integrands.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <limits>
#include <numbers>

#include "vmass/error.hpp"

namespace vmass {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Index subsets of {0..dim-1} with exactly k elements, as bitmasks.
const std::vector<unsigned>& subsets(int dim, int k) {
    static const auto table = [] {
        std::array<std::array<std::vector<unsigned>, 4>, 4> t;
        for (int n = 2; n <= 3; ++n)
            for (unsigned m = 0; m < (1u << n); ++m) t[n][__builtin_popcount(m)].push_back(m);
        return t;
    }();
    return table[dim][k];
}

void check_k(const ElasticLaw& law, int k) {
    require(k >= 0 && k <= law.dim(), "rank index k must satisfy 0 <= k <= dim");
}

Vec3 values_of(const Spectral& s) { return s.values; }

} // namespace

ElasticLaw::ElasticLaw(int dim, double alpha, double beta)
    : dim_(dim), alpha_(alpha), beta_(beta) {
    require(dim == 2 || dim == 3, "law dimension must be 2 or 3");
    require(std::isfinite(alpha) && std::isfinite(beta), "Lame coefficients must be finite");
    require(beta > 0.0, "Lame coefficient beta must be positive");
    require(dim * alpha + 2.0 * beta > 0.0, "ellipticity requires dim*alpha + 2*beta > 0");
    gamma_ = (alpha + 2.0 * beta) / (4.0 * beta * (alpha + beta));
    coupling_ = alpha / (dim * alpha + 2.0 * beta);
    rank_one_ = (1.0 - coupling_) / (2.0 * beta);
}

double eval_j(const ElasticLaw& law, const SymTensor& z) {
    const double tr = z.trace();
    return 0.5 * law.alpha() * tr * tr + law.beta() * z.dot(z);
}

SymTensor grad_j(const ElasticLaw& law, const SymTensor& z) {
    SymTensor g = (2.0 * law.beta()) * z;
    const double tr = z.trace();
    for (int i = 0; i < law.dim(); ++i) g.add(i, i, law.alpha() * tr);
    return g;
}

double eval_j_star(const ElasticLaw& law, const SymTensor& xi) {
    const double tr = xi.trace();
    return (xi.dot(xi) - law.coupling() * tr * tr) / (4.0 * law.beta());
}

// For a fixed support S (|S| = m) the inner maximization over eigenvalues t of
// xi is a concave quadratic with optimum t = 2 beta lambda_S + c s 1_S,
// s = 2 beta sum(lambda_S) / (1 - m c), and value
// beta |lambda_S|^2 + beta c (sum lambda_S)^2 / (1 - m c).
double j_k_of_values(const ElasticLaw& law, int k, const Vec3& lambda, Vec3* maximizer) {
    check_k(law, k);
    const int n = law.dim();
    if (maximizer) *maximizer = Vec3{};
    if (k == 0) return 0.0;
    const double beta = law.beta(), c = law.coupling();
    const double denom = 1.0 - k * c;
    const auto& sets = subsets(n, k);

    double best = -kInf;
    std::array<double, 8> vals{};
    for (std::size_t idx = 0; idx < sets.size(); ++idx) {
        double sq = 0.0, sum = 0.0;
        for (int i = 0; i < n; ++i)
            if (sets[idx] & (1u << i)) {
                sq += lambda[i] * lambda[i];
                sum += lambda[i];
            }
        vals[idx] = beta * sq + beta * c * sum * sum / denom;
        best = std::max(best, vals[idx]);
    }
    if (maximizer) {
        const double tie = 1e-12 * std::max(best, 1e-300);
        int count = 0;
        Vec3 acc{};
        for (std::size_t idx = 0; idx < sets.size(); ++idx) {
            if (vals[idx] < best - tie) continue;
            double sum = 0.0;
            for (int i = 0; i < n; ++i)
                if (sets[idx] & (1u << i)) sum += lambda[i];
            const double s = 2.0 * beta * sum / denom;
            for (int i = 0; i < n; ++i)
                if (sets[idx] & (1u << i)) acc[i] += 2.0 * beta * lambda[i] + c * s;
            ++count;
        }
        for (int i = 0; i < n; ++i) (*maximizer)[i] = acc[i] / count;
    }
    return best;
}

double eval_j_k(const ElasticLaw& law, int k, const SymTensor& z) {
    check_k(law, k);
    if (k == 0) return 0.0;
    if (k == law.dim()) return eval_j(law, z);
    return j_k_of_values(law, k, values_of(eigen(z)));
}

SymTensor grad_j_k(const ElasticLaw& law, int k, const SymTensor& z) {
    check_k(law, k);
    if (k == 0) return SymTensor::zero(law.dim());
    if (k == law.dim()) return grad_j(law, z);
    const Spectral s = eigen(z);
    Vec3 t{};
    j_k_of_values(law, k, s.values, &t);
    return s.with_values(t);
}

double eval_j_bar(const ElasticLaw& law, const SymTensor& z) { return eval_j_k(law, law.dim() - 1, z); }

SymTensor grad_j_bar(const ElasticLaw& law, const SymTensor& z) {
    return grad_j_k(law, law.dim() - 1, z);
}

namespace {

// Conjugate of max_S 1/2 lambda^T Q_S lambda is
// min over w in the simplex of 1/2 tau^T (sum_S w_S Q_S)^+ tau.
struct StarProblem {
    int n;
    Vec3 tau;
    std::vector<Eigen::Matrix3d> q;

    double value(const std::vector<double>& w) const {
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (std::size_t s = 0; s < q.size(); ++s) m += w[s] * q[s];
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
        es.computeDirect(m);
        const Eigen::Vector3d t(tau[0], tau[1], n == 3 ? tau[2] : 0.0);
        const double tn = t.norm();
        const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
        double v = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double proj = es.eigenvectors().col(i).dot(t);
            const double lam = es.eigenvalues()(i);
            if (lam <= 1e-13 * top) {
                if (std::abs(proj) > 1e-10 * tn) return kInf;
                continue;
            }
            v += proj * proj / lam;
        }
        return 0.5 * v;
    }
};

StarProblem make_star_problem(const ElasticLaw& law, int k, const Vec3& tau) {
    StarProblem p{law.dim(), tau, {}};
    const double c = law.coupling();
    const double a = c / (1.0 - k * c);
    for (unsigned mask : subsets(law.dim(), k)) {
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (int i = 0; i < law.dim(); ++i) {
            if (!(mask & (1u << i))) continue;
            for (int j = 0; j < law.dim(); ++j) {
                if (!(mask & (1u << j))) continue;
                m(i, j) = 2.0 * law.beta() * ((i == j ? 1.0 : 0.0) + a);
            }
        }
        p.q.push_back(m);
    }
    return p;
}

constexpr int kBrentBits = 40;

double minimize_unit(const auto& f) {
    boost::uintmax_t iters = 200;
    auto r = boost::math::tools::brent_find_minima(f, 0.0, 1.0, kBrentBits, iters);
    // Endpoints can be optimal when a piece vanishes.
    return std::min({r.second, f(0.0), f(1.0)});
}

double numeric_star(const ElasticLaw& law, int k, const Vec3& tau) {
    const StarProblem p = make_star_problem(law, k, tau);
    const std::size_t m = p.q.size();
    if (m == 1) return p.value({1.0});
    if (m == 2) {
        return minimize_unit([&](double w) { return p.value({w, 1.0 - w}); });
    }
    // Three pieces: nested one-dimensional searches over the 2-simplex.
    auto inner = [&](double w0) {
        return minimize_unit([&](double t) {
            return p.value({w0, (1.0 - w0) * t, (1.0 - w0) * (1.0 - t)});
        });
    };
    return minimize_unit(inner);
}

double closed_shear_star(const ElasticLaw& law, const Vec3& tau) {
    std::array<double, 3> a{std::abs(tau[0]), std::abs(tau[1]), std::abs(tau[2])};
    std::sort(a.begin(), a.end(), std::greater<>());
    const double rest = a[1] + a[2];
    double h;
    if (a[0] <= rest) {
        const double l1 = a[0] + rest;
        h = 0.25 * l1 * l1;
    } else {
        h = 0.5 * (a[0] * a[0] + rest * rest);
    }
    return h / (2.0 * law.beta());
}

GaugeMode mode_for(const ElasticLaw& law) {
    if (law.dim() == 2) return GaugeMode::ClosedForm2D;
    if (law.alpha() == 0.0) return GaugeMode::ClosedForm3DShear;
    return GaugeMode::Numeric;
}

} // namespace

double j_k_star_of_values(const ElasticLaw& law, int k, const Vec3& tau) {
    check_k(law, k);
    const int n = law.dim();
    double nrm = 0.0;
    int nonzero = 0;
    for (int i = 0; i < n; ++i) nrm = std::max(nrm, std::abs(tau[i]));
    for (int i = 0; i < n; ++i)
        if (std::abs(tau[i]) > 0.0) ++nonzero;
    if (nrm == 0.0) return 0.0;
    if (k == 0) return kInf;
    SymTensor diag = n == 2 ? SymTensor::diag(tau[0], tau[1]) : SymTensor::diag(tau[0], tau[1], tau[2]);
    if (nonzero <= k) return eval_j_star(law, diag);
    if (k == n - 1) {
        if (n == 2) {
            const double l1 = std::abs(tau[0]) + std::abs(tau[1]);
            return 0.5 * law.gamma() * l1 * l1;
        }
        if (law.alpha() == 0.0) return closed_shear_star(law, tau);
    }
    // Normalize so the search is scale free; the value is 2-homogeneous.
    Vec3 unit{};
    for (int i = 0; i < n; ++i) unit[i] = tau[i] / nrm;
    return nrm * nrm * numeric_star(law, k, unit);
}

double eval_j_k_star(const ElasticLaw& law, int k, const SymTensor& xi, double rank_tol) {
    check_k(law, k);
    if (k == law.dim()) return eval_j_star(law, xi);
    if (rank_eps(xi, rank_tol) <= k) return eval_j_star(law, xi);
    return j_k_star_of_values(law, k, eigen(xi).values);
}

double eval_j_bar_star(const ElasticLaw& law, const SymTensor& xi) {
    return eval_j_k_star(law, law.dim() - 1, xi);
}

double rho(const ElasticLaw& law, const SymTensor& z) { return std::sqrt(2.0 * eval_j_bar(law, z)); }

double rho0(const ElasticLaw& law, const SymTensor& xi) {
    if (law.dim() == 2) {
        const Spectral s = eigen(xi);
        return std::sqrt(law.gamma()) * (std::abs(s.values[0]) + std::abs(s.values[1]));
    }
    return std::sqrt(2.0 * j_k_star_of_values(law, law.dim() - 1, eigen(xi).values));
}

namespace {

// Projection onto {x : x_S^T Q_S x_S <= 1} with Q_S = 2 beta (I + a 1 1^T) on S.
void project_cylinder(const ElasticLaw& law, unsigned mask, int k, Vec3& x) {
    const int n = law.dim();
    const double c = law.coupling();
    const double a = c / (1.0 - k * c);
    const double q_perp = 2.0 * law.beta();
    const double q_par = 2.0 * law.beta() * (1.0 + a * k);
    double mean = 0.0;
    for (int i = 0; i < n; ++i)
        if (mask & (1u << i)) mean += x[i];
    mean /= k;
    double par2 = mean * mean * k, perp2 = 0.0;
    for (int i = 0; i < n; ++i)
        if (mask & (1u << i)) perp2 += (x[i] - mean) * (x[i] - mean);
    if (q_par * par2 + q_perp * perp2 <= 1.0) return;
    // phi(mu) = sum q |x|^2 / (1 + mu q)^2 - 1 is convex decreasing; Newton from 0 is monotone.
    double mu = 0.0;
    for (int it = 0; it < 100; ++it) {
        const double dp = 1.0 + mu * q_par, dq = 1.0 + mu * q_perp;
        const double phi = q_par * par2 / (dp * dp) + q_perp * perp2 / (dq * dq) - 1.0;
        const double dphi = -2.0 * (q_par * q_par * par2 / (dp * dp * dp) + q_perp * q_perp * perp2 / (dq * dq * dq));
        const double step = phi / dphi;
        mu -= step;
        if (std::abs(step) <= 1e-16 * std::max(1.0, mu)) break;
    }
    const double sp = 1.0 / (1.0 + mu * q_par), sq = 1.0 / (1.0 + mu * q_perp);
    for (int i = 0; i < n; ++i)
        if (mask & (1u << i)) x[i] = mean * sp + (x[i] - mean) * sq;
}

// Projection onto {rho <= 1} in eigenvalue space (Dykstra over the cylinders).
Vec3 project_rho_ball(const ElasticLaw& law, const Vec3& x0) {
    const int n = law.dim();
    const int k = n - 1;
    const auto& sets = subsets(n, k);
    if (j_k_of_values(law, k, x0) <= 0.5) return x0;
    Vec3 x = x0;
    std::vector<Vec3> incr(sets.size(), Vec3{});
    for (int it = 0; it < 20000; ++it) {
        double change = 0.0;
        for (std::size_t s = 0; s < sets.size(); ++s) {
            Vec3 y{};
            for (int i = 0; i < n; ++i) y[i] = x[i] + incr[s][i];
            const Vec3 before = y;
            project_cylinder(law, sets[s], k, y);
            for (int i = 0; i < n; ++i) {
                incr[s][i] = before[i] - y[i];
                change = std::max(change, std::abs(y[i] - x[i]));
                x[i] = y[i];
            }
        }
        if (change < 1e-13) break;
    }
    return x;
}

} // namespace

Vec3 prox_rho0_values(const ElasticLaw& law, const Vec3& tau, double step) {
    require(step > 0.0, "prox step must be positive");
    Vec3 out{};
    if (law.dim() == 2) {
        const double thr = std::sqrt(law.gamma()) * step;
        for (int i = 0; i < 2; ++i) {
            const double a = std::abs(tau[i]) - thr;
            out[i] = a > 0.0 ? std::copysign(a, tau[i]) : 0.0;
        }
        return out;
    }
    // Moreau: prox_{s rho0}(x) = x - s P_B(x / s), B = {rho <= 1}.
    Vec3 scaled_in{};
    for (int i = 0; i < law.dim(); ++i) scaled_in[i] = tau[i] / step;
    const Vec3 p = project_rho_ball(law, scaled_in);
    for (int i = 0; i < law.dim(); ++i) out[i] = tau[i] - step * p[i];
    return out;
}

namespace {

// Piece Hessians of j_k on eigenvalue vectors: Q_S = 2 beta (P_S + a 1_S 1_S^T).
std::vector<Eigen::Matrix3d> piece_hessians(const ElasticLaw& law, int k) {
    std::vector<Eigen::Matrix3d> out;
    const double a = law.coupling() / (1.0 - k * law.coupling());
    for (unsigned mask : subsets(law.dim(), k)) {
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (int i = 0; i < law.dim(); ++i)
            for (int j = 0; j < law.dim(); ++j)
                if ((mask & (1u << i)) && (mask & (1u << j))) m(i, j) = 2.0 * law.beta() * ((i == j) + a);
        out.push_back(m);
    }
    return out;
}

} // namespace

Vec3 prox_j_k_values(const ElasticLaw& law, int k, const Vec3& x, double step) {
    check_k(law, k);
    require(step > 0.0, "prox step must be positive");
    const int n = law.dim();
    const double rho = 1.0 / step;
    if (k == 0) return x;
    Eigen::Vector3d xv(x[0], x[1], n == 3 ? x[2] : 0.0);
    auto solve_with = [&](const Eigen::Matrix3d& q) {
        Eigen::Matrix3d m = q + rho * Eigen::Matrix3d::Identity();
        const Eigen::Vector3d y = m.ldlt().solve(rho * xv);
        return Vec3{y[0], y[1], n == 3 ? y[2] : 0.0};
    };
    if (k == n) {
        Eigen::Matrix3d q = Eigen::Matrix3d::Zero();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) q(i, j) = law.alpha() + (i == j ? 2.0 * law.beta() : 0.0);
        return solve_with(q);
    }
    auto objective = [&](const Vec3& y) {
        double d = 0.0;
        for (int i = 0; i < n; ++i) d += (y[i] - x[i]) * (y[i] - x[i]);
        return j_k_of_values(law, k, y) + 0.5 * rho * d;
    };
    if (n == 2) {
        // j_1 = max(y1^2, y2^2) / (2g): one piece active, or a tie |y1| = |y2|.
        const double a = 1.0 / law.rank_one_coefficient();
        const Vec3 c1{rho * x[0] / (a + rho), x[1], 0.0};
        const Vec3 c2{x[0], rho * x[1] / (a + rho), 0.0};
        const double t = rho * (std::abs(x[0]) + std::abs(x[1])) / (a + 2.0 * rho);
        const Vec3 c3{std::copysign(t, x[0]), std::copysign(t, x[1]), 0.0};
        const double f1 = objective(c1), f2 = objective(c2), f3 = objective(c3);
        if (f3 <= f1 && f3 <= f2) return c3;
        return f1 <= f2 ? c1 : c2;
    }
    // Dual over piece weights w: max_w min_y 1/2 y^T Q(w) y + rho/2 |y - x|^2,
    // concave in w; y(w) = rho (Q(w) + rho I)^{-1} x.
    const auto q = piece_hessians(law, k);
    auto phi = [&](double w0, double w1, double w2) {
        const Eigen::Matrix3d m = w0 * q[0] + w1 * q[1] + w2 * q[2] + rho * Eigen::Matrix3d::Identity();
        return -0.5 * rho * rho * xv.dot(m.ldlt().solve(xv));
    };
    boost::uintmax_t iters = 200;
    auto inner = [&](double w0, double* arg) {
        iters = 200;
        auto r = boost::math::tools::brent_find_minima(
            [&](double t) { return -phi(w0, (1 - w0) * t, (1 - w0) * (1 - t)); }, 0.0, 1.0, kBrentBits, iters);
        if (arg) *arg = r.first;
        return r.second;
    };
    iters = 200;
    const auto outer = boost::math::tools::brent_find_minima([&](double w0) { return inner(w0, nullptr); }, 0.0,
                                                             1.0, kBrentBits, iters);
    double t = 0.0;
    inner(outer.first, &t);
    const double w0 = outer.first, w1 = (1 - w0) * t, w2 = (1 - w0) * (1 - t);
    Vec3 y = solve_with(w0 * q[0] + w1 * q[1] + w2 * q[2]);
    // Vertices of the simplex can beat the interior search when one piece dominates.
    for (int s = 0; s < 3; ++s) {
        const Vec3 cand = solve_with(q[s]);
        if (objective(cand) < objective(y)) y = cand;
    }
    return y;
}

SymTensor prox_j_k(const ElasticLaw& law, int k, const SymTensor& z, double step) {
    const Spectral s = eigen(z);
    return s.with_values(prox_j_k_values(law, k, s.values, step));
}

SymTensor prox_rho0(const ElasticLaw& law, const SymTensor& xi, double step) {
    require(step > 0.0, "prox step must be positive");
    const Spectral s = eigen(xi);
    return s.with_values(prox_rho0_values(law, s.values, step));
}

const char* to_string(GaugeMode mode) {
    switch (mode) {
    case GaugeMode::ClosedForm2D: return "closed-form-2D";
    case GaugeMode::ClosedForm3DShear: return "closed-form-3D-shear";
    case GaugeMode::Numeric: return "numeric";
    }
    return "unknown";
}

GaugeTable::GaugeTable(const ElasticLaw& law) : law_(law), mode_(mode_for(law)) {}

double GaugeTable::rho0_values(const Vec3& tau) const {
    if (law_.dim() == 2) return std::sqrt(law_.gamma()) * (std::abs(tau[0]) + std::abs(tau[1]));
    return std::sqrt(2.0 * j_k_star_of_values(law_, law_.dim() - 1, tau));
}

double GaugeTable::rho0(const SymTensor& xi) const { return rho0_values(eigen(xi).values); }

Vec3 GaugeTable::node_direction(double res, int i_theta, int i_phi) {
    const double deg = std::numbers::pi / 180.0;
    const double th = i_theta * res * deg, ph = i_phi * res * deg;
    return {std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)};
}

void GaugeTable::tabulate(double res) {
    require(res > 0.0 && res <= 45.0, "tabulation resolution must be in (0, 45] degrees");
    if (mode_ != GaugeMode::Numeric) return;
    resolution_deg_ = res;
    n_theta_ = static_cast<int>(std::lround(180.0 / res)) + 1;
    n_phi_ = static_cast<int>(std::lround(360.0 / res));
    samples_.assign(static_cast<std::size_t>(n_theta_) * n_phi_, 0.0);
    for (int i = 0; i < n_theta_; ++i)
        for (int j = 0; j < n_phi_; ++j)
            samples_[static_cast<std::size_t>(i) * n_phi_ + j] = rho0_values(node_direction(res, i, j));
}

double GaugeTable::node_value(int i_theta, int i_phi) const {
    require(tabulated(), "gauge table not tabulated");
    return samples_.at(static_cast<std::size_t>(i_theta) * n_phi_ + i_phi);
}

double GaugeTable::rho0_fast(const Vec3& tau) const {
    if (!tabulated()) return rho0_values(tau);
    const double r = std::sqrt(tau[0] * tau[0] + tau[1] * tau[1] + tau[2] * tau[2]);
    if (r == 0.0) return 0.0;
    const double deg = 180.0 / std::numbers::pi;
    const double th = std::acos(std::clamp(tau[2] / r, -1.0, 1.0)) * deg;
    double ph = std::atan2(tau[1], tau[0]) * deg;
    if (ph < 0.0) ph += 360.0;
    const double ft = th / resolution_deg_, fp = ph / resolution_deg_;
    int it = std::min(static_cast<int>(ft), n_theta_ - 2);
    int ip = static_cast<int>(fp) % n_phi_;
    const double wt = ft - it, wp = fp - std::floor(fp);
    const int ip1 = (ip + 1) % n_phi_;
    auto at = [&](int a, int b) { return samples_[static_cast<std::size_t>(a) * n_phi_ + b]; };
    const double v = (1 - wt) * ((1 - wp) * at(it, ip) + wp * at(it, ip1))
                     + wt * ((1 - wp) * at(it + 1, ip) + wp * at(it + 1, ip1));
    return r * v;
}

} // namespace vmass
