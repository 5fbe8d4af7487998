#pragma once

// Independent reference computations used only by the tests. Nothing here
// calls the closed forms it is meant to check.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "vmass/integrands.hpp"
#include "vmass/tensor.hpp"

namespace oracle {

using vmass::ElasticLaw;
using vmass::SymTensor;
using vmass::Vec3;

inline SymTensor random_tensor(std::mt19937_64& rng, int dim, double scale = 2.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    if (dim == 2) return SymTensor::from2(u(rng), u(rng), u(rng));
    return SymTensor::from3(u(rng), u(rng), u(rng), u(rng), u(rng), u(rng));
}

inline Vec3 random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> g;
    Vec3 e{};
    double n2 = 0.0;
    for (int i = 0; i < dim; ++i) {
        e[i] = g(rng);
        n2 += e[i] * e[i];
    }
    for (int i = 0; i < dim; ++i) e[i] /= std::sqrt(n2);
    return e;
}

/// Random tensor of rank <= k built from k random rank-one pieces.
inline SymTensor random_rank_k(std::mt19937_64& rng, int dim, int k) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    SymTensor t = SymTensor::zero(dim);
    if (k == 0) return t;
    // Orthogonal directions keep the rank exactly k.
    std::array<Vec3, 3> frame{};
    for (int i = 0; i < k; ++i) {
        Vec3 e = random_unit(rng, dim);
        for (int j = 0; j < i; ++j) {
            double d = 0.0;
            for (int c = 0; c < dim; ++c) d += e[c] * frame[j][c];
            for (int c = 0; c < dim; ++c) e[c] -= d * frame[j][c];
        }
        double n = 0.0;
        for (int c = 0; c < dim; ++c) n += e[c] * e[c];
        for (int c = 0; c < dim; ++c) e[c] /= std::sqrt(n);
        frame[i] = e;
        t += vmass::outer(dim, e, u(rng));
    }
    return t;
}

/// sup_z z.xi - j(z) by gradient ascent (j is a strongly convex quadratic).
inline double conjugate_by_ascent(const ElasticLaw& law, const SymTensor& xi) {
    SymTensor z = SymTensor::zero(law.dim());
    const double step = 1.0 / (2.0 * law.beta() + std::max(0.0, law.dim() * law.alpha()));
    for (int it = 0; it < 20000; ++it) {
        SymTensor g = xi - vmass::grad_j(law, z);
        if (g.norm() < 1e-14) break;
        z += step * g;
    }
    return z.dot(xi) - vmass::eval_j(law, z);
}

/// sup over rank-one xi = tau e(x)e of z.xi - j*(xi): for fixed e the optimum
/// in tau is explicit; e runs over `samples` directions on the half circle.
inline double j_bar_2d_by_directions(const ElasticLaw& law, const SymTensor& z, int samples = 4096) {
    double best = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double th = std::numbers::pi * i / samples;
        const Vec3 e{std::cos(th), std::sin(th), 0.0};
        const double a = z.dot(vmass::outer(2, e, 1.0));
        const double q = vmass::eval_j_star(law, vmass::outer(2, e, 1.0));
        best = std::max(best, a * a / (4.0 * q));
    }
    return best;
}

/// Same sup over rank <= 2 tensors in 3D: random frames, optimal eigenvalue
/// pair by a 2x2 solve, then a local refinement of the best frame.
inline double j_bar_3d_by_frames(const ElasticLaw& law, const SymTensor& z, std::mt19937_64& rng,
                                 int samples = 20000) {
    auto value_for = [&](const Vec3& e1, const Vec3& e2) {
        const SymTensor p1 = vmass::outer(3, e1, 1.0), p2 = vmass::outer(3, e2, 1.0);
        const double a1 = z.dot(p1), a2 = z.dot(p2);
        // j*(t1 p1 + t2 p2) = 1/2 t^T H t
        const double h11 = 2.0 * vmass::eval_j_star(law, p1);
        const double h22 = 2.0 * vmass::eval_j_star(law, p2);
        const double h12 = vmass::eval_j_star(law, p1 + p2) - 0.5 * h11 - 0.5 * h22;
        const double det = h11 * h22 - h12 * h12;
        const double t1 = (h22 * a1 - h12 * a2) / det, t2 = (h11 * a2 - h12 * a1) / det;
        return 0.5 * (a1 * t1 + a2 * t2);
    };
    auto frame_from = [](Vec3 e1, Vec3 e2) {
        double n = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
        for (double& x : e1) x /= n;
        double d = e1[0] * e2[0] + e1[1] * e2[1] + e1[2] * e2[2];
        for (int c = 0; c < 3; ++c) e2[c] -= d * e1[c];
        n = std::sqrt(e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]);
        for (double& x : e2) x /= n;
        return std::pair{e1, e2};
    };
    double best = 0.0;
    Vec3 b1{1, 0, 0}, b2{0, 1, 0};
    for (int i = 0; i < samples; ++i) {
        auto [e1, e2] = frame_from(random_unit(rng, 3), random_unit(rng, 3));
        const double v = value_for(e1, e2);
        if (v > best) { best = v; b1 = e1; b2 = e2; }
    }
    std::normal_distribution<double> g;
    for (double radius = 0.1; radius > 1e-9; radius *= 0.7) {
        for (int i = 0; i < 200; ++i) {
            Vec3 e1 = b1, e2 = b2;
            for (int c = 0; c < 3; ++c) { e1[c] += radius * g(rng); e2[c] += radius * g(rng); }
            auto [f1, f2] = frame_from(e1, e2);
            const double v = value_for(f1, f2);
            if (v > best) { best = v; b1 = f1; b2 = f2; }
        }
    }
    return best;
}

/// Conjugate of a 2-homogeneous spectral function f on eigenvalue vectors:
/// f*(tau) = sup over unit d with tau.d > 0 of (tau.d)^2 / (4 f(d)).
template <class F>
double homogeneous_conjugate(F&& f, const Vec3& tau, int dim, std::mt19937_64& rng) {
    auto val = [&](Vec3 d) {
        double n = 0.0;
        for (int i = 0; i < dim; ++i) n += d[i] * d[i];
        n = std::sqrt(n);
        for (int i = 0; i < dim; ++i) d[i] /= n;
        double td = 0.0;
        for (int i = 0; i < dim; ++i) td += tau[i] * d[i];
        if (td <= 0.0) return 0.0;
        return td * td / (4.0 * f(d));
    };
    double best = 0.0;
    Vec3 bd{};
    const int coarse = dim == 2 ? 20000 : 200000;
    for (int i = 0; i < coarse; ++i) {
        const Vec3 d = random_unit(rng, dim);
        const double v = val(d);
        if (v > best) { best = v; bd = d; }
    }
    // Random local search; the maximizer usually sits on a ridge of f, so the
    // radius only shrinks after a batch without progress.
    std::normal_distribution<double> g;
    for (double radius = 0.05; radius > 1e-11;) {
        bool improved = false;
        for (int i = 0; i < 300; ++i) {
            Vec3 d = bd;
            for (int c = 0; c < dim; ++c) d[c] += radius * g(rng);
            const double v = val(d);
            if (v > best) {
                best = v;
                double n = 0.0;
                for (int c = 0; c < dim; ++c) n += d[c] * d[c];
                for (int c = 0; c < dim; ++c) d[c] /= std::sqrt(n);
                bd = d;
                improved = true;
            }
        }
        if (!improved) radius *= 0.5;
    }
    return best;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

} // namespace oracle
