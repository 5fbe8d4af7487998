#include "vmass/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "vmass/error.hpp"

namespace vmass {

SymTensor::SymTensor(int dim) : dim_(dim) {
    require(dim == 2 || dim == 3, "SymTensor dimension must be 2 or 3");
}

SymTensor SymTensor::identity(int dim) {
    SymTensor t(dim);
    for (int i = 0; i < dim; ++i) t.v_[i] = 1.0;
    return t;
}

SymTensor SymTensor::diag(double a, double b) {
    SymTensor t(2);
    t.v_[0] = a;
    t.v_[1] = b;
    return t;
}

SymTensor SymTensor::diag(double a, double b, double c) {
    SymTensor t(3);
    t.v_[0] = a;
    t.v_[1] = b;
    t.v_[2] = c;
    return t;
}

SymTensor SymTensor::from2(double a, double b, double c) {
    SymTensor t(2);
    t.v_[0] = a;
    t.v_[1] = c;
    t.v_[3] = b;
    return t;
}

SymTensor SymTensor::from3(double xx, double yy, double zz, double xy, double xz, double yz) {
    SymTensor t(3);
    t.v_ = {xx, yy, zz, xy, xz, yz};
    return t;
}

double SymTensor::trace() const noexcept { return v_[0] + v_[1] + v_[2]; }

double SymTensor::det() const noexcept {
    if (dim_ == 2) return v_[0] * v_[1] - v_[3] * v_[3];
    const double a = v_[0], b = v_[1], c = v_[2], d = v_[3], e = v_[4], f = v_[5];
    return a * (b * c - f * f) - d * (d * c - f * e) + e * (d * f - b * e);
}

double SymTensor::dot(const SymTensor& o) const noexcept {
    return v_[0] * o.v_[0] + v_[1] * o.v_[1] + v_[2] * o.v_[2]
           + 2.0 * (v_[3] * o.v_[3] + v_[4] * o.v_[4] + v_[5] * o.v_[5]);
}

double SymTensor::norm() const noexcept { return std::sqrt(dot(*this)); }

Vec3 SymTensor::apply(const Vec3& x) const noexcept {
    Vec3 y{};
    for (int i = 0; i < dim_; ++i)
        for (int j = 0; j < dim_; ++j) y[i] += (*this)(i, j) * x[j];
    return y;
}

SymTensor& SymTensor::operator+=(const SymTensor& o) noexcept {
    for (int i = 0; i < 6; ++i) v_[i] += o.v_[i];
    return *this;
}

SymTensor& SymTensor::operator-=(const SymTensor& o) noexcept {
    for (int i = 0; i < 6; ++i) v_[i] -= o.v_[i];
    return *this;
}

SymTensor& SymTensor::operator*=(double s) noexcept {
    for (double& x : v_) x *= s;
    return *this;
}

SymTensor operator+(SymTensor a, const SymTensor& b) noexcept { return a += b; }
SymTensor operator-(SymTensor a, const SymTensor& b) noexcept { return a -= b; }
SymTensor operator*(double s, SymTensor a) noexcept { return a *= s; }

SymTensor outer(int dim, const Vec3& e, double tau) {
    double n2 = 0.0;
    for (int i = 0; i < dim; ++i) n2 += e[i] * e[i];
    require(std::abs(std::sqrt(n2) - 1.0) <= 1e-10, "outer: direction must be a unit vector");
    SymTensor t(dim);
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j) t.set(i, j, tau * e[i] * e[j]);
    return t;
}

SymTensor outer(std::span<const double> e, double tau) {
    require(e.size() == 2 || e.size() == 3, "outer: direction must have 2 or 3 components");
    Vec3 v{};
    std::copy(e.begin(), e.end(), v.begin());
    return outer(static_cast<int>(e.size()), v, tau);
}

SymTensor Spectral::with_values(const Vec3& vals) const {
    SymTensor t(dim);
    for (int k = 0; k < dim; ++k) {
        if (vals[k] == 0.0) continue;
        const Vec3& e = vectors[k];
        for (int i = 0; i < dim; ++i)
            for (int j = i; j < dim; ++j) t.add(i, j, vals[k] * e[i] * e[j]);
    }
    return t;
}

SymTensor Spectral::reconstruct() const { return with_values(values); }

namespace {

void sort_spectrum(Spectral& s) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.begin() + s.dim, [&](int a, int b) {
        const double fa = std::abs(s.values[a]), fb = std::abs(s.values[b]);
        if (fa != fb) return fa > fb;
        return s.values[a] > s.values[b];
    });
    Spectral out = s;
    for (int k = 0; k < s.dim; ++k) {
        out.values[k] = s.values[idx[k]];
        out.vectors[k] = s.vectors[idx[k]];
    }
    s = out;
}

Spectral eigen2(const SymTensor& z) {
    Spectral s;
    s.dim = 2;
    const double a = z(0, 0), b = z(0, 1), c = z(1, 1);
    const double mean = 0.5 * (a + c);
    const double r = std::hypot(0.5 * (a - c), b);
    if (r == 0.0) {
        s.values = {a, c, 0.0};
        s.vectors[0] = {1.0, 0.0, 0.0};
        s.vectors[1] = {0.0, 1.0, 0.0};
    } else {
        double hi = mean + r, lo = mean - r;
        // Recover the small-magnitude root from the determinant to keep its relative accuracy.
        const double detv = a * c - b * b;
        if (std::abs(hi) >= std::abs(lo)) {
            if (hi != 0.0) lo = detv / hi;
        } else {
            hi = detv / lo;
        }
        const double theta = 0.5 * std::atan2(2.0 * b, a - c);
        const double ct = std::cos(theta), st = std::sin(theta);
        s.values = {hi, lo, 0.0};
        s.vectors[0] = {ct, st, 0.0};
        s.vectors[1] = {-st, ct, 0.0};
    }
    sort_spectrum(s);
    return s;
}

// Iterative QR on the scaled matrix; the closed-form cubic loses half the
// digits near double roots.
Spectral eigen3(const SymTensor& z) {
    Spectral s;
    s.dim = 3;
    double scale = 0.0;
    for (double x : z.packed()) scale = std::max(scale, std::abs(x));
    if (scale == 0.0) {
        s.vectors = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
        return s;
    }
    Eigen::Matrix3d A;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) A(i, j) = z(i, j) / scale;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(A);
    for (int i = 0; i < 3; ++i) {
        s.values[i] = es.eigenvalues()(i) * scale;
        s.vectors[i] = {es.eigenvectors()(0, i), es.eigenvectors()(1, i), es.eigenvectors()(2, i)};
    }
    sort_spectrum(s);
    return s;
}

} // namespace

Spectral eigen(const SymTensor& z) { return z.dim() == 2 ? eigen2(z) : eigen3(z); }

int rank_eps(const SymTensor& z, double tol) {
    require(tol > 0.0, "rank_eps: tolerance must be positive");
    const Spectral s = eigen(z);
    const double thresh = tol * std::max(1.0, std::abs(s.values[0]));
    int r = 0;
    for (int i = 0; i < s.dim; ++i)
        if (std::abs(s.values[i]) > thresh) ++r;
    return r;
}

} // namespace vmass
