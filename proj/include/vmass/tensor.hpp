#pragma once

#include <array>
#include <cstddef>
#include <span>

namespace vmass {

using Vec3 = std::array<double, 3>;

/// Small symmetric tensor in dimension 2 or 3. Only the upper triangle is
/// stored, so symmetry holds by construction. Entries beyond `dim` are zero.
class SymTensor {
public:
    SymTensor() = default;
    explicit SymTensor(int dim);

    static SymTensor zero(int dim) { return SymTensor(dim); }
    static SymTensor identity(int dim);
    static SymTensor diag(double a, double b);
    static SymTensor diag(double a, double b, double c);
    /// 2D tensor [[a, b], [b, c]].
    static SymTensor from2(double a, double b, double c);
    /// 3D tensor from xx, yy, zz, xy, xz, yz.
    static SymTensor from3(double xx, double yy, double zz, double xy, double xz, double yz);

    int dim() const noexcept { return dim_; }
    double operator()(int i, int j) const noexcept { return v_[slot(i, j)]; }
    void set(int i, int j, double value) noexcept { v_[slot(i, j)] = value; }
    void add(int i, int j, double value) noexcept { v_[slot(i, j)] += value; }

    /// Packed storage: xx, yy, zz, xy, xz, yz.
    const std::array<double, 6>& packed() const noexcept { return v_; }
    std::array<double, 6>& packed() noexcept { return v_; }

    double trace() const noexcept;
    double det() const noexcept;
    double norm() const noexcept;
    /// Frobenius pairing a:b.
    double dot(const SymTensor& other) const noexcept;
    Vec3 apply(const Vec3& x) const noexcept;

    SymTensor& operator+=(const SymTensor& o) noexcept;
    SymTensor& operator-=(const SymTensor& o) noexcept;
    SymTensor& operator*=(double s) noexcept;

    /// Number of independent components: 3 in 2D, 6 in 3D.
    static constexpr int packed_size(int dim) { return dim == 2 ? 3 : 6; }

    static constexpr int slot(int i, int j) noexcept {
        if (i > j) { int t = i; i = j; j = t; }
        if (i == j) return i;
        return i + j + 2; // (0,1)->3 (0,2)->4 (1,2)->5
    }

private:
    int dim_ = 2;
    std::array<double, 6> v_{};
};

SymTensor operator+(SymTensor a, const SymTensor& b) noexcept;
SymTensor operator-(SymTensor a, const SymTensor& b) noexcept;
SymTensor operator*(double s, SymTensor a) noexcept;

/// Rank-one tensor tau * e (x) e. Throws InputError when |e| != 1 within 1e-10.
SymTensor outer(std::span<const double> e, double tau);
SymTensor outer(int dim, const Vec3& e, double tau);

/// Eigen-decomposition ordered by |value| descending, ties broken by the
/// signed value descending. `vectors[i]` is the unit eigenvector of `values[i]`.
struct Spectral {
    int dim = 2;
    Vec3 values{};
    std::array<Vec3, 3> vectors{};

    SymTensor reconstruct() const;
    /// Tensor with the same frame and the supplied eigenvalues.
    SymTensor with_values(const Vec3& values) const;
};

Spectral eigen(const SymTensor& z);

/// Count of eigenvalues with |value| > tol * max(1, |value_1|).
int rank_eps(const SymTensor& z, double tol = 1e-9);

} // namespace vmass
