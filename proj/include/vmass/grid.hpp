#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "vmass/tensor.hpp"

namespace vmass {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct PointLoad {
    int node;
    Vec3 force;
};

/// Structured box grid with node displacements and cell-centred strains.
/// Cells are [0,cells_x) x [0,cells_y) (x [0,cells_z)), nodes one more per axis.
/// In scalar mode each node carries one unknown and the "strain" is the
/// cell gradient; otherwise nodes carry dim components and the strain is the
/// symmetrized gradient packed as xx,yy,xy (2D) or xx,yy,zz,xy,xz,yz (3D).
class DiscreteDomain {
public:
    DiscreteDomain(int dim, std::array<int, 3> cells, double h, Vec3 origin = {0, 0, 0}, bool scalar = false);

    int dim() const noexcept { return dim_; }
    bool scalar() const noexcept { return scalar_; }
    double h() const noexcept { return h_; }
    const Vec3& origin() const noexcept { return origin_; }
    int cells(int axis) const noexcept { return cells_[axis]; }
    int nodes(int axis) const noexcept { return axis < dim_ ? cells_[axis] + 1 : 1; }
    int num_cells() const noexcept { return num_cells_; }
    int num_nodes() const noexcept { return num_nodes_; }
    /// Unknowns per node: 1 in scalar mode, dim otherwise.
    int ncomp() const noexcept { return scalar_ ? 1 : dim_; }
    /// Strain components per cell: dim in scalar mode, 3 or 6 otherwise.
    int nstrain() const noexcept { return scalar_ ? dim_ : (dim_ == 2 ? 3 : 6); }
    int num_dofs() const noexcept { return ncomp() * num_nodes_; }
    double cell_volume() const noexcept { return std::pow(h_, dim_); }
    double node_volume() const noexcept { return cell_volume(); }
    double volume() const noexcept { return cell_volume() * num_cells_; }

    int node_index(int i, int j, int k = 0) const noexcept { return i + nodes(0) * (j + nodes(1) * k); }
    std::array<int, 3> node_ijk(int node) const noexcept;
    Vec3 node_position(int node) const noexcept;
    int cell_index(int i, int j, int k = 0) const noexcept { return i + cells_[0] * (j + cells_[1] * k); }
    std::array<int, 3> cell_ijk(int cell) const noexcept;
    Vec3 cell_center(int cell) const noexcept;
    /// Corner nodes, corner bit b set means +1 along axis b.
    std::array<int, 8> cell_nodes(int cell) const noexcept;
    int corners() const noexcept { return 1 << dim_; }

    /// Node within 1e-9 h of x, if any.
    std::optional<int> find_node(const Vec3& x) const noexcept;
    bool contains(const Vec3& x, double slack = 0.0) const noexcept;

    void clamp_node(int node);
    /// Clamps every node inside the closed box [lo, hi] (with a 1e-9 h margin).
    int clamp_box(const Vec3& lo, const Vec3& hi);
    bool clamped(int node) const noexcept { return clamped_[node] != 0; }
    bool any_clamped() const noexcept;
    int num_clamped() const noexcept;

    /// Point loads must sit on nodes; off-node positions are rejected.
    void add_point_load(const Vec3& x, const Vec3& force);
    void add_node_load(int node, const Vec3& force);
    /// Per-cell load density (force per volume); split equally to the corners.
    void set_distributed_load(std::vector<Vec3> density);
    const std::vector<PointLoad>& point_loads() const noexcept { return loads_; }
    const std::vector<Vec3>& distributed_load() const noexcept { return distributed_; }
    /// Nodal force vector (ncomp per node), point plus distributed parts.
    std::vector<double> nodal_load() const;
    Vec3 resultant() const;
    /// Total moment about the origin (z component only in 2D).
    Vec3 moment() const;
    bool self_equilibrated(double tol = 1e-12) const;
    bool has_load() const;
    /// Throws Infeasible unless some node is clamped or the load is balanced.
    void check_admissible() const;

private:
    int dim_;
    bool scalar_;
    std::array<int, 3> cells_;
    double h_;
    Vec3 origin_;
    int num_cells_;
    int num_nodes_;
    std::vector<char> clamped_;
    std::vector<PointLoad> loads_;
    std::vector<Vec3> distributed_;
};

/// Packed strain layout helpers (vector mode).
SymTensor unpack_strain(int dim, const double* v);
void pack_strain(const SymTensor& t, double* v);
/// Weight of each packed component in the Frobenius pairing (1 or 2).
std::vector<double> pairing_weights(const DiscreteDomain& dom);

/// Sparse cell-centre strain operator B (rows nstrain*cells, cols dofs).
SparseMatrix strain_matrix(const DiscreteDomain& dom);
/// Strain at the 2^dim Gauss points of every cell, rows ns * (cell * 2^dim + q).
/// Unlike the cell-centre operator its kernel holds only rigid motions.
SparseMatrix gauss_strain_matrix(const DiscreteDomain& dom);
int gauss_points_per_cell(const DiscreteDomain& dom);

struct DisplacementField {
    int ncomp = 0;
    std::vector<double> values;
    Vec3 at(int node) const;
};

/// Cell stresses (nstrain values per cell) plus optional bar axial forces.
struct StressField {
    int dim = 2;
    int nstrain = 3;
    std::vector<double> values;
    std::vector<double> bar_forces;
    SymTensor tensor(int cell) const { return unpack_strain(dim, values.data() + nstrain * cell); }
};

std::vector<SymTensor> discrete_strain(const DiscreteDomain& dom, const DisplacementField& u);
/// Strain of u packed into a flat array (nstrain per cell).
std::vector<double> discrete_strain_flat(const DiscreteDomain& dom, const std::vector<double>& u);
/// Negative adjoint of the strain in the Frobenius pairing: returns a density
/// per node (ncomp per node) with <lambda, e(u)> cellvol = <-div lambda, u> nodevol.
std::vector<double> discrete_div(const DiscreteDomain& dom, const StressField& lambda);

struct Bar {
    int a;
    int b;
    double length;
    Vec3 dir;
};

struct GroundStructure {
    std::vector<Bar> bars;
    /// Column per bar: -dir at node a, +dir at node b (rows are dofs).
    SparseMatrix equilibrium;
};

/// All node pairs within radius whose connecting segment has no grid node in
/// its interior (longer collinear pairs are unions of shorter bars).
GroundStructure ground_structure(const DiscreteDomain& dom, double radius);
/// Columns for an explicit bar list.
SparseMatrix bar_equilibrium(const DiscreteDomain& dom, const std::vector<Bar>& bars);
Bar make_bar(const DiscreteDomain& dom, int a, int b);

struct Segment {
    Vec3 a;
    Vec3 b;
    double density; // mass per unit length
    double length() const;
};

/// Mass distribution: density per cell (mass per volume) plus a
/// lower-dimensional part made of segments with linear densities.
class DensityMeasure {
public:
    DensityMeasure() = default;
    explicit DensityMeasure(const DiscreteDomain& dom);

    static DensityMeasure uniform(const DiscreteDomain& dom, double mass = 1.0);
    /// 1_omega / eps: density exactly 1/eps on the listed cells.
    static DensityMeasure indicator(const DiscreteDomain& dom, const std::vector<int>& cells, double eps);

    std::vector<double>& density() noexcept { return density_; }
    const std::vector<double>& density() const noexcept { return density_; }
    std::vector<Segment>& segments() noexcept { return segments_; }
    const std::vector<Segment>& segments() const noexcept { return segments_; }
    double cell_volume() const noexcept { return cell_volume_; }
    double cell_mass(int c) const { return density_[c] * cell_volume_; }

    double grid_mass() const;
    double segment_mass() const;
    double total_mass() const { return grid_mass() + segment_mass(); }
    void normalize();
    void scale(double t);
    bool has_grid_part() const;
    bool has_segments() const { return !segments_.empty(); }
    void validate() const;

private:
    double cell_volume_ = 0.0;
    std::vector<double> density_;
    std::vector<Segment> segments_;
};

struct FattenResult {
    DensityMeasure measure;
    double covered_volume = 0.0;
    std::vector<std::string> warnings;
};

/// Replaces the segment part by 1_A/eps with A a slab (2D) or tube (3D) of
/// volume eps * mass around each segment, rasterized by coverage fractions
/// (8 subsamples per axis). Mass lost to clipping at the box is rebalanced.
FattenResult fatten(const DiscreteDomain& dom, const DensityMeasure& lower, double eps, int subsamples = 8);

} // namespace vmass
