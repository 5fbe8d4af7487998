#include "vmass/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "vmass/error.hpp"

namespace vmass {

namespace {

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

// Off-diagonal pairs in packed order after the diagonal.
constexpr int kOff2[1][2] = {{0, 1}};
constexpr int kOff3[3][2] = {{0, 1}, {0, 2}, {1, 2}};

} // namespace

DiscreteDomain::DiscreteDomain(int dim, std::array<int, 3> cells, double h, Vec3 origin, bool scalar)
    : dim_(dim), scalar_(scalar), cells_(cells), h_(h), origin_(origin) {
    require(dim == 2 || dim == 3, "grid dimension must be 2 or 3");
    require(h > 0.0 && std::isfinite(h), "cell size must be positive");
    if (dim == 2) cells_[2] = 1;
    for (int a = 0; a < dim; ++a) require(cells_[a] >= 0, "cell counts must be nonnegative");
    require(cells_[0] + cells_[1] + cells_[2] > 0, "grid has no extent");
    num_cells_ = cells_[0] * cells_[1] * cells_[2];
    num_nodes_ = nodes(0) * nodes(1) * nodes(2);
    clamped_.assign(num_nodes_, 0);
}

std::array<int, 3> DiscreteDomain::node_ijk(int node) const noexcept {
    const int nx = nodes(0), ny = nodes(1);
    return {node % nx, (node / nx) % ny, node / (nx * ny)};
}

Vec3 DiscreteDomain::node_position(int node) const noexcept {
    const auto ijk = node_ijk(node);
    Vec3 x = origin_;
    for (int a = 0; a < dim_; ++a) x[a] += h_ * ijk[a];
    return x;
}

std::array<int, 3> DiscreteDomain::cell_ijk(int cell) const noexcept {
    const int cx = cells_[0], cy = cells_[1];
    return {cell % cx, (cell / cx) % cy, cell / (cx * cy)};
}

Vec3 DiscreteDomain::cell_center(int cell) const noexcept {
    const auto ijk = cell_ijk(cell);
    Vec3 x = origin_;
    for (int a = 0; a < dim_; ++a) x[a] += h_ * (ijk[a] + 0.5);
    return x;
}

std::array<int, 8> DiscreteDomain::cell_nodes(int cell) const noexcept {
    const auto ijk = cell_ijk(cell);
    std::array<int, 8> out{};
    for (int c = 0; c < corners(); ++c)
        out[c] = node_index(ijk[0] + (c & 1), ijk[1] + ((c >> 1) & 1), dim_ == 3 ? ijk[2] + ((c >> 2) & 1) : 0);
    return out;
}

std::optional<int> DiscreteDomain::find_node(const Vec3& x) const noexcept {
    std::array<int, 3> ijk{0, 0, 0};
    for (int a = 0; a < dim_; ++a) {
        const double t = (x[a] - origin_[a]) / h_;
        const double r = std::round(t);
        if (std::abs(t - r) > 1e-9 || r < 0 || r > cells_[a]) return std::nullopt;
        ijk[a] = static_cast<int>(r);
    }
    return node_index(ijk[0], ijk[1], ijk[2]);
}

bool DiscreteDomain::contains(const Vec3& x, double slack) const noexcept {
    for (int a = 0; a < dim_; ++a)
        if (x[a] < origin_[a] - slack || x[a] > origin_[a] + h_ * cells_[a] + slack) return false;
    return true;
}

void DiscreteDomain::clamp_node(int node) {
    require(node >= 0 && node < num_nodes_, "clamp: node index out of range");
    clamped_[node] = 1;
}

int DiscreteDomain::clamp_box(const Vec3& lo, const Vec3& hi) {
    const double tol = 1e-9 * h_;
    int count = 0;
    for (int n = 0; n < num_nodes_; ++n) {
        const Vec3 x = node_position(n);
        bool in = true;
        for (int a = 0; a < dim_; ++a) in = in && x[a] >= lo[a] - tol && x[a] <= hi[a] + tol;
        if (in) {
            clamped_[n] = 1;
            ++count;
        }
    }
    return count;
}

bool DiscreteDomain::any_clamped() const noexcept {
    return std::any_of(clamped_.begin(), clamped_.end(), [](char c) { return c != 0; });
}

int DiscreteDomain::num_clamped() const noexcept {
    return static_cast<int>(std::count_if(clamped_.begin(), clamped_.end(), [](char c) { return c != 0; }));
}

void DiscreteDomain::add_point_load(const Vec3& x, const Vec3& force) {
    const auto node = find_node(x);
    if (!node) {
        fail(ErrorCode::InputError, "point load at (" + std::to_string(x[0]) + ", " + std::to_string(x[1]) + ", " +
                                        std::to_string(x[2]) + ") does not sit on a grid node");
    }
    add_node_load(*node, force);
}

void DiscreteDomain::add_node_load(int node, const Vec3& force) {
    require(node >= 0 && node < num_nodes_, "load: node index out of range");
    for (double f : force) require(std::isfinite(f), "load: non-finite force");
    loads_.push_back({node, force});
}

void DiscreteDomain::set_distributed_load(std::vector<Vec3> density) {
    require(density.empty() || static_cast<int>(density.size()) == num_cells_,
            "distributed load needs one vector per cell");
    distributed_ = std::move(density);
}

std::vector<double> DiscreteDomain::nodal_load() const {
    const int nc = ncomp();
    std::vector<double> f(num_dofs(), 0.0);
    for (const auto& pl : loads_)
        for (int i = 0; i < nc; ++i) f[nc * pl.node + i] += pl.force[i];
    if (!distributed_.empty()) {
        const double share = cell_volume() / corners();
        for (int c = 0; c < num_cells_; ++c) {
            const auto nodes = cell_nodes(c);
            for (int k = 0; k < corners(); ++k)
                for (int i = 0; i < nc; ++i) f[nc * nodes[k] + i] += share * distributed_[c][i];
        }
    }
    return f;
}

Vec3 DiscreteDomain::resultant() const {
    const std::vector<double> f = nodal_load();
    Vec3 r{};
    const int nc = ncomp();
    for (int n = 0; n < num_nodes_; ++n)
        for (int i = 0; i < nc; ++i) r[i] += f[nc * n + i];
    return r;
}

Vec3 DiscreteDomain::moment() const {
    Vec3 m{};
    if (scalar_) return m;
    const std::vector<double> f = nodal_load();
    const int nc = ncomp();
    for (int n = 0; n < num_nodes_; ++n) {
        const Vec3 x = node_position(n);
        const Vec3 fn{f[nc * n], f[nc * n + 1], nc == 3 ? f[nc * n + 2] : 0.0};
        m[0] += x[1] * fn[2] - x[2] * fn[1];
        m[1] += x[2] * fn[0] - x[0] * fn[2];
        m[2] += x[0] * fn[1] - x[1] * fn[0];
    }
    return m;
}

bool DiscreteDomain::has_load() const {
    const std::vector<double> f = nodal_load();
    return std::any_of(f.begin(), f.end(), [](double v) { return v != 0.0; });
}

bool DiscreteDomain::self_equilibrated(double tol) const {
    const std::vector<double> f = nodal_load();
    double scale = 0.0;
    for (double v : f) scale += std::abs(v);
    scale = std::max(scale, 1.0);
    const Vec3 r = resultant(), m = moment();
    return norm3(r) <= tol * scale && norm3(m) <= tol * scale;
}

void DiscreteDomain::check_admissible() const {
    if (any_clamped()) return;
    if (!self_equilibrated(1e-10))
        fail(ErrorCode::Infeasible, "no clamped nodes and the load is not self-equilibrated");
}

SymTensor unpack_strain(int dim, const double* v) {
    if (dim == 2) return SymTensor::from2(v[0], v[2], v[1]);
    return SymTensor::from3(v[0], v[1], v[2], v[3], v[4], v[5]);
}

void pack_strain(const SymTensor& t, double* v) {
    const auto& p = t.packed();
    if (t.dim() == 2) {
        v[0] = p[0];
        v[1] = p[1];
        v[2] = p[3];
    } else {
        std::copy(p.begin(), p.end(), v);
    }
}

std::vector<double> pairing_weights(const DiscreteDomain& dom) {
    const int ns = dom.nstrain();
    std::vector<double> w(static_cast<std::size_t>(ns) * dom.num_cells(), 1.0);
    if (dom.scalar()) return w;
    for (int c = 0; c < dom.num_cells(); ++c)
        for (int k = dom.dim(); k < ns; ++k) w[ns * c + k] = 2.0;
    return w;
}

namespace {

// d N_corner / d x_axis at local coordinates xi in [0,1]^dim.
double corner_gradient(const DiscreteDomain& dom, int corner, int axis, const Vec3& xi) {
    double g = ((corner >> axis) & 1) ? 1.0 : -1.0;
    for (int b = 0; b < dom.dim(); ++b)
        if (b != axis) g *= ((corner >> b) & 1) ? xi[b] : 1.0 - xi[b];
    return g / dom.h();
}

SparseMatrix strain_at_points(const DiscreteDomain& dom, const std::vector<Vec3>& pts) {
    const int dim = dom.dim(), nc = dom.ncomp(), ns = dom.nstrain();
    const int np = static_cast<int>(pts.size());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(dom.num_cells()) * np * ns * dom.corners() * 2);
    for (int c = 0; c < dom.num_cells(); ++c) {
        const auto nodes = dom.cell_nodes(c);
        for (int q = 0; q < np; ++q) {
            const int row = ns * (c * np + q);
            for (int k = 0; k < dom.corners(); ++k) {
                const int base = nc * nodes[k];
                double g[3];
                for (int a = 0; a < dim; ++a) g[a] = corner_gradient(dom, k, a, pts[q]);
                if (dom.scalar()) {
                    for (int a = 0; a < dim; ++a) trip.emplace_back(row + a, base, g[a]);
                    continue;
                }
                for (int a = 0; a < dim; ++a) trip.emplace_back(row + a, base + a, g[a]);
                const int noff = dim == 2 ? 1 : 3;
                for (int p = 0; p < noff; ++p) {
                    const int i = dim == 2 ? kOff2[p][0] : kOff3[p][0];
                    const int j = dim == 2 ? kOff2[p][1] : kOff3[p][1];
                    // e_ij = (d_j u_i + d_i u_j) / 2
                    trip.emplace_back(row + dim + p, base + i, 0.5 * g[j]);
                    trip.emplace_back(row + dim + p, base + j, 0.5 * g[i]);
                }
            }
        }
    }
    SparseMatrix b(static_cast<Eigen::Index>(ns) * dom.num_cells() * np, dom.num_dofs());
    b.setFromTriplets(trip.begin(), trip.end());
    return b;
}

} // namespace

SparseMatrix strain_matrix(const DiscreteDomain& dom) { return strain_at_points(dom, {Vec3{0.5, 0.5, 0.5}}); }

int gauss_points_per_cell(const DiscreteDomain& dom) { return dom.corners(); }

SparseMatrix gauss_strain_matrix(const DiscreteDomain& dom) {
    const double lo = 0.5 - 0.5 / std::sqrt(3.0), hi = 0.5 + 0.5 / std::sqrt(3.0);
    std::vector<Vec3> pts;
    for (int q = 0; q < dom.corners(); ++q)
        pts.push_back({(q & 1) ? hi : lo, (q & 2) ? hi : lo, (q & 4) ? hi : lo});
    return strain_at_points(dom, pts);
}

Vec3 DisplacementField::at(int node) const {
    Vec3 v{};
    for (int i = 0; i < ncomp; ++i) v[i] = values[static_cast<std::size_t>(ncomp) * node + i];
    return v;
}

std::vector<double> discrete_strain_flat(const DiscreteDomain& dom, const std::vector<double>& u) {
    require(static_cast<int>(u.size()) == dom.num_dofs(), "displacement size does not match the grid");
    const SparseMatrix b = strain_matrix(dom);
    const Eigen::Map<const Eigen::VectorXd> uv(u.data(), u.size());
    const Eigen::VectorXd e = b * uv;
    return {e.data(), e.data() + e.size()};
}

std::vector<SymTensor> discrete_strain(const DiscreteDomain& dom, const DisplacementField& u) {
    require(!dom.scalar(), "discrete_strain returns tensors; use discrete_strain_flat in scalar mode");
    const std::vector<double> e = discrete_strain_flat(dom, u.values);
    std::vector<SymTensor> out(dom.num_cells());
    for (int c = 0; c < dom.num_cells(); ++c) out[c] = unpack_strain(dom.dim(), e.data() + dom.nstrain() * c);
    return out;
}

std::vector<double> discrete_div(const DiscreteDomain& dom, const StressField& lambda) {
    const int ns = dom.nstrain(), nc = dom.ncomp(), dim = dom.dim();
    require(lambda.values.size() == static_cast<std::size_t>(ns) * dom.num_cells(), "stress size does not match the grid");
    // Matrix-free transpose of the cell-centre strain: the pairing weight 2 on
    // off-diagonal slots cancels the 1/2 in e_ij, leaving -sum_j lambda_ij g_j.
    std::vector<double> d(static_cast<std::size_t>(dom.num_dofs()), 0.0);
    const Vec3 centre{0.5, 0.5, 0.5};
    double g[8][3];
    for (int k = 0; k < dom.corners(); ++k)
        for (int a = 0; a < dim; ++a) g[k][a] = corner_gradient(dom, k, a, centre);
    const double scale = dom.cell_volume() / dom.node_volume();
    for (int c = 0; c < dom.num_cells(); ++c) {
        const double* l = lambda.values.data() + static_cast<std::size_t>(ns) * c;
        const auto nodes = dom.cell_nodes(c);
        for (int k = 0; k < dom.corners(); ++k) {
            double* out = d.data() + static_cast<std::size_t>(nc) * nodes[k];
            if (dom.scalar()) {
                for (int a = 0; a < dim; ++a) out[0] -= scale * l[a] * g[k][a];
                continue;
            }
            const SymTensor t = unpack_strain(dim, l);
            for (int i = 0; i < dim; ++i)
                for (int j = 0; j < dim; ++j) out[i] -= scale * t(i, j) * g[k][j];
        }
    }
    return d;
}

Bar make_bar(const DiscreteDomain& dom, int a, int b) {
    const Vec3 xa = dom.node_position(a), xb = dom.node_position(b);
    Vec3 d{xb[0] - xa[0], xb[1] - xa[1], xb[2] - xa[2]};
    const double len = norm3(d);
    require(len > 0.0, "bar endpoints coincide");
    for (double& x : d) x /= len;
    return {a, b, len, d};
}

SparseMatrix bar_equilibrium(const DiscreteDomain& dom, const std::vector<Bar>& bars) {
    require(!dom.scalar(), "bars need a vector-mode grid");
    const int nc = dom.ncomp();
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t k = 0; k < bars.size(); ++k) {
        const Bar& bar = bars[k];
        for (int i = 0; i < nc; ++i) {
            if (bar.dir[i] == 0.0) continue;
            trip.emplace_back(nc * bar.a + i, static_cast<int>(k), -bar.dir[i]);
            trip.emplace_back(nc * bar.b + i, static_cast<int>(k), bar.dir[i]);
        }
    }
    SparseMatrix a(dom.num_dofs(), static_cast<int>(bars.size()));
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
}

GroundStructure ground_structure(const DiscreteDomain& dom, double radius) {
    if (!(radius >= dom.h() * (1.0 - 1e-12)))
        fail(ErrorCode::InputError, "connectivity radius must be at least one cell size");
    const int dim = dom.dim();
    const int reach = static_cast<int>(std::floor(radius / dom.h() + 1e-9));
    const double r2 = std::pow(radius / dom.h(), 2) * (1.0 + 1e-9);
    std::vector<std::array<int, 3>> offsets;
    const int zr = dim == 3 ? reach : 0;
    for (int dk = -zr; dk <= zr; ++dk)
        for (int dj = -reach; dj <= reach; ++dj)
            for (int di = -reach; di <= reach; ++di) {
                // keep one of each +/- pair
                const std::array<int, 3> o{di, dj, dk};
                int first = 0;
                for (int a = 2; a >= 0; --a)
                    if (o[a] != 0) first = o[a];
                if (first <= 0) continue;
                if (di * di + dj * dj + dk * dk > r2) continue;
                if (std::gcd(std::gcd(std::abs(di), std::abs(dj)), std::abs(dk)) != 1) continue;
                offsets.push_back(o);
            }
    GroundStructure gs;
    for (int n = 0; n < dom.num_nodes(); ++n) {
        const auto ijk = dom.node_ijk(n);
        for (const auto& o : offsets) {
            std::array<int, 3> t{ijk[0] + o[0], ijk[1] + o[1], ijk[2] + o[2]};
            bool inside = true;
            for (int a = 0; a < 3; ++a) inside = inside && t[a] >= 0 && t[a] < dom.nodes(a);
            if (!inside) continue;
            gs.bars.push_back(make_bar(dom, n, dom.node_index(t[0], t[1], t[2])));
        }
    }
    if (gs.bars.empty()) fail(ErrorCode::InputError, "ground structure has no bars");
    gs.equilibrium = bar_equilibrium(dom, gs.bars);
    return gs;
}

double Segment::length() const {
    return norm3({b[0] - a[0], b[1] - a[1], b[2] - a[2]});
}

DensityMeasure::DensityMeasure(const DiscreteDomain& dom)
    : cell_volume_(dom.cell_volume()), density_(dom.num_cells(), 0.0) {}

DensityMeasure DensityMeasure::uniform(const DiscreteDomain& dom, double mass) {
    DensityMeasure m(dom);
    std::fill(m.density_.begin(), m.density_.end(), mass / dom.volume());
    return m;
}

DensityMeasure DensityMeasure::indicator(const DiscreteDomain& dom, const std::vector<int>& cells, double eps) {
    require(eps > 0.0, "indicator: eps must be positive");
    DensityMeasure m(dom);
    const double w = 1.0 / eps;
    for (int c : cells) {
        require(c >= 0 && c < dom.num_cells(), "indicator: cell index out of range");
        m.density_[c] = w;
    }
    return m;
}

double DensityMeasure::grid_mass() const {
    double s = 0.0;
    for (double d : density_) s += d;
    return s * cell_volume_;
}

double DensityMeasure::segment_mass() const {
    double s = 0.0;
    for (const auto& seg : segments_) s += seg.density * seg.length();
    return s;
}

bool DensityMeasure::has_grid_part() const {
    return std::any_of(density_.begin(), density_.end(), [](double d) { return d != 0.0; });
}

void DensityMeasure::scale(double t) {
    for (double& d : density_) d *= t;
    for (auto& s : segments_) s.density *= t;
}

void DensityMeasure::normalize() {
    const double m = total_mass();
    require(m > 0.0, "cannot normalize a measure of zero mass");
    scale(1.0 / m);
}

void DensityMeasure::validate() const {
    for (double d : density_) require(d >= 0.0 && std::isfinite(d), "density must be finite and nonnegative");
    for (const auto& s : segments_) require(s.density >= 0.0 && std::isfinite(s.density), "segment density must be nonnegative");
}

FattenResult fatten(const DiscreteDomain& dom, const DensityMeasure& lower, double eps, int subsamples) {
    require(eps > 0.0, "fatten: eps must be positive");
    require(subsamples >= 1, "fatten: need at least one subsample");
    require(!dom.scalar(), "fatten: vector-mode grid expected");
    const double mass = lower.segment_mass();
    require(mass > 0.0, "fatten: the lower-dimensional part has zero mass");
    if (eps * mass >= dom.volume()) fail(ErrorCode::InputError, "fatten: eps exceeds the domain volume");

    const int dim = dom.dim();
    const double h = dom.h();
    FattenResult out;
    out.measure = DensityMeasure(dom);
    std::vector<double>& dens = out.measure.density();
    const double sub = 1.0 / subsamples;
    const int per_cell = static_cast<int>(std::pow(subsamples, dim));

    for (std::size_t si = 0; si < lower.segments().size(); ++si) {
        const Segment& seg = lower.segments()[si];
        const double len = seg.length();
        if (seg.density == 0.0 || len == 0.0) continue;
        Vec3 t{(seg.b[0] - seg.a[0]) / len, (seg.b[1] - seg.a[1]) / len, (seg.b[2] - seg.a[2]) / len};
        const double area = eps * seg.density; // cross-section measure
        const double half = dim == 2 ? 0.5 * area : std::sqrt(area / std::numbers::pi);
        auto inside = [&](const Vec3& x) {
            Vec3 d{x[0] - seg.a[0], x[1] - seg.a[1], x[2] - seg.a[2]};
            const double s = d[0] * t[0] + d[1] * t[1] + d[2] * t[2];
            if (s < 0.0 || s > len) return false;
            double p2 = 0.0;
            for (int a = 0; a < dim; ++a) p2 += std::pow(d[a] - s * t[a], 2);
            return p2 <= half * half;
        };
        // Cell range covering the tube's bounding box.
        std::array<int, 3> lo{0, 0, 0}, hi{0, 0, 0};
        bool clipped = false;
        for (int a = 0; a < dim; ++a) {
            const double mn = std::min(seg.a[a], seg.b[a]) - half, mx = std::max(seg.a[a], seg.b[a]) + half;
            const double x0 = dom.origin()[a], x1 = x0 + h * dom.cells(a);
            lo[a] = std::clamp(static_cast<int>(std::floor((mn - x0) / h)), 0, dom.cells(a) - 1);
            hi[a] = std::clamp(static_cast<int>(std::floor((mx - x0) / h)), 0, dom.cells(a) - 1);
            // Only the perpendicular extent can leave the box for a segment inside it.
            if (mn < x0 - 1e-12 || mx > x1 + 1e-12) clipped = true;
        }
        double covered = 0.0;
        std::vector<std::pair<int, double>> hits;
        for (int k = lo[2]; k <= hi[2]; ++k)
            for (int j = lo[1]; j <= hi[1]; ++j)
                for (int i = lo[0]; i <= hi[0]; ++i) {
                    const int c = dom.cell_index(i, j, k);
                    const std::array<int, 3> ijk{i, j, k};
                    int count = 0;
                    for (int q = 0; q < per_cell; ++q) {
                        Vec3 x = dom.origin();
                        int rest = q;
                        for (int a = 0; a < dim; ++a) {
                            x[a] += h * (ijk[a] + (rest % subsamples + 0.5) * sub);
                            rest /= subsamples;
                        }
                        if (inside(x)) ++count;
                    }
                    if (count == 0) continue;
                    const double frac = static_cast<double>(count) / per_cell;
                    hits.emplace_back(c, frac);
                    covered += frac * dom.cell_volume();
                }
        if (covered == 0.0)
            fail(ErrorCode::Unresolved, "fatten: tube around segment " + std::to_string(si) +
                                            " is thinner than the rasterization resolution");
        const double target = area * len;
        double factor = 1.0 / eps;
        if (clipped) {
            factor *= target / covered;
            out.warnings.push_back("segment " + std::to_string(si) +
                                   ": tube clipped by the domain boundary, mass rebalanced");
        }
        for (const auto& [c, frac] : hits) dens[c] += frac * factor;
        out.covered_volume += covered;
    }
    // Rasterization error is removed by a global rescale to the input mass.
    const double got = out.measure.grid_mass();
    out.measure.scale(mass / got);
    return out;
}

} // namespace vmass
