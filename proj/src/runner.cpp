#include "vmass/runner.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "output.hpp"
#include "problem.hpp"
#include "vmass/compliance.hpp"
#include "vmass/error.hpp"
#include "vmass/mk_solver.hpp"
#include "vmass/probes.hpp"

#ifndef VMASS_VERSION
#define VMASS_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace vmass {

const char* version() { return VMASS_VERSION; }

namespace {

using ojson = nlohmann::ordered_json;

struct Context {
    const RunConfig& cfg;
    fs::path dir;
    Problem problem;
    std::vector<std::string> files;
    ojson summary = ojson::object();
};

void write_json(const fs::path& path, const ojson& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) fail(ErrorCode::Io, "write failed on " + path.string());
}

std::string b(bool v) { return v ? "1" : "0"; }

// Eigen-decomposition of a cell stress for the quiver file, largest |value| first.
void principal(const SymTensor& t, std::vector<std::string>& row) {
    const Spectral s = eigen(t);
    for (int i = 0; i < t.dim(); ++i) row.push_back(fmt(s.values[i]));
    for (int i = 0; i < t.dim(); ++i)
        for (int a = 0; a < t.dim(); ++a) row.push_back(fmt(s.vectors[i][a]));
}

std::vector<Column> position_columns(int dim) {
    std::vector<Column> c{{"cell", "cell index (x fastest)"}, {"x", "cell centre x"}, {"y", "cell centre y"}};
    if (dim == 3) c.push_back({"z", "cell centre z"});
    return c;
}

void position_cells(const DiscreteDomain& dom, int c, std::vector<std::string>& row) {
    const Vec3 x = dom.cell_center(c);
    row.push_back(std::to_string(c));
    for (int a = 0; a < dom.dim(); ++a) row.push_back(fmt(x[a]));
}

// --------------------------------------------------------------------------

void run_integrand_table(Context& ctx) {
    const Problem& p = ctx.problem;
    const json& t = p.config.contains("table") ? p.config["table"] : json::object();
    std::vector<Vec3> rows;
    if (t.contains("eigenvalues")) {
        if (!t["eigenvalues"].is_array()) fail(ErrorCode::MalformedConfig, "table.eigenvalues must be an array");
        for (const json& r : t["eigenvalues"]) {
            if (!r.is_array() || static_cast<int>(r.size()) != p.dim)
                fail(ErrorCode::MalformedConfig, "each eigenvalue row needs " + std::to_string(p.dim) + " numbers");
            Vec3 v{};
            for (int i = 0; i < p.dim; ++i) v[i] = r[i].get<double>();
            rows.push_back(v);
        }
    } else {
        const std::vector<double> range = get_or(t, "range", std::vector<double>{-2.0, 2.0});
        const int steps = get_or(t, "steps", 5);
        if (range.size() != 2 || steps < 1) fail(ErrorCode::MalformedConfig, "table.range needs [lo, hi] and steps >= 1");
        const double d = steps > 1 ? (range[1] - range[0]) / (steps - 1) : 0.0;
        const int total = p.dim == 2 ? steps * steps : steps * steps * steps;
        for (int n = 0; n < total; ++n) {
            Vec3 v{};
            int m = n;
            for (int i = 0; i < p.dim; ++i) {
                v[i] = range[0] + d * (m % steps);
                m /= steps;
            }
            rows.push_back(v);
        }
    }
    std::vector<Column> cols;
    for (int i = 0; i < p.dim; ++i)
        cols.push_back({"lambda" + std::to_string(i + 1), "eigenvalue " + std::to_string(i + 1) + " of the input"});
    cols.push_back({"j", "original quadratic potential"});
    cols.push_back({"j_bar", "relaxed potential (rank <= dim-1 stresses)"});
    for (int k = 1; k < p.dim; ++k)
        cols.push_back({"j_" + std::to_string(k), "rank-" + std::to_string(k) + " potential"});
    cols.push_back({"rho", "gauge sqrt(2 j_bar)"});
    cols.push_back({"rho0", "polar gauge sqrt(2 j_bar*) of the same tensor read as a stress"});
    CsvWriter csv(ctx.dir, "table", cols, ctx.files);
    for (const Vec3& v : rows) {
        const SymTensor z = p.dim == 2 ? SymTensor::diag(v[0], v[1]) : SymTensor::diag(v[0], v[1], v[2]);
        std::vector<std::string> r;
        for (int i = 0; i < p.dim; ++i) r.push_back(fmt(v[i]));
        r.push_back(fmt(eval_j(p.law, z)));
        r.push_back(fmt(eval_j_bar(p.law, z)));
        for (int k = 1; k < p.dim; ++k) r.push_back(fmt(eval_j_k(p.law, k, z)));
        r.push_back(fmt(rho(p.law, z)));
        r.push_back(fmt(rho0(p.law, z)));
        csv.row(r);
    }
    ctx.summary["rows"] = rows.size();
    ctx.summary["gamma"] = p.law.gamma();
}

// --------------------------------------------------------------------------

void run_compliance(Context& ctx) {
    const Problem& p = ctx.problem;
    validate_for_solve(p);
    const DensityMeasure mu = build_measure(p, p.config.contains("measure") ? p.config["measure"] : json());
    std::vector<std::string> laws{"c", "E"};
    if (p.config.contains("compliance")) laws = get_or(p.config["compliance"], "laws", laws);
    ComplianceOptions opts;
    opts.tol = std::min(p.tol, 1e-6);
    CsvWriter log(ctx.dir, "compliance_log",
                  {{"law", "c (law j), E (relaxed) or E_k"},
                   {"k", "rank bound of the stress law"},
                   {"floor", "floor density relative to the mean (0: active-set path)"},
                   {"value", "compliance"},
                   {"primal", "lower certificate"},
                   {"dual", "upper certificate"},
                   {"gap", "relative certificate gap"},
                   {"iterations", "solver iterations"},
                   {"finite", "1 if the load is carried"},
                   {"equilibrium_residual", "max nodal force imbalance of the reported stress"}},
                  ctx.files);
    ojson values = ojson::object();
    std::optional<ComplianceReport> c_report;
    for (const std::string& name : laws) {
        ComplianceReport r;
        if (name == "c") {
            r = compliance_c(p.dom, mu, p.law, opts);
        } else if (name == "E") {
            r = compliance_E(p.dom, mu, p.law, std::nullopt, opts);
        } else if (name.size() > 2 && name[0] == 'E' && name[1] == '_') {
            int k = 0;
            try {
                k = std::stoi(name.substr(2));
            } catch (const std::exception&) {
                fail(ErrorCode::MalformedConfig, "bad law name '" + name + "'");
            }
            r = compliance_E(p.dom, mu, p.law, k, opts);
        } else {
            fail(ErrorCode::MalformedConfig, "unknown compliance law '" + name + "' (use c, E or E_k)");
        }
        log.row({name, std::to_string(r.k), fmt(r.floor), fmt(r.value), fmt(r.primal), fmt(r.dual), fmt(r.gap),
                 std::to_string(r.iterations), b(r.finite), fmt(r.equilibrium_residual)});
        values[name] = r.finite ? ojson(r.value) : ojson("inf");
        if (!r.diagnosis.empty()) ctx.summary["diagnosis_" + name] = r.diagnosis;
        if (name == "c") c_report = std::move(r);
    }
    ctx.summary["compliance"] = values;
    ctx.summary["mass"] = mu.total_mass();
    if (!p.scalar) {
        std::vector<CellScalar> fields{{"density", mu.density()}};
        if (c_report && c_report->finite) {
            const int ns = p.dom.nstrain();
            const char* names2[] = {"stress_xx", "stress_yy", "stress_xy"};
            const char* names3[] = {"stress_xx", "stress_yy", "stress_zz", "stress_xy", "stress_xz", "stress_yz"};
            for (int a = 0; a < ns; ++a) {
                CellScalar f{p.dim == 2 ? names2[a] : names3[a], std::vector<double>(p.dom.num_cells())};
                for (int c = 0; c < p.dom.num_cells(); ++c) f.values[c] = c_report->stress.values[ns * c + a];
                fields.push_back(std::move(f));
            }
        }
        write_vtk(ctx.dir / "fields.vtk", p.dom, fields, "density and stress of the quadratic law");
        ctx.files.push_back("fields.vtk");
    }
}

// --------------------------------------------------------------------------

void run_solve_mk(Context& ctx) {
    const Problem& p = ctx.problem;
    validate_for_solve(p);
    const json& solver = p.config["solver"];
    std::string method = ctx.cfg.method.empty() ? get_or<std::string>(solver, "method", "grid") : ctx.cfg.method;
    if (method != "grid" && method != "truss") fail(ErrorCode::MalformedConfig, "solver.method must be grid or truss");
    MKSolution s;
    if (method == "truss") {
        const double radius_cells = get_or(solver, "connectivity_radius", 1.5);
        s = solve_mk_truss(p.dom, p.law, radius_cells * p.dom.h());
    } else {
        MKOptions o;
        o.tol = p.tol;
        o.max_iterations = get_or(solver, "max_iterations", o.max_iterations);
        o.original_law = get_or(solver, "original_law", false);
        s = solve_mk_grid(p.dom, p.law, o);
    }
    ctx.summary["method"] = method;
    ctx.summary["I"] = s.I;
    ctx.summary["primal"] = s.primal;
    ctx.summary["dual"] = s.dual;
    ctx.summary["gap"] = s.gap;
    ctx.summary["iterations"] = s.iterations;
    ctx.summary["converged"] = s.converged;
    ctx.summary["equilibrium_residual"] = s.equilibrium_residual;
    ctx.summary["optimal_mass_value"] = 0.5 * s.I * s.I;
    if (get_or(solver, "check_mass", false) && method == "grid" && !p.scalar) {
        double e = 0.0;
        optimal_mass_value(p.dom, p.law, s, 0.05, &e);
        ctx.summary["compliance_E_mu_opt"] = e;
    }

    std::vector<Column> cols = position_columns(p.dim);
    cols.push_back({"density", "optimal mass density (probability per unit volume)"});
    CsvWriter mu(ctx.dir, "mu", cols, ctx.files);
    for (int c = 0; c < p.dom.num_cells(); ++c) {
        std::vector<std::string> r;
        position_cells(p.dom, c, r);
        r.push_back(fmt(s.mu_opt.density()[c]));
        mu.row(r);
    }
    if (method == "grid") {
        if (!p.scalar) {
            std::vector<Column> lc = position_columns(p.dim);
            for (int i = 1; i <= p.dim; ++i)
                lc.push_back({"s" + std::to_string(i), "principal stress " + std::to_string(i) + " (|s1| largest)"});
            const char* axes = "xyz";
            for (int i = 1; i <= p.dim; ++i)
                for (int a = 0; a < p.dim; ++a)
                    lc.push_back({"d" + std::to_string(i) + axes[a],
                                  std::string(1, axes[a]) + " component of principal direction " + std::to_string(i)});
            CsvWriter lam(ctx.dir, "lambda_principal", lc, ctx.files);
            for (int c = 0; c < p.dom.num_cells(); ++c) {
                std::vector<std::string> r;
                position_cells(p.dom, c, r);
                principal(s.lambda.tensor(c), r);
                lam.row(r);
            }
        }
        write_vtk(ctx.dir / "mu.vtk", p.dom, {{"density", s.mu_opt.density()}}, "optimal mass density");
        ctx.files.push_back("mu.vtk");
    } else {
        std::vector<Column> bc;
        const char* axes = "xyz";
        for (const char* end : {"a", "b"})
            for (int a = 0; a < p.dim; ++a)
                bc.push_back({std::string(end) + "_" + axes[a], std::string(1, axes[a]) + " of endpoint " + end});
        bc.push_back({"force", "axial force (tension positive)"});
        bc.push_back({"mass", "gauge cost |force| sqrt(g) length"});
        CsvWriter bars(ctx.dir, "bars", bc, ctx.files);
        for (const TrussBar& tb : s.bars) {
            std::vector<std::string> r;
            for (int node : {tb.bar.a, tb.bar.b}) {
                const Vec3 x = p.dom.node_position(node);
                for (int a = 0; a < p.dim; ++a) r.push_back(fmt(x[a]));
            }
            r.push_back(fmt(tb.force));
            r.push_back(fmt(tb.mass));
            bars.row(r);
        }
        ctx.summary["bars"] = s.bars.size();
    }
}

// --------------------------------------------------------------------------

std::vector<double> eps_list(const json& section, const char* key, std::vector<double> fallback) {
    std::vector<double> v = get_or(section, key, fallback);
    if (v.empty()) fail(ErrorCode::MalformedConfig, std::string(key) + " ladder is empty");
    return v;
}

void run_gamma_sweep(Context& ctx) {
    const Problem& p = ctx.problem;
    validate_for_solve(p);
    const json& sw = p.config.contains("sweep") ? p.config["sweep"] : json::object();
    if (!p.config.contains("measure")) fail(ErrorCode::MalformedConfig, "gamma-sweep needs a segment 'measure'");
    const DensityMeasure target = build_measure(p, p.config["measure"]);
    const GammaSweepReport r =
        gamma_upper_sweep(p.dom, target, eps_list(sw, "eps", {0.1, 0.05, 0.02}), p.law, get_or(sw, "band", 0.1));
    CsvWriter csv(ctx.dir, "sweep",
                  {{"eps", "fattening parameter"},
                   {"c_eps", "compliance of the fattened measure"},
                   {"finite", "1 if finite"},
                   {"covered_volume", "volume of the fattened set"},
                   {"c_target", "compliance of the lower-dimensional target"},
                   {"E_target", "relaxed compliance of the target"}},
                  ctx.files);
    for (const GammaSweepStep& s : r.steps)
        csv.row({fmt(s.eps), fmt(s.c_eps), b(s.finite), fmt(s.covered_volume), fmt(r.c_target), fmt(r.E_target)});
    ctx.summary["c_target"] = r.c_target;
    ctx.summary["E_target"] = r.E_target;
    ctx.summary["limsup_estimate"] = r.limsup_estimate;
    ctx.summary["upper_bound_holds"] = r.upper_bound_holds;
}

// --------------------------------------------------------------------------

void run_seppecher(Context& ctx, const json& pr) {
    const std::vector<double> eps = eps_list(pr, "eps", {0.125, 0.0625, 0.03125});
    const int res = ctx.cfg.resolution ? *ctx.cfg.resolution : get_or(pr, "resolution", 1312);
    YoungOptions yo;
    yo.probe_cells = get_or(pr, "probe_cells", yo.probe_cells);
    const bool vtk = get_or(pr, "vtk", false);
    CsvWriter csv(ctx.dir, "seppecher",
                  {{"eps", "period (ball area fraction)"},
                   {"cells_per_period", "grid cells per period"},
                   {"radius", "ball radius in period units"},
                   {"div_residual", "max nodal |div sigma|"},
                   {"div_bound", "1e-8 max|sigma| / h"},
                   {"ball_deviation", "max |sigma - I| on ball cells"},
                   {"energy", "int |sigma|^2 dmu"},
                   {"mass", "mass of mu_eps"},
                   {"mean_dx_xx", "int sigma_xx dx"},
                   {"mean_dx_yy", "int sigma_yy dx"},
                   {"mean_dx_xy", "int sigma_xy dx"},
                   {"mean_dmu_xx", "mean of sigma_xx under mu_eps"},
                   {"mean_dmu_yy", "mean of sigma_yy under mu_eps"},
                   {"mean_dmu_xy", "mean of sigma_xy under mu_eps"},
                   {"period_mean", "max over period cells of |mean sigma dx|"}},
                  ctx.files);
    std::vector<std::pair<DensityMeasure, StressField>> fields;
    std::optional<DiscreteDomain> dom;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        SeppecherField f = seppecher_field(eps[i], res);
        csv.row({fmt(f.eps), std::to_string(f.cells_per_period), fmt(f.radius), fmt(f.div_residual), fmt(f.div_bound),
                 fmt(f.ball_deviation), fmt(f.energy), fmt(f.mu.total_mass()), fmt(f.mean_dx[0]), fmt(f.mean_dx[1]),
                 fmt(f.mean_dx[2]), fmt(f.mean_dmu[0]), fmt(f.mean_dmu[1]), fmt(f.mean_dmu[2]), fmt(f.period_mean)});
        if (vtk) {
            const std::string name = "seppecher_" + std::to_string(i) + ".vtk";
            std::vector<CellScalar> cs{{"density", f.mu.density()}};
            const char* names[] = {"sigma_xx", "sigma_yy", "sigma_xy"};
            for (int a = 0; a < 3; ++a) {
                CellScalar s{names[a], std::vector<double>(f.dom.num_cells())};
                for (int c = 0; c < f.dom.num_cells(); ++c) s.values[c] = f.sigma.values[3 * c + a];
                cs.push_back(std::move(s));
            }
            write_vtk(ctx.dir / name, f.dom, cs, "periodic ball microstructure");
            ctx.files.push_back(name);
        }
        dom = f.dom;
        fields.emplace_back(std::move(f.mu), std::move(f.sigma));
    }
    const YoungReport yr = young_extract(*dom, fields, {}, yo);
    CsvWriter yc(ctx.dir, "young",
                 {{"eps", "ladder step"},
                  {"probe", "probe block index"},
                  {"cx", "probe block centre x"},
                  {"cy", "probe block centre y"},
                  {"ok", "1 if the moment fit succeeded"},
                  {"residual", "relative moment residual"},
                  {"weight", "atom weight"},
                  {"xx", "atom xx"},
                  {"yy", "atom yy"},
                  {"xy", "atom xy"}},
                 ctx.files);
    ojson min_weight = ojson::array();
    for (std::size_t i = 0; i < yr.fits.size(); ++i) {
        double wmin = 1.0;
        for (std::size_t k = 0; k < yr.fits[i].size(); ++k) {
            const YoungFit& f = yr.fits[i][k];
            const std::vector<std::string> head{fmt(eps[i]), std::to_string(k), fmt(f.centre[0]), fmt(f.centre[1]),
                                                b(f.ok), fmt(f.residual)};
            if (!f.ok) {
                auto r = head;
                r.insert(r.end(), {"0", "0", "0", "0"});
                yc.row(r);
                wmin = 0.0;
                continue;
            }
            wmin = std::min(wmin, f.measure.weight_near(SymTensor::identity(2), 1e-9));
            for (const auto& [w, xi] : f.measure.atoms()) {
                auto r = head;
                r.insert(r.end(), {fmt(w), fmt(xi(0, 0)), fmt(xi(1, 1)), fmt(xi(0, 1))});
                yc.row(r);
            }
        }
        min_weight.push_back(wmin);
    }
    ctx.summary["resolution"] = res;
    ctx.summary["identity_weight_min"] = min_weight;
}

SymTensor random_singular(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> g;
    SymTensor t(dim);
    for (int k = 0; k < dim - 1; ++k) {
        Vec3 e{};
        double n2 = 0.0;
        for (int a = 0; a < dim; ++a) {
            e[a] = g(rng);
            n2 += e[a] * e[a];
        }
        for (int a = 0; a < dim; ++a) e[a] /= std::sqrt(n2);
        t += outer(dim, e, 2.0 * g(rng));
    }
    return t;
}

SymTensor random_tensor(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> g;
    double v[6];
    for (double& x : v) x = g(rng);
    return unpack_strain(dim, v);
}

void run_conj2(Context& ctx, const json& pr) {
    const Problem& p = ctx.problem;
    std::vector<DiscreteYoungMeasure> measures;
    if (pr.contains("measures")) {
        if (!pr["measures"].is_array()) fail(ErrorCode::MalformedConfig, "probe.measures must be an array");
        for (const json& m : pr["measures"]) measures.push_back(young_from_json(p.dim, m));
    }
    const int nrand = get_or(pr, "random", measures.empty() ? 100 : 0);
    const int natoms = get_or(pr, "atoms", 3);
    if (nrand < 0 || natoms < 1) fail(ErrorCode::MalformedConfig, "probe.random and probe.atoms must be positive");
    std::mt19937_64 rng(ctx.cfg.seed);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int i = 0; i < nrand; ++i) {
        std::vector<std::pair<double, SymTensor>> atoms;
        for (int k = 0; k < natoms; ++k) atoms.emplace_back(u(rng), random_tensor(rng, p.dim));
        measures.emplace_back(p.dim, std::move(atoms));
    }
    CsvWriter csv(ctx.dir, "conj2",
                  {{"instance", "measure index"},
                   {"atoms", "number of atoms"},
                   {"lhs", "int j* dnu"},
                   {"rhs", "relaxed conjugate of the barycenter"},
                   {"satisfied", "1 if lhs >= rhs up to 1e-9 relative"}},
                  ctx.files);
    int sat = 0;
    for (std::size_t i = 0; i < measures.size(); ++i) {
        const Conj2Result r = conj2_check(measures[i], p.law);
        sat += r.satisfied;
        csv.row({std::to_string(i), std::to_string(measures[i].size()), fmt(r.lhs), fmt(r.rhs), b(r.satisfied)});
    }
    ctx.summary["instances"] = measures.size();
    ctx.summary["satisfied"] = sat;
}

void run_conj3(Context& ctx, const json& pr) {
    const Problem& p = ctx.problem;
    struct Instance {
        DiscreteYoungMeasure nu0;
        std::vector<DiscreteYoungMeasure> kernels;
    };
    std::vector<Instance> inst;
    if (pr.contains("instances")) {
        if (!pr["instances"].is_array()) fail(ErrorCode::MalformedConfig, "probe.instances must be an array");
        for (const json& in : pr["instances"]) {
            if (!in.is_object() || !in.contains("nu0") || !in.contains("kernels") || !in["kernels"].is_array())
                fail(ErrorCode::MalformedConfig, "conj3 instance needs 'nu0' and a 'kernels' array");
            Instance x{young_from_json(p.dim, in["nu0"]), {}};
            for (const json& k : in["kernels"]) x.kernels.push_back(young_from_json(p.dim, k));
            inst.push_back(std::move(x));
        }
    }
    const int nrand = get_or(pr, "random", inst.empty() ? 1000 : 0);
    const int natoms = get_or(pr, "atoms", 3), katoms = get_or(pr, "kernel_atoms", 3);
    if (nrand < 0 || natoms < 1 || katoms < 1) fail(ErrorCode::MalformedConfig, "probe counts must be positive");
    std::mt19937_64 rng(ctx.cfg.seed);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int i = 0; i < nrand; ++i) {
        std::vector<std::pair<double, SymTensor>> atoms;
        std::vector<DiscreteYoungMeasure> kernels;
        for (int k = 0; k < natoms; ++k) {
            const SymTensor xi = random_singular(rng, p.dim);
            atoms.emplace_back(u(rng), xi);
            // Kernel: random atoms shifted so the weighted mean is xi.
            std::vector<std::pair<double, SymTensor>> ka;
            double wsum = 0.0;
            SymTensor mean(p.dim);
            for (int m = 0; m < katoms; ++m) {
                const double w = u(rng);
                const SymTensor y = random_tensor(rng, p.dim);
                ka.emplace_back(w, y);
                wsum += w;
                mean += w * y;
            }
            const SymTensor shift = xi - (1.0 / wsum) * mean;
            for (auto& [w, y] : ka) y += shift;
            kernels.emplace_back(p.dim, std::move(ka));
        }
        inst.push_back({DiscreteYoungMeasure(p.dim, std::move(atoms)), std::move(kernels)});
    }
    CsvWriter csv(ctx.dir, "conj3",
                  {{"instance", "instance index"},
                   {"q1", "int j* dnu"},
                   {"q2", "int j* dnu0"},
                   {"q3", "int jbar* dnu0"},
                   {"q4", "jbar* of the barycenter"},
                   {"chain_holds", "1 if q1 >= q2 >= q3 >= q4 up to 1e-9"},
                   {"conj2_satisfied", "1 if the composed measure passes conj2"}},
                  ctx.files);
    int fails = 0, chain_fails = 0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        const Conj3Report r = conj3_verify(inst[i].nu0, inst[i].kernels, p.law);
        fails += !r.conj2.satisfied;
        chain_fails += !r.chain_holds;
        csv.row({std::to_string(i), fmt(r.q1), fmt(r.q2), fmt(r.q3), fmt(r.q4), b(r.chain_holds),
                 b(r.conj2.satisfied)});
    }
    ctx.summary["instances"] = inst.size();
    ctx.summary["conj2_failures"] = fails;
    ctx.summary["chain_failures"] = chain_fails;
    if (fails > 0)
        fail(ErrorCode::Inconsistent, std::to_string(fails) + " composed measures failed conj2 (see conj3.csv)");
}

void run_gap(Context& ctx, const json& pr) {
    const Problem& p = ctx.problem;
    validate_for_solve(p);
    const GapReport r =
        gap_probe(p.dom, eps_list(pr, "eps", {1.0, 0.5, 0.25, 0.125}), p.law, get_or(pr, "max_exchanges", 20));
    CsvWriter csv(ctx.dir, "gap",
                  {{"eps", "volume of the cell subset"},
                   {"cells", "cells in the subset"},
                   {"c_eps", "heuristic upper bound on inf c_eps"},
                   {"gap", "c_eps - min c (upper estimate)"},
                   {"exchanges", "accepted local exchanges"},
                   {"finite", "1 if the subset carries the load"}},
                  ctx.files);
    for (const GapStep& s : r.steps)
        csv.row({fmt(s.eps), std::to_string(s.cells), fmt(s.c_eps), fmt(s.gap), std::to_string(s.exchanges), b(s.finite)});
    ctx.summary["min_c"] = r.min_c;
    ctx.summary["min_E"] = r.min_E;
    ctx.summary["note"] = "c_eps and gap are heuristic upper bounds (greedy selection with local exchanges)";
}

void run_probe(Context& ctx) {
    const json& pr = ctx.problem.config.contains("probe") ? ctx.problem.config["probe"] : json::object();
    if (!pr.is_object()) fail(ErrorCode::MalformedConfig, "'probe' must be an object");
    const std::string& kind = ctx.cfg.probe;
    if (kind == "seppecher") return run_seppecher(ctx, pr);
    if (kind == "conj2") return run_conj2(ctx, pr);
    if (kind == "conj3") return run_conj3(ctx, pr);
    if (kind == "gap") return run_gap(ctx, pr);
    fail(ErrorCode::InputError, "unknown probe '" + kind + "' (seppecher, conj2, conj3, gap)");
}

ojson manifest(const Context& ctx, double seconds) {
    ojson m;
    m["artifact"] = "vmass";
    m["version"] = version();
    m["subcommand"] = ctx.cfg.subcommand;
    if (!ctx.cfg.probe.empty()) m["probe"] = ctx.cfg.probe;
    m["problem_file"] = ctx.cfg.problem_path;
    m["seed"] = ctx.cfg.seed;
    ojson opts = ojson::object();
    if (ctx.cfg.tol) opts["tol"] = *ctx.cfg.tol;
    if (ctx.cfg.resolution) opts["resolution"] = *ctx.cfg.resolution;
    if (!ctx.cfg.method.empty()) opts["method"] = ctx.cfg.method;
    opts["scalar"] = ctx.cfg.scalar;
    m["options"] = opts;
    m["config"] = ojson::parse(ctx.problem.config.dump());
    m["elapsed_seconds"] = seconds;
    m["files"] = ctx.files;
    return m;
}

} // namespace

RunResult run(const RunConfig& cfg) {
    RunResult res;
    const auto t0 = std::chrono::steady_clock::now();
    fs::path dir = cfg.out_dir.empty() ? fs::path("run") : fs::path(cfg.out_dir);
    std::optional<Context> ctx;
    try {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) fail(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
        static const char* known[] = {"integrand-table", "compliance", "solve-mk", "gamma-sweep", "probe"};
        if (std::find(std::begin(known), std::end(known), cfg.subcommand) == std::end(known))
            fail(ErrorCode::InputError, "unknown subcommand '" + cfg.subcommand + "'");
        json doc = json::object();
        if (!cfg.problem_json.empty())
            doc = parse_json(cfg.problem_json, "inline problem");
        else if (!cfg.problem_path.empty())
            doc = read_json_file(cfg.problem_path);
        else if (cfg.subcommand != "integrand-table" && cfg.subcommand != "probe")
            fail(ErrorCode::InputError, cfg.subcommand + " needs a problem file (--config)");
        const bool grid = !(cfg.subcommand == "integrand-table" ||
                            (cfg.subcommand == "probe" && (cfg.probe == "seppecher" || cfg.probe == "conj2" ||
                                                           cfg.probe == "conj3")));
        ctx.emplace(Context{cfg, dir, build_problem(std::move(doc), grid ? cfg.resolution : std::nullopt, cfg.tol,
                                                    cfg.scalar, grid),
                            {}, ojson::object()});
        if (cfg.subcommand == "integrand-table") run_integrand_table(*ctx);
        else if (cfg.subcommand == "compliance") run_compliance(*ctx);
        else if (cfg.subcommand == "solve-mk") run_solve_mk(*ctx);
        else if (cfg.subcommand == "gamma-sweep") run_gamma_sweep(*ctx);
        else run_probe(*ctx);
        write_json(dir / "summary.json", ctx->summary);
        ctx->files.push_back("summary.json");
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_json(dir / "manifest.json", manifest(*ctx, secs));
        res.files = ctx->files;
        res.files.push_back("manifest.json");
        return res;
    } catch (const Error& e) {
        res.exit_code = static_cast<int>(e.code());
        res.message = e.what();
    } catch (const std::bad_alloc&) {
        res.exit_code = static_cast<int>(ErrorCode::Internal);
        res.message = "out of memory";
    } catch (const std::exception& e) {
        res.exit_code = static_cast<int>(ErrorCode::Internal);
        res.message = e.what();
    }
    // Machine-readable failure record; the summary is still written when the
    // solve itself got far enough to produce one.
    try {
        ojson err;
        err["code"] = res.exit_code;
        err["error"] = to_string(static_cast<ErrorCode>(res.exit_code));
        err["message"] = res.message;
        err["subcommand"] = cfg.subcommand;
        write_json(dir / "error.json", err);
        res.files.push_back("error.json");
        if (ctx) {
            write_json(dir / "summary.json", ctx->summary);
            ctx->files.push_back("summary.json");
            ctx->files.push_back("error.json");
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            write_json(dir / "manifest.json", manifest(*ctx, secs));
            res.files = ctx->files;
            res.files.push_back("manifest.json");
        }
    } catch (const std::exception&) {
        // The exit code already carries the failure.
    }
    return res;
}

RunResult compare(const std::string& dir_a, const std::string& dir_b, const std::string& out_path) {
    RunResult res;
    try {
        const json ma = read_json_file((fs::path(dir_a) / "manifest.json").string());
        const json mb = read_json_file((fs::path(dir_b) / "manifest.json").string());
        auto field = [](const json& m, const char* k) { return m.contains(k) ? m[k] : json(); };
        if (field(ma, "subcommand") != field(mb, "subcommand") || field(ma, "probe") != field(mb, "probe"))
            fail(ErrorCode::InputError, "runs come from different subcommands");
        const json ca = field(ma, "config"), cb = field(mb, "config");
        if (field(ca, "law") != field(cb, "law"))
            fail(ErrorCode::InputError, "runs use different laws (" + field(ca, "law").dump() + " vs " +
                                            field(cb, "law").dump() + "); refusing to compare");
        for (const char* k : {"dim", "scalar", "clamps", "loads", "body_force", "measure"})
            if (field(ca, k) != field(cb, k))
                fail(ErrorCode::InputError, std::string("problem geometry differs in '") + k + "'");
        const json da = field(ca, "domain"), db = field(cb, "domain");
        for (const char* k : {"size", "origin"})
            if (field(da, k) != field(db, k))
                fail(ErrorCode::InputError, std::string("problem geometry differs in domain.") + k);

        const json sa = read_json_file((fs::path(dir_a) / "summary.json").string());
        const json sb = read_json_file((fs::path(dir_b) / "summary.json").string());
        ojson out;
        out["a"] = dir_a;
        out["b"] = dir_b;
        ojson deltas = ojson::object();
        // Flatten one level of nesting (e.g. compliance.c).
        std::vector<std::pair<std::string, std::pair<json, json>>> pairs;
        for (auto it = sa.begin(); it != sa.end(); ++it) {
            if (!sb.contains(it.key())) continue;
            if (it->is_object()) {
                for (auto jt = it->begin(); jt != it->end(); ++jt)
                    if (sb[it.key()].is_object() && sb[it.key()].contains(jt.key()))
                        pairs.push_back({it.key() + "." + jt.key(), {*jt, sb[it.key()][jt.key()]}});
            } else {
                pairs.push_back({it.key(), {*it, sb[it.key()]}});
            }
        }
        for (const auto& [key, v] : pairs) {
            if (!v.first.is_number() || !v.second.is_number() || v.first.is_boolean()) continue;
            const double a = v.first.get<double>(), bv = v.second.get<double>();
            const double d = bv - a;
            deltas[key] = {{"a", a}, {"b", bv}, {"delta", d}, {"relative", a != 0.0 ? d / std::abs(a) : (d == 0.0 ? 0.0 : INFINITY)}};
        }
        out["deltas"] = deltas;
        if (!out_path.empty()) {
            write_json(out_path, out);
            res.files.push_back(out_path);
        }
        res.message = out.dump(2);
    } catch (const Error& e) {
        res.exit_code = static_cast<int>(e.code());
        res.message = e.what();
    } catch (const std::exception& e) {
        res.exit_code = static_cast<int>(ErrorCode::Internal);
        res.message = e.what();
    }
    return res;
}

} // namespace vmass
