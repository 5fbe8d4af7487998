// Acceptance suite: one PASS/FAIL line per criterion. Usage:
//   acceptance [--criterion N] [--workdir DIR]
// Exit status is the number of failed criteria.

#include <boost/math/tools/minima.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <tuple>
#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "vmass/compliance.hpp"
#include "vmass/error.hpp"
#include "vmass/integrands.hpp"
#include "vmass/mk_solver.hpp"
#include "vmass/probes.hpp"
#include "vmass/runner.hpp"

namespace fs = std::filesystem;
using namespace vmass;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

ElasticLaw law_for_gamma(double gamma) { return ElasticLaw(2, 0.0, 1.0 / (2.0 * gamma)); }

DiscreteDomain bar_domain(int n) {
    DiscreteDomain dom(2, {n, n, 1}, 1.0 / n);
    dom.clamp_box({0, 0, 0}, {0, 1, 0});
    dom.add_point_load({1, 0.5, 0}, {-1, 0, 0});
    return dom;
}

// Sup over rank-one stresses, 4096 directions then Brent on the best bracket.
double j_bar_2d_refined(const ElasticLaw& law, const SymTensor& z) {
    auto value = [&](double th) {
        const Vec3 e{std::cos(th), std::sin(th), 0.0};
        const SymTensor p = outer(2, e, 1.0);
        const double a = z.dot(p);
        return a * a / (4.0 * eval_j_star(law, p));
    };
    const int n = 4096;
    const double d = std::numbers::pi / n;
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (value(i * d) > value(best * d)) best = i;
    const auto r = boost::math::tools::brent_find_minima([&](double th) { return -value(th); }, (best - 1) * d,
                                                         (best + 1) * d, 52);
    return std::max(value(best * d), -r.second);
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (double gamma : {0.5, 1.0, 2.0}) {
        const ElasticLaw law = law_for_gamma(gamma);
        for (int i = 0; i < 500; ++i) {
            const SymTensor z = oracle::random_tensor(rng, 2);
            const double brute = oracle::j_bar_2d_by_directions(law, z, 4096);
            const double exact = eval_j_bar(law, z);
            worst = std::max(worst, std::abs(exact - brute) / std::max(std::abs(brute), 1e-300));
        }
    }
    const double t = seconds_since(t0);
    return {worst <= 1e-4 && t < 10.0,
            "max rel err " + num(worst) + " (tol 1e-4) over 1500 tensors, " + num(t) + " s (limit 10 s)"};
}

Outcome criterion2() {
    std::mt19937_64 rng(202);
    double chain_violation = 0.0, top_err = 0.0, bar_err = 0.0, star_err = 0.0;
    for (int dim : {2, 3}) {
        const ElasticLaw law(dim, 0.4, 0.35);
        for (int i = 0; i < 500; ++i) {
            const SymTensor z = oracle::random_tensor(rng, dim);
            double prev = eval_j_k(law, 0, z);
            for (int k = 1; k <= dim; ++k) {
                const double v = eval_j_k(law, k, z);
                chain_violation = std::max(chain_violation, prev - v);
                prev = v;
            }
            top_err = std::max(top_err, oracle::rel_err(prev, eval_j(law, z)));
        }
        // j_{n-1} against an independent sup over rank <= n-1 stresses.
        const int nbar = dim == 2 ? 500 : 40;
        for (int i = 0; i < nbar; ++i) {
            const SymTensor z = oracle::random_tensor(rng, dim);
            const double ref = dim == 2 ? j_bar_2d_refined(law, z) : oracle::j_bar_3d_by_frames(law, z, rng, 4000);
            bar_err = std::max(bar_err, oracle::rel_err(eval_j_k(law, dim - 1, z), ref));
        }
        for (int k = 1; k <= dim; ++k)
            for (int i = 0; i < 200; ++i) {
                const SymTensor xi = oracle::random_rank_k(rng, dim, k);
                star_err = std::max(star_err,
                                    oracle::rel_err(eval_j_k_star(law, k, xi), oracle::conjugate_by_ascent(law, xi)));
            }
    }
    const bool pass = chain_violation < 1e-9 && top_err < 1e-9 && bar_err <= 1e-8 && star_err <= 1e-8;
    return {pass, "chain violation " + num(chain_violation) + " (< 1e-9), j_n vs j " + num(top_err) +
                      ", j_{n-1} vs sup oracle " + num(bar_err) + " (1e-8), j_k* vs j* " + num(star_err) + " (1e-8)"};
}

Outcome criterion3() {
    const auto t0 = Clock::now();
    const DiscreteDomain dom = bar_domain(64);
    const ElasticLaw law = law_for_gamma(1.0);
    MKOptions o;
    o.tol = 1e-4;
    const MKSolution s = solve_mk_grid(dom, law, o);
    const double t_solve = seconds_since(t0);
    double e = 0.0;
    bool consistent = true;
    try {
        optimal_mass_value(dom, law, s, 0.05, &e);
    } catch (const Error&) {
        consistent = false;
    }
    const double half = 0.5 * s.I * s.I;
    const double rel = std::abs(e - half) / half;
    const double t = seconds_since(t0);
    const double gap = std::abs(s.primal - s.dual) / std::abs(s.primal);
    return {gap <= 1e-4 && consistent && rel <= 0.05 && t < 60.0,
            "primal " + num(s.primal) + " dual " + num(s.dual) + " gap " + num(gap) + " (1e-4); E(mu_opt) " + num(e) +
                " vs I^2/2 " + num(half) + " rel " + num(rel) + " (5%); solve " + num(t_solve) + " s, total " + num(t) +
                " s (limit 60 s)"};
}

Outcome criterion4() {
    const ElasticLaw law = law_for_gamma(1.0);
    const double target = std::sqrt(law.gamma()) * 1.0 * 1.0;
    const double i64 = solve_mk_grid(bar_domain(64), law).I;
    const double i128 = solve_mk_grid(bar_domain(128), law).I;
    const double e64 = std::abs(i64 - target) / target, e128 = std::abs(i128 - target) / target;
    const double truss = solve_mk_truss(bar_domain(8), law, 1.5 / 8).I;
    const double et = std::abs(truss - target) / target;
    return {e64 <= 0.05 && e128 <= 0.025 && et <= 1e-8,
            "I64 " + num(i64) + " (err " + num(e64) + ", 5%), I128 " + num(i128) + " (err " + num(e128) +
                ", 2.5%), error ratio " + num(e64 / e128) + ", truss " + num(truss) + " (err " + num(et) +
                ", 1e-8)"};
}

Outcome criterion5() {
    std::mt19937_64 rng(505);
    const ElasticLaw law(2, 0.5, 0.5);
    double worst = 0.0;
    int finite = 0;
    // Cell volume h^2 is chosen so eps / h^2 cells cover one row through the load plus random extras.
    for (auto [eps, n, ny] : {std::tuple{1e-1, 20, 10}, std::tuple{1e-2, 200, 8}}) {
        DiscreteDomain dom(2, {n, ny, 1}, 1.0 / n);
        dom.clamp_box({0, 0, 0}, {0, 10, 0});
        dom.add_point_load({1.0, dom.h() * (ny / 2), 0}, {0.3, -1.0, 0});
        const int count = static_cast<int>(std::lround(eps / dom.cell_volume()));
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<int> omega, rest;
            for (int c = 0; c < dom.num_cells(); ++c)
                (dom.cell_ijk(c)[1] == ny / 2 ? omega : rest).push_back(c);
            std::shuffle(rest.begin(), rest.end(), rng);
            omega.insert(omega.end(), rest.begin(), rest.begin() + (count - static_cast<int>(omega.size())));
            const double c_plain = compliance_c(dom, DensityMeasure::indicator(dom, omega, 1.0), law).value;
            const double c_eps = compliance_c_eps(dom, omega, eps, law);
            finite += std::isfinite(c_eps);
            worst = std::max(worst, std::abs(eps * c_plain - c_eps) / c_eps);
        }
    }
    return {worst <= 1e-10 && finite == 20,
            "max rel deviation " + num(worst) + " (1e-10) on 20 subsets, " + std::to_string(finite) + " finite"};
}

Outcome criterion6() {
    std::mt19937_64 rng(606);
    const ElasticLaw law(2, 0.5, 0.5);
    DiscreteDomain dom(2, {12, 6, 1}, 1.0 / 12);
    dom.clamp_box({0, 0, 0}, {0, 10, 0});
    dom.add_point_load({1.0, 0.25, 0}, {0.3, -1.0, 0});
    std::uniform_real_distribution<double> u(0.2, 2.0);
    ComplianceOptions o;
    o.tol = 1e-8;
    double worst_excess = -INFINITY, worst_reverse = -INFINITY;
    int violations = 0;
    for (int i = 0; i < 50; ++i) {
        DensityMeasure m(dom);
        for (double& d : m.density()) d = u(rng);
        m.normalize();
        const double c = compliance_c(dom, m, law, o).value;
        const double e = compliance_E(dom, m, law, std::nullopt, o).value;
        worst_excess = std::max(worst_excess, e - c);
        worst_reverse = std::max(worst_reverse, c - e);
        violations += e > c + 1e-8;
    }
    // Truss measures: one bar, and two inclined bars meeting at the load.
    const DiscreteDomain bar = bar_domain(16);
    double truss_err = 0.0;
    std::vector<std::vector<Segment>> trusses{
        {{{0, 0.5, 0}, {1, 0.5, 0}, 1.0}},
        {{{0, 0.25, 0}, {1, 0.5, 0}, 0.5}, {{0, 0.75, 0}, {1, 0.5, 0}, 0.5}}};
    for (const auto& segs : trusses) {
        DensityMeasure m(bar);
        m.segments() = segs;
        const double c = compliance_c(bar, m, law, o).value;
        const double e = compliance_E(bar, m, law, std::nullopt, o).value;
        truss_err = std::max(truss_err, std::abs(e - c) / c);
    }
    return {violations == 0 && truss_err <= 1e-4,
            std::to_string(violations) + "/50 measures with E > c + 1e-8 (max E - c " + num(worst_excess) +
                ", max c - E " + num(worst_reverse) + "); truss |E - c|/c " + num(truss_err) + " (1e-4)"};
}

Outcome criterion7() {
    std::vector<std::pair<DensityMeasure, StressField>> fields;
    std::optional<DiscreteDomain> dom;
    bool div_ok = true;
    double dev = 0.0, emin = INFINITY, emax = 0.0, worst_ratio = 0.0;
    std::string divs;
    for (double eps : {0.125, 0.0625, 0.03125}) {
        SeppecherField f = seppecher_field(eps, 1312);
        div_ok = div_ok && f.div_residual <= f.div_bound;
        worst_ratio = std::max(worst_ratio, f.div_residual / f.div_bound);
        dev = std::max(dev, f.ball_deviation);
        emin = std::min(emin, f.energy);
        emax = std::max(emax, f.energy);
        dom = f.dom;
        fields.emplace_back(std::move(f.mu), std::move(f.sigma));
    }
    const YoungReport r = young_extract(*dom, fields);
    double weight = 1.0;
    for (const YoungFit& fit : r.fits.back())
        weight = std::min(weight, fit.ok ? fit.measure.weight_near(SymTensor::identity(2), 1e-9) : 0.0);
    const bool bounded = emax <= 2.0 * emin;
    return {div_ok && dev <= 1e-10 && bounded && weight >= 0.95,
            "div residual / bound " + num(worst_ratio) + " (<= 1), |sigma - I| on balls " + num(dev) +
                " (1e-10), energy in [" + num(emin) + ", " + num(emax) + "], weight at I " + num(weight) + " (>= 0.95)"};
}

SymTensor random_singular(std::mt19937_64& rng, int dim) {
    SymTensor t = oracle::random_rank_k(rng, dim, dim - 1);
    return t;
}

Outcome criterion8() {
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    int failures = 0, chain = 0;
    for (int i = 0; i < 1000; ++i) {
        const int dim = i % 2 ? 3 : 2;
        const ElasticLaw law(dim, u(rng), u(rng));
        const int natoms = 1 + static_cast<int>(rng() % 4);
        std::vector<std::pair<double, SymTensor>> atoms;
        std::vector<DiscreteYoungMeasure> kernels;
        for (int a = 0; a < natoms; ++a) {
            const SymTensor xi = random_singular(rng, dim);
            atoms.emplace_back(u(rng), xi);
            const int kat = 1 + static_cast<int>(rng() % 4);
            std::vector<std::pair<double, SymTensor>> ka;
            double wsum = 0.0;
            SymTensor mean = SymTensor::zero(dim);
            for (int m = 0; m < kat; ++m) {
                const double w = u(rng);
                const SymTensor y = oracle::random_tensor(rng, dim);
                ka.emplace_back(w, y);
                wsum += w;
                mean += w * y;
            }
            const SymTensor shift = xi - (1.0 / wsum) * mean;
            for (auto& [w, y] : ka) y += shift;
            kernels.emplace_back(dim, std::move(ka));
        }
        const Conj3Report r = conj3_verify(DiscreteYoungMeasure(dim, std::move(atoms)), kernels, law);
        failures += !r.conj2.satisfied;
        chain += !r.chain_holds;
    }
    return {failures == 0 && chain == 0,
            std::to_string(failures) + " conj2 failures, " + std::to_string(chain) + " broken chains in 1000 instances"};
}

Outcome criterion9() {
    DiscreteDomain dom(2, {128, 128, 1}, 1.0 / 128, {0, 0, 0}, true);
    dom.add_point_load({0.25, 0.5, 0}, {1, 0, 0});
    dom.add_point_load({0.75, 0.5, 0}, {-1, 0, 0});
    const double I = solve_mk_grid(dom, ElasticLaw(2, 0.0, 0.5)).I;
    const double err = std::abs(I - 0.5) / 0.5;
    return {err <= 0.02, "I " + num(I) + " vs d = 0.5, rel err " + num(err) + " (2%)"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion10(const fs::path& work) {
    const std::string bar = R"({"dim":2,"domain":{"size":[1,1],"resolution":16},"clamps":[{"lo":[0,0],"hi":[0,1]}],
        "loads":[{"at":[1,0.5],"force":[-1,0]}]})";
    const std::string gap = R"({"dim":2,"scalar":true,"domain":{"size":[1,1],"resolution":12},
        "loads":[{"at":[0.25,0.5],"force":1},{"at":[0.75,0.5],"force":-1}],"probe":{"eps":[0.5,0.25]}})";
    struct Job {
        std::string name, sub, probe, json, method;
    };
    const std::vector<Job> jobs{
        {"table", "integrand-table", "", R"({"dim":3,"table":{"range":[-1,2],"steps":4}})", ""},
        {"compliance", "compliance", "", bar, ""},
        {"mk", "solve-mk", "", bar, ""},
        {"truss", "solve-mk", "", bar, "truss"},
        {"conj2", "probe", "conj2", R"({"dim":2,"probe":{"random":50}})", ""},
        {"conj3", "probe", "conj3", R"({"dim":3,"probe":{"random":200}})", ""},
        {"gap", "probe", "gap", gap, ""},
        {"seppecher", "probe", "seppecher", R"({"probe":{"eps":[0.125],"resolution":256}})", ""},
    };
    int files = 0, mismatches = 0, failed_runs = 0;
    std::string bad;
    double max_delta = 0.0;
    for (const Job& job : jobs) {
        std::array<fs::path, 2> dirs{work / (job.name + "_a"), work / (job.name + "_b")};
        for (const fs::path& d : dirs) {
            fs::remove_all(d);
            RunConfig c;
            c.subcommand = job.sub;
            c.probe = job.probe;
            c.problem_json = job.json;
            c.out_dir = d.string();
            c.method = job.method;
            c.seed = 42;
            if (run(c).exit_code != 0) ++failed_runs;
        }
        for (const auto& entry : fs::directory_iterator(dirs[0])) {
            if (entry.path().extension() != ".csv") continue;
            ++files;
            if (slurp(entry.path()) != slurp(dirs[1] / entry.path().filename())) {
                ++mismatches;
                bad += " " + job.name + "/" + entry.path().filename().string();
            }
        }
        const RunResult cmp = compare(dirs[0].string(), dirs[1].string(), "");
        if (cmp.exit_code != 0) {
            ++failed_runs;
            continue;
        }
        const auto report = nlohmann::json::parse(cmp.message);
        for (const auto& [k, v] : report["deltas"].items()) max_delta = std::max(max_delta, std::abs(v["delta"].get<double>()));
    }
    return {mismatches == 0 && failed_runs == 0 && files > 0 && max_delta == 0.0,
            std::to_string(files) + " CSVs compared, " + std::to_string(mismatches) + " differ" + bad + ", " +
                std::to_string(failed_runs) + " failed runs, max summary delta " + num(max_delta)};
}

} // namespace

int main(int argc, char** argv) {
    int only = 0;
    fs::path work = "acceptance_runs";
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--criterion") && i + 1 < argc) only = std::atoi(argv[++i]);
        else if (!std::strcmp(argv[i], "--workdir") && i + 1 < argc) work = argv[++i];
        else {
            std::fprintf(stderr, "usage: %s [--criterion N] [--workdir DIR]\n", argv[0]);
            return 64;
        }
    }
    const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
        {1, {"conjugate-oracle equivalence", criterion1}},
        {2, {"rank-k potential chain", criterion2}},
        {3, {"discrete strong duality, 64x64 bar", criterion3}},
        {4, {"analytic bar value", criterion4}},
        {5, {"scaling identity", criterion5}},
        {6, {"relaxation ordering E <= c + 1e-8", criterion6}},
        {7, {"Seppecher probe", criterion7}},
        {8, {"conj3 implies conj2", criterion8}},
        {9, {"scalar transport sanity", criterion9}},
        {10, {"determinism", [&] { return criterion10(work); }}},
    };
    if (only && !criteria.count(only)) {
        std::fprintf(stderr, "no criterion %d\n", only);
        return 64;
    }
    fs::create_directories(work);
    int failed = 0;
    for (const auto& [id, c] : criteria) {
        if (only && id != only) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %2d %s: %s | %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", c.first, o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return failed;
}
