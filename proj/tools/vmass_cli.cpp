// Command line front end. Talks to the library only through vmass.h.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "vmass/vmass.h"

namespace {

const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  command line usage error\n"
    "  2  invalid input (bad argument, inadmissible geometry)\n"
    "  3  malformed problem file\n"
    "  4  infeasible (the load cannot be carried)\n"
    "  5  solver did not converge\n"
    "  6  grid too coarse for the requested structure\n"
    "  7  internal cross-check failed\n"
    "  8  file system error\n"
    "  9  internal error\n"
    "Every run writes manifest.json and summary.json into --out; failures add error.json.";

struct Common {
    std::string config;
    std::string out = "run";
    double tol = 0.0;
    int resolution = 0;
    std::uint64_t seed = 1;
};

void add_common(CLI::App* app, Common& c, bool config_required) {
    auto* opt = app->add_option("-c,--config", c.config, "problem JSON file")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    app->add_option("-o,--out", c.out, "output directory")->capture_default_str();
    app->add_option("--tol", c.tol, "solver tolerance (overrides solver.tol)")->check(CLI::PositiveNumber);
    app->add_option("--resolution", c.resolution, "cells per unit length (overrides domain.resolution)")
        ->check(CLI::PositiveNumber);
    app->add_option("--seed", c.seed, "seed for randomized probes")->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vanishing-mass relaxation of elastic shape optimization"};
    app.footer(kExitCodes);
    app.set_version_flag("--version", std::string(vmass_version()));
    app.require_subcommand(1);

    Common common;
    std::string method, probe_kind;
    bool scalar = false, truss = false, grid = false;
    std::string cmp_a, cmp_b, cmp_out;

    auto* table = app.add_subcommand("integrand-table", "tabulate j, j_bar, j_k and the gauges on eigenvalue grids");
    add_common(table, common, false);
    auto* comp = app.add_subcommand("compliance", "compliance c, E and E_k of a mass distribution");
    add_common(comp, common, true);
    comp->add_flag("--scalar", scalar, "scalar (conductivity) model");
    auto* mk = app.add_subcommand("solve-mk", "mass-optimal stress and optimal mass distribution");
    add_common(mk, common, true);
    mk->add_flag("--scalar", scalar, "scalar (conductivity) model");
    auto* tg = mk->add_flag("--truss", truss, "ground-structure linear program");
    auto* gg = mk->add_flag("--grid", grid, "grid barrier solver (default)");
    tg->excludes(gg);
    auto* sweep = app.add_subcommand("gamma-sweep", "compliance of fattened lower-dimensional measures");
    add_common(sweep, common, true);
    auto* probe = app.add_subcommand("probe", "numerical probes of the relaxation");
    add_common(probe, common, false);
    probe->add_option("kind", probe_kind, "seppecher | conj2 | conj3 | gap")
        ->required()
        ->check(CLI::IsMember({"seppecher", "conj2", "conj3", "gap"}));
    probe->add_flag("--scalar", scalar, "scalar (conductivity) model (gap only)");
    auto* cmp = app.add_subcommand("compare", "tabulate differences between two run directories");
    cmp->add_option("a", cmp_a, "first run directory")->required()->check(CLI::ExistingDirectory);
    cmp->add_option("b", cmp_b, "second run directory")->required()->check(CLI::ExistingDirectory);
    cmp->add_option("-o,--out", cmp_out, "write the comparison JSON here as well");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // --help and --version are successful exits; everything else is a usage error.
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (cmp->parsed()) {
        const int rc = vmass_compare(cmp_a.c_str(), cmp_b.c_str(), cmp_out.empty() ? nullptr : cmp_out.c_str());
        if (rc != VMASS_OK) {
            std::fprintf(stderr, "error (%s): %s\n", vmass_status_name(rc), vmass_last_error());
            return rc;
        }
        std::printf("%s\n", vmass_last_report());
        return 0;
    }

    CLI::App* sub = app.get_subcommands().front();
    vmass_run_options o{};
    const std::string name = sub->get_name();
    o.subcommand = name.c_str();
    o.probe = probe_kind.empty() ? nullptr : probe_kind.c_str();
    o.config_path = common.config.empty() ? nullptr : common.config.c_str();
    o.out_dir = common.out.c_str();
    o.tol = common.tol;
    o.resolution = common.resolution;
    o.seed = common.seed;
    o.method = truss ? "truss" : grid ? "grid" : nullptr;
    o.scalar = scalar;
    const int rc = vmass_run(&o);
    if (rc != VMASS_OK) {
        std::fprintf(stderr, "error (%s): %s\n", vmass_status_name(rc), vmass_last_error());
        return rc;
    }
    std::printf("%s: artifacts in %s\n", name.c_str(), common.out.c_str());
    return 0;
}
