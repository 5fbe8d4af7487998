#include "vmass/vmass.h"

#include <cmath>
#include <cstring>
#include <memory>
#include <new>

#include "problem.hpp"
#include "vmass/compliance.hpp"
#include "vmass/error.hpp"
#include "vmass/mk_solver.hpp"
#include "vmass/runner.hpp"

struct vmass_problem {
    vmass::Problem problem;
};

struct vmass_solution {
    vmass::MKSolution solution;
};

namespace {

thread_local std::string last_error;
thread_local std::string last_report;

template <class F>
int guarded(F&& f) {
    try {
        last_error.clear();
        f();
        return VMASS_OK;
    } catch (const vmass::Error& e) {
        last_error = e.what();
        return static_cast<int>(e.code());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
    } catch (const std::exception& e) {
        last_error = e.what();
    } catch (...) {
        last_error = "unknown exception";
    }
    return VMASS_INTERNAL;
}

void need(const void* p, const char* name) {
    if (!p) vmass::fail(vmass::ErrorCode::InputError, std::string(name) + " is NULL");
}

int from_doc(vmass::json doc, int resolution, double tol, vmass_problem** out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        auto p = std::make_unique<vmass_problem>();
        p->problem = vmass::build_problem(std::move(doc), resolution > 0 ? std::optional<int>(resolution) : std::nullopt,
                                          tol > 0 ? std::optional<double>(tol) : std::nullopt, false);
        *out = p.release();
    });
}

int set_result(const vmass::RunResult& r) {
    if (r.exit_code != 0) last_error = r.message;
    return r.exit_code;
}

} // namespace

extern "C" {

const char* vmass_version(void) { return vmass::version(); }
const char* vmass_last_error(void) { return last_error.c_str(); }
const char* vmass_last_report(void) { return last_report.c_str(); }
const char* vmass_status_name(int status) { return vmass::to_string(static_cast<vmass::ErrorCode>(status)); }

int vmass_problem_from_json(const char* json_text, int resolution, double tol, vmass_problem** out) {
    vmass::json doc;
    const int rc = guarded([&] {
        need(json_text, "json_text");
        doc = vmass::parse_json(json_text, "problem");
    });
    return rc ? rc : from_doc(std::move(doc), resolution, tol, out);
}

int vmass_problem_from_file(const char* path, int resolution, double tol, vmass_problem** out) {
    vmass::json doc;
    const int rc = guarded([&] {
        need(path, "path");
        doc = vmass::read_json_file(path);
    });
    return rc ? rc : from_doc(std::move(doc), resolution, tol, out);
}

void vmass_problem_free(vmass_problem* p) { delete p; }

int vmass_problem_num_cells(const vmass_problem* p, size_t* out) {
    return guarded([&] {
        need(p, "problem");
        need(out, "out");
        *out = static_cast<size_t>(p->problem.dom.num_cells());
    });
}

int vmass_compliance(const vmass_problem* p, const char* law, double* value) {
    return guarded([&] {
        need(p, "problem");
        need(law, "law");
        need(value, "value");
        const vmass::Problem& pr = p->problem;
        vmass::validate_for_solve(pr);
        const vmass::DensityMeasure mu =
            vmass::build_measure(pr, pr.config.contains("measure") ? pr.config["measure"] : vmass::json());
        const std::string name = law;
        vmass::ComplianceReport r;
        if (name == "c") {
            r = vmass::compliance_c(pr.dom, mu, pr.law);
        } else if (name == "E") {
            r = vmass::compliance_E(pr.dom, mu, pr.law);
        } else if (name.rfind("E_", 0) == 0 && name.size() == 3 && name[2] >= '1' && name[2] <= '3') {
            r = vmass::compliance_E(pr.dom, mu, pr.law, name[2] - '0');
        } else {
            vmass::fail(vmass::ErrorCode::InputError, "unknown law '" + name + "'");
        }
        *value = r.finite ? r.value : HUGE_VAL;
    });
}

int vmass_solve_mk(const vmass_problem* p, const char* method, vmass_solution** out) {
    return guarded([&] {
        need(p, "problem");
        need(out, "out");
        *out = nullptr;
        const vmass::Problem& pr = p->problem;
        vmass::validate_for_solve(pr);
        const std::string m = method ? method : "grid";
        auto s = std::make_unique<vmass_solution>();
        if (m == "truss") {
            const double radius = vmass::get_or(pr.config["solver"], "connectivity_radius", 1.5);
            s->solution = vmass::solve_mk_truss(pr.dom, pr.law, radius * pr.dom.h());
        } else if (m == "grid") {
            vmass::MKOptions o;
            o.tol = pr.tol;
            s->solution = vmass::solve_mk_grid(pr.dom, pr.law, o);
        } else {
            vmass::fail(vmass::ErrorCode::InputError, "method must be grid or truss");
        }
        *out = s.release();
    });
}

void vmass_solution_free(vmass_solution* s) { delete s; }

int vmass_solution_values(const vmass_solution* s, double* I, double* primal, double* dual, double* gap) {
    return guarded([&] {
        need(s, "solution");
        if (I) *I = s->solution.I;
        if (primal) *primal = s->solution.primal;
        if (dual) *dual = s->solution.dual;
        if (gap) *gap = s->solution.gap;
    });
}

int vmass_solution_density(const vmass_solution* s, double* out, size_t n) {
    return guarded([&] {
        need(s, "solution");
        need(out, "out");
        const std::vector<double>& d = s->solution.mu_opt.density();
        if (n != d.size())
            vmass::fail(vmass::ErrorCode::InputError, "buffer holds " + std::to_string(n) + " values, need " +
                                                          std::to_string(d.size()));
        std::memcpy(out, d.data(), n * sizeof(double));
    });
}

int vmass_integrand(int dim, double alpha, double beta, const char* which, int k, const double* tensor, double* value) {
    return guarded([&] {
        need(which, "which");
        need(tensor, "tensor");
        need(value, "value");
        if (dim != 2 && dim != 3) vmass::fail(vmass::ErrorCode::InputError, "dim must be 2 or 3");
        const vmass::ElasticLaw law(dim, alpha, beta);
        const vmass::SymTensor t = vmass::unpack_strain(dim, tensor);
        const std::string w = which;
        if (w == "j") *value = vmass::eval_j(law, t);
        else if (w == "j_bar") *value = vmass::eval_j_bar(law, t);
        else if (w == "j_star") *value = vmass::eval_j_star(law, t);
        else if (w == "j_bar_star") *value = vmass::eval_j_bar_star(law, t);
        else if (w == "rho") *value = vmass::rho(law, t);
        else if (w == "rho0") *value = vmass::rho0(law, t);
        else if (w == "j_k") *value = vmass::eval_j_k(law, k, t);
        else if (w == "j_k_star") *value = vmass::eval_j_k_star(law, k, t);
        else vmass::fail(vmass::ErrorCode::InputError, "unknown integrand '" + w + "'");
    });
}

int vmass_run(const vmass_run_options* o) {
    if (!o || !o->subcommand) {
        last_error = "options and options->subcommand are required";
        return VMASS_INPUT_ERROR;
    }
    vmass::RunConfig c;
    c.subcommand = o->subcommand;
    if (o->probe) c.probe = o->probe;
    if (o->config_path) c.problem_path = o->config_path;
    if (o->config_json) c.problem_json = o->config_json;
    if (o->out_dir) c.out_dir = o->out_dir;
    if (o->tol > 0) c.tol = o->tol;
    if (o->resolution > 0) c.resolution = o->resolution;
    c.seed = o->seed;
    if (o->method) c.method = o->method;
    c.scalar = o->scalar != 0;
    last_error.clear();
    return set_result(vmass::run(c));
}

int vmass_compare(const char* dir_a, const char* dir_b, const char* out_path) {
    if (!dir_a || !dir_b) {
        last_error = "two run directories are required";
        return VMASS_INPUT_ERROR;
    }
    last_error.clear();
    const vmass::RunResult r = vmass::compare(dir_a, dir_b, out_path ? out_path : "");
    last_report = r.exit_code == 0 ? r.message : std::string();
    return set_result(r);
}

} // extern "C"
