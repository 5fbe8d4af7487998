#include "problem.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "vmass/error.hpp"

namespace vmass {

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::MalformedConfig, what + ": " + e.what());
    }
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json(ss.str(), path);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedConfig, std::string("field '") + key + "': " + e.what());
    }
}

template double get_or<double>(const json&, const char*, double);
template int get_or<int>(const json&, const char*, int);
template bool get_or<bool>(const json&, const char*, bool);
template std::string get_or<std::string>(const json&, const char*, std::string);
template std::vector<double> get_or<std::vector<double>>(const json&, const char*, std::vector<double>);
template std::vector<std::string> get_or<std::vector<std::string>>(const json&, const char*, std::vector<std::string>);

namespace {

Vec3 point(const json& j, int dim, const std::string& what) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        fail(ErrorCode::MalformedConfig, what + " must be an array of " + std::to_string(dim) + " numbers");
    Vec3 v{};
    for (int i = 0; i < dim; ++i) {
        if (!j[i].is_number()) fail(ErrorCode::MalformedConfig, what + " must contain numbers");
        v[i] = j[i].get<double>();
    }
    return v;
}

} // namespace

Problem build_problem(json config, std::optional<int> resolution, std::optional<double> tol, bool force_scalar,
                      bool need_grid) {
    if (!config.is_object()) fail(ErrorCode::MalformedConfig, "problem document must be a JSON object");
    Problem p;
    p.dim = get_or(config, "dim", 2);
    if (p.dim != 2 && p.dim != 3) fail(ErrorCode::MalformedConfig, "dim must be 2 or 3");
    p.scalar = force_scalar || get_or(config, "scalar", false);
    config["dim"] = p.dim;
    config["scalar"] = p.scalar;

    json& law = config["law"];
    if (law.is_null()) law = json::object();
    if (!law.is_object()) fail(ErrorCode::MalformedConfig, "'law' must be an object");
    const double alpha = get_or(law, "alpha", 0.0), beta = get_or(law, "beta", 0.5);
    law["alpha"] = alpha;
    law["beta"] = beta;
    p.law = ElasticLaw(p.dim, alpha, beta);

    json& solver = config["solver"];
    if (solver.is_null()) solver = json::object();
    if (!solver.is_object()) fail(ErrorCode::MalformedConfig, "'solver' must be an object");
    p.tol = tol ? *tol : get_or(solver, "tol", 1e-4);
    if (!(p.tol > 0.0)) fail(ErrorCode::InputError, "tolerance must be positive");
    solver["tol"] = p.tol;

    if (!need_grid) {
        p.config = std::move(config);
        return p;
    }

    json& domain = config["domain"];
    if (domain.is_null()) domain = json::object();
    if (!domain.is_object()) fail(ErrorCode::MalformedConfig, "'domain' must be an object");
    const std::vector<double> ones(static_cast<std::size_t>(p.dim), 1.0), zeros(static_cast<std::size_t>(p.dim), 0.0);
    const Vec3 size = point(domain.contains("size") ? domain["size"] : json(ones), p.dim, "domain.size");
    const Vec3 origin = point(domain.contains("origin") ? domain["origin"] : json(zeros), p.dim, "domain.origin");
    p.resolution = resolution ? *resolution : get_or(domain, "resolution", 32);
    if (p.resolution <= 0) fail(ErrorCode::InputError, "resolution must be positive");
    domain["size"] = std::vector<double>(size.begin(), size.begin() + p.dim);
    domain["origin"] = std::vector<double>(origin.begin(), origin.begin() + p.dim);
    domain["resolution"] = p.resolution;
    std::array<int, 3> cells{1, 1, 1};
    for (int a = 0; a < p.dim; ++a) {
        const double n = size[a] * p.resolution;
        if (!(size[a] > 0.0) || std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n))
            fail(ErrorCode::InputError, "domain side " + std::to_string(a) + " is not a whole number of cells");
        cells[a] = static_cast<int>(std::lround(n));
    }
    p.dom = DiscreteDomain(p.dim, cells, 1.0 / p.resolution, origin, p.scalar);

    if (config.contains("clamps")) {
        const json& clamps = config["clamps"];
        if (!clamps.is_array()) fail(ErrorCode::MalformedConfig, "'clamps' must be an array");
        for (std::size_t i = 0; i < clamps.size(); ++i) {
            const std::string tag = "clamps[" + std::to_string(i) + "]";
            if (!clamps[i].is_object() || !clamps[i].contains("lo") || !clamps[i].contains("hi"))
                fail(ErrorCode::MalformedConfig, tag + " needs 'lo' and 'hi'");
            const int n = p.dom.clamp_box(point(clamps[i]["lo"], p.dim, tag + ".lo"), point(clamps[i]["hi"], p.dim, tag + ".hi"));
            if (n == 0) fail(ErrorCode::InputError, tag + " contains no grid node");
        }
    }
    if (config.contains("loads")) {
        const json& loads = config["loads"];
        if (!loads.is_array()) fail(ErrorCode::MalformedConfig, "'loads' must be an array");
        for (std::size_t i = 0; i < loads.size(); ++i) {
            const std::string tag = "loads[" + std::to_string(i) + "]";
            if (!loads[i].is_object() || !loads[i].contains("at") || !loads[i].contains("force"))
                fail(ErrorCode::MalformedConfig, tag + " needs 'at' and 'force'");
            const json& f = loads[i]["force"];
            Vec3 force{};
            if (p.scalar && f.is_number())
                force[0] = f.get<double>();
            else
                force = point(f, p.scalar ? 1 : p.dim, tag + ".force");
            p.dom.add_point_load(point(loads[i]["at"], p.dim, tag + ".at"), force);
        }
    }
    if (config.contains("body_force")) {
        const Vec3 b = point(config["body_force"], p.scalar ? 1 : p.dim, "body_force");
        p.dom.set_distributed_load(std::vector<Vec3>(static_cast<std::size_t>(p.dom.num_cells()), b));
    }
    p.config = std::move(config);
    return p;
}

void validate_for_solve(const Problem& p) {
    if (!p.dom.has_load() && !p.dom.any_clamped())
        fail(ErrorCode::Infeasible, "the problem has neither loads nor clamps");
    p.dom.check_admissible();
}

DensityMeasure build_measure(const Problem& p, const json& spec) {
    const DiscreteDomain& dom = p.dom;
    if (spec.is_null()) return DensityMeasure::uniform(dom);
    if (!spec.is_object()) fail(ErrorCode::MalformedConfig, "'measure' must be an object");
    const std::string type = get_or<std::string>(spec, "type", "uniform");
    if (type == "uniform") return DensityMeasure::uniform(dom, get_or(spec, "mass", 1.0));
    if (type == "density") {
        const std::vector<double> v = get_or(spec, "values", std::vector<double>{});
        if (static_cast<int>(v.size()) != dom.num_cells())
            fail(ErrorCode::InputError, "measure.values needs one density per cell (" + std::to_string(dom.num_cells()) + ")");
        DensityMeasure m(dom);
        m.density() = v;
        m.validate();
        return m;
    }
    if (type == "cells") {
        if (!spec.contains("cells") || !spec["cells"].is_array())
            fail(ErrorCode::MalformedConfig, "measure.cells must be an array of cell indices");
        std::vector<int> cells;
        for (const json& c : spec["cells"]) {
            if (!c.is_number_integer()) fail(ErrorCode::MalformedConfig, "measure.cells must hold integers");
            cells.push_back(c.get<int>());
        }
        const double eps = get_or(spec, "eps", dom.cell_volume() * static_cast<double>(cells.size()));
        return DensityMeasure::indicator(dom, cells, eps);
    }
    if (type == "segments") {
        if (!spec.contains("segments") || !spec["segments"].is_array())
            fail(ErrorCode::MalformedConfig, "measure.segments must be an array");
        DensityMeasure m(dom);
        for (std::size_t i = 0; i < spec["segments"].size(); ++i) {
            const json& s = spec["segments"][i];
            const std::string tag = "measure.segments[" + std::to_string(i) + "]";
            if (!s.is_object() || !s.contains("a") || !s.contains("b"))
                fail(ErrorCode::MalformedConfig, tag + " needs 'a' and 'b'");
            m.segments().push_back({point(s["a"], p.dim, tag + ".a"), point(s["b"], p.dim, tag + ".b"),
                                    get_or(s, "density", 1.0)});
        }
        m.validate();
        return m;
    }
    fail(ErrorCode::MalformedConfig, "unknown measure type '" + type + "'");
}

SymTensor tensor_from_json(int dim, const json& j) {
    if (!j.is_array()) fail(ErrorCode::MalformedConfig, "tensor must be an array");
    auto num = [](const json& x) {
        if (!x.is_number()) fail(ErrorCode::MalformedConfig, "tensor entries must be numbers");
        return x.get<double>();
    };
    if (!j.empty() && j[0].is_array()) {
        if (static_cast<int>(j.size()) != dim) fail(ErrorCode::MalformedConfig, "tensor matrix has the wrong size");
        SymTensor t(dim);
        for (int a = 0; a < dim; ++a) {
            if (!j[a].is_array() || static_cast<int>(j[a].size()) != dim)
                fail(ErrorCode::MalformedConfig, "tensor matrix has the wrong size");
            for (int b = 0; b < dim; ++b) {
                if (std::abs(num(j[a][b]) - num(j[b][a])) > 1e-12 * std::max(1.0, std::abs(num(j[a][b]))))
                    fail(ErrorCode::InputError, "tensor matrix is not symmetric");
                if (a <= b) t.set(a, b, num(j[a][b]));
            }
        }
        return t;
    }
    const std::size_t ns = dim == 2 ? 3 : 6;
    if (j.size() != ns)
        fail(ErrorCode::MalformedConfig, "packed tensor needs " + std::to_string(ns) + " entries (xx, yy, " +
                                             (dim == 2 ? std::string("xy)") : std::string("zz, xy, xz, yz)")));
    double v[6];
    for (std::size_t i = 0; i < ns; ++i) v[i] = num(j[i]);
    return unpack_strain(dim, v);
}

json tensor_to_json(const SymTensor& t) {
    double v[6];
    pack_strain(t, v);
    return std::vector<double>(v, v + (t.dim() == 2 ? 3 : 6));
}

DiscreteYoungMeasure young_from_json(int dim, const json& j) {
    const json& atoms = j.is_object() && j.contains("atoms") ? j["atoms"] : j;
    if (!atoms.is_array() || atoms.empty()) fail(ErrorCode::MalformedConfig, "Young measure needs a non-empty atom list");
    std::vector<std::pair<double, SymTensor>> out;
    for (const json& a : atoms) {
        if (!a.is_object() || !a.contains("tensor")) fail(ErrorCode::MalformedConfig, "atom needs 'tensor'");
        out.emplace_back(get_or(a, "weight", 1.0), tensor_from_json(dim, a["tensor"]));
    }
    return DiscreteYoungMeasure(dim, std::move(out));
}

} // namespace vmass
