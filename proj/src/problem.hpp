#pragma once

// JSON problem files. Geometry is given in physical units; the grid spacing
// is 1 / resolution and every box side must be a whole number of cells.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmass/grid.hpp"
#include "vmass/integrands.hpp"
#include "vmass/probes.hpp"

namespace vmass {

using json = nlohmann::json;

struct Problem {
    json config; // resolved document, echoed into the manifest
    int dim = 2;
    bool scalar = false;
    int resolution = 0;
    DiscreteDomain dom{2, {1, 1, 1}, 1.0};
    ElasticLaw law{2, 0.0, 0.5};
    double tol = 1e-4;
};

/// Parses text into a document; syntax errors become MalformedConfig.
json parse_json(const std::string& text, const std::string& what);
json read_json_file(const std::string& path);

/// Applies defaults and command-line overrides, then builds the grid. Type
/// and schema errors are MalformedConfig; geometric ones are InputError.
Problem build_problem(json config, std::optional<int> resolution, std::optional<double> tol, bool force_scalar,
                      bool need_grid = true);

/// Empty load with no clamp is rejected as infeasible (nothing to carry, nothing to hold).
void validate_for_solve(const Problem& p);

DensityMeasure build_measure(const Problem& p, const json& spec);
SymTensor tensor_from_json(int dim, const json& j);
json tensor_to_json(const SymTensor& t);
DiscreteYoungMeasure young_from_json(int dim, const json& j);

/// Reads an optional field with a default, rethrowing type errors as MalformedConfig.
template <class T>
T get_or(const json& j, const char* key, T fallback);

} // namespace vmass
