#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vmass {

const char* version();

struct RunConfig {
    /// integrand-table | compliance | solve-mk | gamma-sweep | probe
    std::string subcommand;
    /// seppecher | conj2 | conj3 | gap (probe only)
    std::string probe;
    /// Problem file, or the JSON text itself in problem_json.
    std::string problem_path;
    std::string problem_json;
    std::string out_dir;
    std::optional<double> tol;
    std::optional<int> resolution;
    std::uint64_t seed = 1;
    /// solve-mk: "grid" or "truss"; empty keeps the problem's choice.
    std::string method;
    bool scalar = false;
};

struct RunResult {
    int exit_code = 0;
    std::string message;
    std::vector<std::string> files; // artifacts written, relative to out_dir
};

/// Parses, validates, solves and writes the artifacts of one run. Failures
/// are reported through exit_code (the ErrorCode value) and an error.json in
/// out_dir; nothing is thrown.
RunResult run(const RunConfig& config);

/// Tabulates the numeric summary values of two run directories with absolute
/// and relative deltas, written as JSON to out_path (if not empty).
RunResult compare(const std::string& dir_a, const std::string& dir_b, const std::string& out_path);

} // namespace vmass
