#pragma once

// Artifact writers: CSV with a schema sidecar, legacy VTK structured points.

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "vmass/grid.hpp"

namespace vmass {

/// Shortest round-trip representation, so equal doubles print equal bytes.
std::string fmt(double v);

struct Column {
    std::string name;
    std::string description;
};

class CsvWriter {
public:
    /// Writes name.csv and name.schema.json in dir; both are recorded in files.
    CsvWriter(const std::filesystem::path& dir, const std::string& name, std::vector<Column> columns,
              std::vector<std::string>& files);
    void row(const std::vector<std::string>& cells);

private:
    std::ofstream out_;
    std::size_t ncols_;
    std::string path_;
};

struct CellScalar {
    std::string name;
    std::vector<double> values; // one per cell
};

void write_vtk(const std::filesystem::path& path, const DiscreteDomain& dom, const std::vector<CellScalar>& fields,
               const std::string& title);

} // namespace vmass
