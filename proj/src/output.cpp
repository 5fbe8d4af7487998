#include "output.hpp"

#include <charconv>

#include <json.hpp>

#include "vmass/error.hpp"

namespace vmass {

std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& dir, const std::string& name, std::vector<Column> columns,
                     std::vector<std::string>& files)
    : ncols_(columns.size()) {
    const std::filesystem::path csv = dir / (name + ".csv");
    path_ = csv.string();
    out_.open(csv, std::ios::binary);
    if (!out_) fail(ErrorCode::Io, "cannot write " + path_);
    nlohmann::ordered_json schema;
    schema["file"] = name + ".csv";
    schema["columns"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < columns.size(); ++i) {
        out_ << (i ? "," : "") << columns[i].name;
        schema["columns"].push_back({{"name", columns[i].name}, {"description", columns[i].description}});
    }
    out_ << '\n';
    std::ofstream s(dir / (name + ".schema.json"), std::ios::binary);
    if (!s) fail(ErrorCode::Io, "cannot write the schema of " + path_);
    s << schema.dump(2) << '\n';
    files.push_back(name + ".csv");
    files.push_back(name + ".schema.json");
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != ncols_) fail(ErrorCode::Internal, "row width does not match the header of " + path_);
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    if (!out_) fail(ErrorCode::Io, "write failed on " + path_);
}

void write_vtk(const std::filesystem::path& path, const DiscreteDomain& dom, const std::vector<CellScalar>& fields,
               const std::string& title) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET STRUCTURED_POINTS\n";
    out << "DIMENSIONS " << dom.nodes(0) << ' ' << dom.nodes(1) << ' ' << dom.nodes(2) << '\n';
    out << "ORIGIN " << fmt(dom.origin()[0]) << ' ' << fmt(dom.origin()[1]) << ' ' << fmt(dom.origin()[2]) << '\n';
    out << "SPACING " << fmt(dom.h()) << ' ' << fmt(dom.h()) << ' ' << fmt(dom.h()) << '\n';
    out << "CELL_DATA " << dom.num_cells() << '\n';
    for (const CellScalar& f : fields) {
        if (static_cast<int>(f.values.size()) != dom.num_cells())
            fail(ErrorCode::Internal, "VTK field " + f.name + " has the wrong size");
        out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
        for (double v : f.values) out << fmt(v) << '\n';
    }
    if (!out) fail(ErrorCode::Io, "write failed on " + path.string());
}

} // namespace vmass
