#include "millopt/field_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "millopt/errors.hpp"

namespace millopt {

namespace {

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    return out;
}

std::string format_g(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

}  // namespace

void write_vtk(const std::string& path, const StructuredGrid& grid, std::span<const double> field,
               const std::string& name) {
    if (field.size() != grid.element_count()) {
        throw ValidationError("write_vtk: field size does not match the grid");
    }
    auto out = open_out(path);
    out << "# vtk DataFile Version 3.0\n"
        << "millopt " << name << "\n"
        << "ASCII\n"
        << "DATASET STRUCTURED_POINTS\n"
        << "DIMENSIONS " << grid.nx() + 1 << ' ' << grid.ny() + 1 << ' '
        << (grid.dimension() == 3 ? grid.nz() + 1 : 2) << "\n"
        << "ORIGIN 0 0 0\n"
        << "SPACING 1 1 1\n"
        << "CELL_DATA " << grid.element_count() << "\n"
        << "SCALARS " << name << " float 1\n"
        << "LOOKUP_TABLE default\n";
    for (std::size_t e = 0; e < field.size(); ++e) {
        out << format_g(static_cast<double>(static_cast<float>(field[e])), 9) << '\n';
    }
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

LoadedField read_vtk(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::string line;
    std::getline(in, line);
    if (line.rfind("# vtk DataFile", 0) != 0) throw ValidationError(path + ": not a legacy VTK file");
    std::getline(in, line);  // title
    std::string token;
    in >> token;
    if (token != "ASCII") throw ValidationError(path + ": only ASCII VTK files are supported");
    int dims[3] = {0, 0, 0};
    std::size_t cells = 0;
    bool have_dims = false;
    while (in >> token) {
        if (token == "DATASET") {
            in >> token;
            if (token != "STRUCTURED_POINTS") {
                throw ValidationError(path + ": expected STRUCTURED_POINTS dataset");
            }
        } else if (token == "DIMENSIONS") {
            in >> dims[0] >> dims[1] >> dims[2];
            have_dims = true;
        } else if (token == "ORIGIN" || token == "SPACING") {
            double skip;
            in >> skip >> skip >> skip;
        } else if (token == "CELL_DATA") {
            in >> cells;
        } else if (token == "SCALARS") {
            std::getline(in, line);
        } else if (token == "LOOKUP_TABLE") {
            in >> token;
            break;
        } else {
            throw ValidationError(path + ": unexpected token '" + token + "'");
        }
    }
    if (!in || !have_dims || dims[0] < 2 || dims[1] < 2 || dims[2] < 2) {
        throw ValidationError(path + ": missing or invalid DIMENSIONS");
    }
    std::vector<int> extents{dims[0] - 1, dims[1] - 1};
    if (dims[2] > 2) extents.push_back(dims[2] - 1);
    StructuredGrid grid(extents);
    if (cells != grid.element_count()) {
        throw ValidationError(path + ": CELL_DATA count does not match DIMENSIONS");
    }
    DensityField values(cells);
    for (std::size_t e = 0; e < cells; ++e) {
        float v;
        if (!(in >> v)) throw ValidationError(path + ": truncated scalar data");
        values[e] = v;
    }
    return {grid, std::move(values)};
}

void write_pgm(const std::string& path, const StructuredGrid& grid, std::span<const double> field) {
    if (grid.dimension() != 2) throw ValidationError("write_pgm: only 2D fields can be written");
    if (field.size() != grid.element_count()) {
        throw ValidationError("write_pgm: field size does not match the grid");
    }
    auto out = open_out(path, std::ios::out | std::ios::binary);
    out << "P5\n" << grid.nx() << ' ' << grid.ny() << "\n255\n";
    for (int j = grid.ny() - 1; j >= 0; --j) {
        for (int i = 0; i < grid.nx(); ++i) {
            const double v = std::clamp(field[grid.index(i, j)], 0.0, 1.0);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)))));
        }
    }
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

void write_history_csv(const std::string& path, std::span<const IterationRecord> history) {
    auto out = open_out(path);
    out << "iter,compliance,volume,change\n";
    for (const auto& r : history) {
        out << r.iteration << ',' << format_g(r.compliance, 17) << ',' << format_g(r.volume, 17)
            << ',' << format_g(r.change, 17) << '\n';
    }
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

}  // namespace millopt
