#pragma once

#include <span>
#include <string>
#include <vector>

#include "millopt/grid.hpp"
#include "millopt/optimizer.hpp"

namespace millopt {

/// Legacy VTK structured-points file with one cell-centered scalar, x-fastest.
/// Values are stored as float with 9 significant digits, which round-trips
/// every float exactly.
void write_vtk(const std::string& path, const StructuredGrid& grid,
               std::span<const double> field, const std::string& name = "density");

struct LoadedField {
    StructuredGrid grid;
    DensityField values;
};

/// Reads files produced by write_vtk. A single-layer file (nz = 1) yields a
/// 2D grid. Throws ValidationError on unreadable or malformed input.
LoadedField read_vtk(const std::string& path);

/// 8-bit binary graymap of a 2D field, pixel = round(255 * (1 - value)) so
/// solid renders black. The top image row is the highest y row.
void write_pgm(const std::string& path, const StructuredGrid& grid, std::span<const double> field);

/// Convergence history as `iter,compliance,volume,change`.
void write_history_csv(const std::string& path, std::span<const IterationRecord> history);

}  // namespace millopt
