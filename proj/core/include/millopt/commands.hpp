#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "millopt/config.hpp"
#include "millopt/grid.hpp"
#include "millopt/machining.hpp"

namespace millopt {

/// Machinability of one density field w.r.t. one insertion direction, after
/// thresholding at 0.5.
struct DirectionCheck {
    Vec3 direction{};
    /// max over e, j in M(e) of T(j) - T(e) with T the thresholded field:
    /// 1 when some void lies beneath material, 0 otherwise.
    double max_violation = 0.0;
    /// Void elements with material somewhere on their ray.
    std::size_t blocked_voids = 0;
};

struct CheckReport {
    std::vector<DirectionCheck> directions;
    std::size_t void_elements = 0;
    /// Void elements blocked along every direction.
    std::size_t inaccessible_voids = 0;
    bool machinable() const { return inaccessible_voids == 0; }
};

/// Thresholded machinability check of `field` along each direction.
CheckReport check_field(const StructuredGrid& grid, std::span<const double> field,
                        std::span<const Vec3> directions, double ray_threshold = kDefaultRayThreshold);

/// Loads a VTK density file and checks it.
CheckReport check_command(const std::string& path, std::span<const Vec3> directions,
                          double ray_threshold = kDefaultRayThreshold);

void print_check_report(std::ostream& os, const CheckReport& report);

struct DirectionVerdict {
    Vec3 direction{};
    /// Largest decrease of the direction's projected field with depth.
    double projected_violation = 0.0;
    bool pass = false;
};

struct RunSummary {
    double compliance = 0.0;
    double volume = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<DirectionVerdict> verdicts;
    CheckReport composite;
    std::vector<std::string> warnings;
};

/// Tolerance on the projected-field monotonicity check.
inline constexpr double kMonotonicityTolerance = 1e-15;

/// Runs one optimization and writes into config.output_dir:
/// history.csv, density.vtk (composite physical field), design.vtk (void
/// field), density.pgm (2D only) and summary.json. Progress goes to `log`.
RunSummary run_command(const RunConfig& config, std::ostream& log);

}  // namespace millopt
