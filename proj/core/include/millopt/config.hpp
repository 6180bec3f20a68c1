#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "millopt/fea.hpp"
#include "millopt/machining.hpp"
#include "millopt/optimizer.hpp"

namespace millopt {

enum class Preset { cantilever2d, cantilever3d, mbb3d, custom };

Preset parse_preset(const std::string& name);
std::string to_string(Preset preset);

/// Everything needed for one optimization run.
struct RunConfig {
    Preset preset = Preset::custom;
    std::vector<int> extents;
    LoadCase load_case = LoadCase::cantilever;
    double filter_radius = 4.0;
    MaterialModel material;
    std::vector<Vec3> directions;  // unit vectors
    double ray_threshold = kDefaultRayThreshold;
    HeavisideParams heaviside;
    OptimizationConfig optimizer;
    SolverSettings solver;
    std::string output_dir = "millopt-out";
    std::optional<std::string> init_field;

    Mode mode() const { return optimizer.mode; }
};

/// Parses a JSON run document and applies preset defaults.
///
/// Recognized keys: preset, extents, loadcase, volfrac, rmin, penal, emin,
/// poisson, mode, directions, d0, heaviside{slope1,shift1,slope2,shift2},
/// optimizer{max_iter,tol,move,eta,init,floor,
/// adaptive_move}, solver{kind,tol,max_iter},
/// output, init_field. Throws ValidationError naming unknown keys or the path
/// of an invalid value.
RunConfig parse_config(std::string_view text);

/// JSON rendering of a config, with all defaults filled in.
std::string config_to_json(const RunConfig& config, int indent = 2);

/// The three benchmark setups as JSON documents (2D cantilever, 3D
/// cantilever, 3D half MBB beam).
std::vector<std::string> preset_documents();

/// Grid, problem and direction objects described by a config.
StructuredGrid make_grid(const RunConfig& config);
std::vector<MillingDirection> make_directions(const RunConfig& config, const StructuredGrid& grid);

}  // namespace millopt
