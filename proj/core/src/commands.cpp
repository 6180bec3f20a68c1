#include "millopt/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "millopt/errors.hpp"
#include "millopt/field_io.hpp"

namespace millopt {

using nlohmann::json;

CheckReport check_field(const StructuredGrid& grid, std::span<const double> field,
                        std::span<const Vec3> directions, double ray_threshold) {
    if (field.size() != grid.element_count()) {
        throw ValidationError("check: field size does not match the grid");
    }
    if (directions.empty()) throw ValidationError("check: at least one direction is required");
    const std::size_t n = grid.element_count();
    std::vector<std::uint8_t> solid(n);
    for (std::size_t e = 0; e < n; ++e) solid[e] = field[e] >= 0.5 ? 1 : 0;

    CheckReport report;
    std::vector<std::size_t> blocked_count(n, 0);
    for (const Vec3& d : directions) {
        const MillingDirection dir(grid, normalized(d), ray_threshold);
        DirectionCheck dc;
        dc.direction = dir.direction();
        std::vector<std::uint8_t> blocked(n, 0);
        if (dir.axis_aligned()) {
            for (std::size_t c = 0; c < dir.column_count(); ++c) {
                bool material_above = false;
                for (std::size_t e : dir.column(c)) {
                    if (!solid[e] && material_above) blocked[e] = 1;
                    material_above = material_above || solid[e];
                }
            }
        } else {
            for (std::size_t e = 0; e < n; ++e) {
                if (solid[e]) continue;
                for (std::size_t j : dir.ray_set(e)) {
                    if (solid[j]) {
                        blocked[e] = 1;
                        break;
                    }
                }
            }
        }
        for (std::size_t e = 0; e < n; ++e) {
            dc.blocked_voids += blocked[e];
            blocked_count[e] += blocked[e];
        }
        dc.max_violation = dc.blocked_voids > 0 ? 1.0 : 0.0;
        report.directions.push_back(dc);
    }
    for (std::size_t e = 0; e < n; ++e) {
        if (solid[e]) continue;
        ++report.void_elements;
        if (blocked_count[e] == directions.size()) ++report.inaccessible_voids;
    }
    return report;
}

CheckReport check_command(const std::string& path, std::span<const Vec3> directions,
                          double ray_threshold) {
    const LoadedField loaded = read_vtk(path);
    for (const Vec3& d : directions) {
        if (loaded.grid.dimension() == 2 && d[2] != 0.0) {
            throw ValidationError("check: 2D field cannot be checked along a direction with z component");
        }
    }
    return check_field(loaded.grid, loaded.values, directions, ray_threshold);
}

void print_check_report(std::ostream& os, const CheckReport& report) {
    for (const auto& d : report.directions) {
        os << "direction (" << d.direction[0] << ", " << d.direction[1] << ", " << d.direction[2]
           << "): max violation " << d.max_violation << ", blocked voids " << d.blocked_voids << '\n';
    }
    os << "void elements: " << report.void_elements
       << ", inaccessible from every direction: " << report.inaccessible_voids << '\n';
    os << "verdict: " << (report.machinable() ? "machinable" : "not machinable") << '\n';
}

namespace {

json to_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

json to_json(const CheckReport& r) {
    json dirs = json::array();
    for (const auto& d : r.directions) {
        dirs.push_back({{"direction", to_json(d.direction)},
                        {"max_violation", d.max_violation},
                        {"blocked_voids", d.blocked_voids}});
    }
    return {{"directions", dirs},
            {"void_elements", r.void_elements},
            {"inaccessible_voids", r.inaccessible_voids},
            {"verdict", r.machinable() ? "pass" : "fail"}};
}

}  // namespace

RunSummary run_command(const RunConfig& config, std::ostream& log) {
    namespace fs = std::filesystem;
    const auto t_start = std::chrono::steady_clock::now();
    const StructuredGrid grid = make_grid(config);
    FeaProblem problem = make_problem(config.load_case, grid, config.material);
    std::vector<MillingDirection> dirs = make_directions(config, grid);

    RunSummary summary;
    const double inner_floor = config.heaviside.inner.value(0.0);
    for (const auto& d : dirs) {
        const double bias = static_cast<double>(d.max_ray_length()) * inner_floor;
        if (bias > 0.4) {
            std::ostringstream msg;
            msg << "rays along (" << d.direction()[0] << ", " << d.direction()[1] << ", "
                << d.direction()[2] << ") accumulate up to " << bias
                << " from fully void elements; projected voids may be biased toward material";
            summary.warnings.push_back(msg.str());
        }
        if (!d.axis_aligned() && grid.element_count() <= 4096 && !d.rays_nested()) {
            summary.warnings.push_back("ray sets along an oblique direction are not nested; "
                                       "monotonicity of the projected field is not guaranteed");
        }
    }
    for (const auto& w : summary.warnings) log << "warning: " << w << '\n';

    std::optional<DensityField> init;
    if (config.init_field) {
        LoadedField loaded = read_vtk(*config.init_field);
        if (loaded.grid.extents() != grid.extents()) {
            throw ValidationError("init_field: grid does not match the configured extents");
        }
        init = std::move(loaded.values);
    }

    DesignChain chain(std::move(problem), config.filter_radius, std::move(dirs), config.mode(),
                      config.heaviside, config.solver);
    log << "grid " << grid.nx() << "x" << grid.ny();
    if (grid.dimension() == 3) log << "x" << grid.nz();
    log << ", mode " << to_string(config.mode()) << ", solver " << to_string(chain.solver_kind())
        << ", " << chain.directions().size() << " direction(s)\n";

    const RunResult result = run(chain, config.optimizer, std::move(init), [&](const IterationRecord& r) {
        log << "it " << std::setw(4) << r.iteration << "  C " << std::setprecision(8) << r.compliance
            << "  V " << std::setprecision(5) << r.volume << "  change " << r.change << "  ("
            << std::setprecision(3) << r.seconds << " s)\n";
        log.flush();
    });

    summary.compliance = result.final_state.compliance;
    summary.volume = result.final_state.volume;
    summary.iterations = static_cast<int>(result.history.size());
    summary.converged = result.converged;
    for (std::size_t i = 0; i < chain.directions().size(); ++i) {
        DirectionVerdict v;
        v.direction = chain.directions()[i].direction();
        v.projected_violation =
            monotonicity_violation(chain.directions()[i], result.final_state.per_direction[i].field);
        v.pass = v.projected_violation <= kMonotonicityTolerance;
        summary.verdicts.push_back(v);
    }
    if (!config.directions.empty()) {
        summary.composite =
            check_field(grid, result.final_state.physical, config.directions, config.ray_threshold);
    }

    fs::create_directories(config.output_dir);
    const fs::path out(config.output_dir);
    write_history_csv((out / "history.csv").string(), result.history);
    write_vtk((out / "density.vtk").string(), grid, result.final_state.physical, "density");
    write_vtk((out / "design.vtk").string(), grid, result.rho_v, "void");
    if (grid.dimension() == 2) write_pgm((out / "density.pgm").string(), grid, result.final_state.physical);

    json doc;
    doc["compliance"] = summary.compliance;
    doc["volume"] = summary.volume;
    doc["iterations"] = summary.iterations;
    doc["converged"] = summary.converged;
    doc["solver"] = to_string(chain.solver_kind());
    doc["config"] = json::parse(config_to_json(config));
    json verdicts = json::array();
    for (const auto& v : summary.verdicts) {
        verdicts.push_back({{"direction", to_json(v.direction)},
                            {"projected_violation", v.projected_violation},
                            {"verdict", v.pass ? "pass" : "fail"}});
    }
    doc["machinability"] = {{"directions", verdicts}};
    if (!config.directions.empty()) doc["machinability"]["composite"] = to_json(summary.composite);
    doc["warnings"] = summary.warnings;
    doc["seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::ofstream sf(out / "summary.json");
    if (!sf) throw ValidationError("cannot write summary.json in " + config.output_dir);
    sf << doc.dump(2) << '\n';

    log << "final compliance " << std::setprecision(8) << summary.compliance << ", volume "
        << summary.volume << ", iterations " << summary.iterations
        << (summary.converged ? " (converged)" : " (iteration cap)") << '\n';
    return summary;
}

}  // namespace millopt
