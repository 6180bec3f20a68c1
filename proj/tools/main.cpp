// millopt: machining-constrained topology optimization from the command line.
//
//   millopt run <config.json>
//   millopt check <density.vtk> --dir x,y,z [--dir ...] [--d0 0.5]
//   millopt presets
//
// Exit codes: 0 success, 1 validation error, 2 numerical failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "millopt/commands.hpp"
#include "millopt/config.hpp"
#include "millopt/errors.hpp"

namespace {

millopt::Vec3 parse_direction(const std::string& text) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            parts.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw millopt::ValidationError("--dir: cannot parse '" + text + "'");
        }
    }
    if (parts.size() != 2 && parts.size() != 3) {
        throw millopt::ValidationError("--dir: expected x,y or x,y,z, got '" + text + "'");
    }
    return millopt::normalized({parts[0], parts[1], parts.size() == 3 ? parts[2] : 0.0});
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw millopt::ValidationError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topology optimization with multi-axis machining constraints"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "Run an optimization described by a JSON config");
    run->add_option("config", config_path, "Path to the run config")->required();

    std::string field_path;
    std::vector<std::string> dir_args;
    double d0 = millopt::kDefaultRayThreshold;
    auto* check = app.add_subcommand("check", "Check a density field for machinability");
    check->add_option("field", field_path, "Density file written by `millopt run`")->required();
    check->add_option("--dir", dir_args, "Insertion direction x,y[,z]; repeatable")->required();
    check->add_option("--d0", d0, "Ray membership threshold in element edges");

    auto* presets = app.add_subcommand("presets", "Print the benchmark configurations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*run) {
            const millopt::RunConfig cfg = millopt::parse_config(read_file(config_path));
            const auto summary = millopt::run_command(cfg, std::cout);
            for (const auto& v : summary.verdicts) {
                std::cout << "direction (" << v.direction[0] << ", " << v.direction[1] << ", "
                          << v.direction[2] << "): " << (v.pass ? "pass" : "FAIL") << '\n';
            }
            std::cout << "outputs written to " << cfg.output_dir << '\n';
        } else if (*check) {
            std::vector<millopt::Vec3> dirs;
            for (const auto& a : dir_args) dirs.push_back(parse_direction(a));
            const auto report = millopt::check_command(field_path, dirs, d0);
            millopt::print_check_report(std::cout, report);
        } else if (*presets) {
            for (const auto& doc : millopt::preset_documents()) std::cout << doc << '\n';
        }
    } catch (const millopt::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const millopt::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
