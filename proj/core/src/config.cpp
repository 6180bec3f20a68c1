#include "millopt/config.hpp"

#include <set>
#include <sstream>

#include "json.hpp"
#include "millopt/errors.hpp"

namespace millopt {

using nlohmann::json;

Preset parse_preset(const std::string& name) {
    if (name == "cantilever2d") return Preset::cantilever2d;
    if (name == "cantilever3d") return Preset::cantilever3d;
    if (name == "mbb3d") return Preset::mbb3d;
    if (name == "custom") return Preset::custom;
    throw ValidationError("preset: unknown value '" + name +
                          "' (expected cantilever2d, cantilever3d, mbb3d or custom)");
}

std::string to_string(Preset preset) {
    switch (preset) {
        case Preset::cantilever2d: return "cantilever2d";
        case Preset::cantilever3d: return "cantilever3d";
        case Preset::mbb3d: return "mbb3d";
        case Preset::custom: return "custom";
    }
    return "custom";
}

namespace {

std::string to_string(LoadCase c) { return c == LoadCase::cantilever ? "cantilever" : "mbb"; }

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) unknown.push_back(key);
    }
    if (unknown.empty()) return;
    std::string msg = "unknown key";
    msg += unknown.size() > 1 ? "s" : "";
    msg += where.empty() ? "" : " in " + where;
    msg += ":";
    for (const auto& k : unknown) msg += " " + k;
    throw ValidationError(msg);
}

double get_number(const json& obj, const char* key, const std::string& path) {
    const json& v = obj.at(key);
    if (!v.is_number()) throw ValidationError(path + ": expected a number");
    return v.get<double>();
}

int get_int(const json& obj, const char* key, const std::string& path) {
    const json& v = obj.at(key);
    if (!v.is_number_integer()) throw ValidationError(path + ": expected an integer");
    return v.get<int>();
}

std::string get_string(const json& obj, const char* key, const std::string& path) {
    const json& v = obj.at(key);
    if (!v.is_string()) throw ValidationError(path + ": expected a string");
    return v.get<std::string>();
}

// Re-throws ValidationError with the key path prefixed.
template <typename F>
auto at_path(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const ValidationError& e) {
        const std::string what = e.what();
        if (what.rfind(path, 0) == 0) throw;
        throw ValidationError(path + ": " + what);
    }
}

}  // namespace

RunConfig parse_config(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    reject_unknown(doc,
                   {"preset", "extents", "loadcase", "volfrac", "rmin", "penal", "emin", "poisson",
                    "mode", "directions", "d0", "heaviside", "optimizer", "solver", "output",
                    "init_field"},
                   "");

    RunConfig cfg;
    cfg.preset = doc.contains("preset") ? parse_preset(get_string(doc, "preset", "preset"))
                                        : Preset::custom;
    switch (cfg.preset) {
        case Preset::cantilever2d:
            cfg.extents = {100, 100};
            cfg.load_case = LoadCase::cantilever;
            cfg.optimizer.volume_limit = 0.2;
            break;
        case Preset::cantilever3d:
            cfg.extents = {144, 48, 48};
            cfg.load_case = LoadCase::cantilever;
            cfg.optimizer.volume_limit = 0.3;
            break;
        case Preset::mbb3d:
            cfg.extents = {144, 48, 48};
            cfg.load_case = LoadCase::mbb;
            cfg.optimizer.volume_limit = 0.2;
            break;
        case Preset::custom:
            cfg.optimizer.volume_limit = 0.2;
            break;
    }

    if (doc.contains("extents")) {
        const json& ext = doc["extents"];
        if (!ext.is_array() || (ext.size() != 2 && ext.size() != 3)) {
            throw ValidationError("extents: expected an array of 2 or 3 integers");
        }
        std::vector<int> values;
        for (std::size_t i = 0; i < ext.size(); ++i) {
            const std::string path = "extents[" + std::to_string(i) + "]";
            if (!ext[i].is_number_integer() || ext[i].get<long long>() < 1) {
                throw ValidationError(path + ": expected a positive integer");
            }
            values.push_back(ext[i].get<int>());
        }
        if (cfg.preset != Preset::custom && values.size() != cfg.extents.size()) {
            throw ValidationError("extents: preset " + to_string(cfg.preset) + " needs " +
                                  std::to_string(cfg.extents.size()) + " extents");
        }
        cfg.extents = values;
    } else if (cfg.preset == Preset::custom) {
        throw ValidationError("extents: required for the custom preset");
    }

    if (doc.contains("loadcase")) {
        const std::string lc = get_string(doc, "loadcase", "loadcase");
        if (lc == "cantilever") {
            cfg.load_case = LoadCase::cantilever;
        } else if (lc == "mbb") {
            cfg.load_case = LoadCase::mbb;
        } else {
            throw ValidationError("loadcase: expected cantilever or mbb");
        }
    }

    const int dim = static_cast<int>(cfg.extents.size());
    cfg.optimizer.max_iterations = dim == 2 ? 300 : 200;

    if (doc.contains("volfrac")) cfg.optimizer.volume_limit = get_number(doc, "volfrac", "volfrac");
    if (!(cfg.optimizer.volume_limit > 0.0 && cfg.optimizer.volume_limit < 1.0)) {
        throw ValidationError("volfrac: must lie in (0, 1)");
    }
    if (doc.contains("rmin")) cfg.filter_radius = get_number(doc, "rmin", "rmin");
    if (!(cfg.filter_radius > 0.0)) throw ValidationError("rmin: must be positive");
    if (doc.contains("penal")) cfg.material.penal = get_number(doc, "penal", "penal");
    if (doc.contains("emin")) cfg.material.young_min = get_number(doc, "emin", "emin");
    if (doc.contains("poisson")) cfg.material.poisson = get_number(doc, "poisson", "poisson");
    at_path("material", [&] { cfg.material.validate(); });

    if (doc.contains("directions")) {
        const json& dirs = doc["directions"];
        if (!dirs.is_array()) throw ValidationError("directions: expected an array of vectors");
        for (std::size_t i = 0; i < dirs.size(); ++i) {
            const std::string path = "directions[" + std::to_string(i) + "]";
            const json& v = dirs[i];
            if (!v.is_array() || (v.size() != 2 && v.size() != 3)) {
                throw ValidationError(path + ": expected 2 or 3 numbers");
            }
            Vec3 d{0.0, 0.0, 0.0};
            for (std::size_t c = 0; c < v.size(); ++c) {
                if (!v[c].is_number()) throw ValidationError(path + ": expected numbers");
                d[c] = v[c].get<double>();
            }
            if (dim == 2 && d[2] != 0.0) {
                throw ValidationError(path + ": 2D directions cannot have a z component");
            }
            cfg.directions.push_back(at_path(path, [&] { return normalized(d); }));
        }
    }

    cfg.optimizer.mode = cfg.directions.empty() ? Mode::reference : Mode::machining;
    if (doc.contains("mode")) {
        cfg.optimizer.mode = at_path("mode", [&] { return parse_mode(get_string(doc, "mode", "mode")); });
    }
    if (cfg.optimizer.mode == Mode::machining && cfg.directions.empty()) {
        throw ValidationError("directions: machining mode needs at least one direction");
    }

    if (doc.contains("d0")) cfg.ray_threshold = get_number(doc, "d0", "d0");
    if (!(cfg.ray_threshold > 0.0 && cfg.ray_threshold <= 1.0)) {
        throw ValidationError("d0: must lie in (0, 1]");
    }

    if (doc.contains("heaviside")) {
        const json& h = doc["heaviside"];
        if (!h.is_object()) throw ValidationError("heaviside: expected an object");
        reject_unknown(h, {"slope1", "shift1", "slope2", "shift2"}, "heaviside");
        if (h.contains("slope1")) cfg.heaviside.inner.slope = get_number(h, "slope1", "heaviside.slope1");
        if (h.contains("shift1")) cfg.heaviside.inner.shift = get_number(h, "shift1", "heaviside.shift1");
        if (h.contains("slope2")) cfg.heaviside.outer.slope = get_number(h, "slope2", "heaviside.slope2");
        if (h.contains("shift2")) cfg.heaviside.outer.shift = get_number(h, "shift2", "heaviside.shift2");
        at_path("heaviside", [&] { cfg.heaviside.validate(); });
    }

    if (doc.contains("optimizer")) {
        const json& o = doc["optimizer"];
        if (!o.is_object()) throw ValidationError("optimizer: expected an object");
        reject_unknown(o, {"max_iter", "tol", "move", "eta", "init", "floor", "adaptive_move"},
                       "optimizer");
        auto& oc = cfg.optimizer;
        if (o.contains("max_iter")) oc.max_iterations = get_int(o, "max_iter", "optimizer.max_iter");
        if (o.contains("tol")) oc.change_tolerance = get_number(o, "tol", "optimizer.tol");
        if (o.contains("move")) oc.move_limit = get_number(o, "move", "optimizer.move");
        if (o.contains("eta")) oc.damping = get_number(o, "eta", "optimizer.eta");
        if (o.contains("floor")) oc.sensitivity_floor = get_number(o, "floor", "optimizer.floor");
        if (o.contains("adaptive_move")) {
            if (!o["adaptive_move"].is_boolean()) {
                throw ValidationError("optimizer.adaptive_move: expected true or false");
            }
            oc.adaptive_move = o["adaptive_move"].get<bool>();
        }
        if (o.contains("init")) {
            const json& init = o["init"];
            if (init.is_string() && init.get<std::string>() == "auto") {
                oc.initial_void.reset();
            } else if (init.is_number()) {
                oc.initial_void = init.get<double>();
            } else {
                throw ValidationError("optimizer.init: expected a number in [0, 1] or \"auto\"");
            }
        }
    }
    {
        auto& oc = cfg.optimizer;
        if (oc.max_iterations < 1) throw ValidationError("optimizer.max_iter: must be >= 1");
        if (!(oc.change_tolerance > 0.0)) throw ValidationError("optimizer.tol: must be positive");
        if (!(oc.move_limit > 0.0 && oc.move_limit <= 1.0)) {
            throw ValidationError("optimizer.move: must lie in (0, 1]");
        }
        if (!(oc.damping > 0.0 && oc.damping <= 1.0)) {
            throw ValidationError("optimizer.eta: must lie in (0, 1]");
        }
        if (!(oc.sensitivity_floor > 0.0)) throw ValidationError("optimizer.floor: must be positive");
        if (oc.initial_void && !(*oc.initial_void >= 0.0 && *oc.initial_void <= 1.0)) {
            throw ValidationError("optimizer.init: must lie in [0, 1]");
        }
    }

    if (doc.contains("solver")) {
        const json& s = doc["solver"];
        if (!s.is_object()) throw ValidationError("solver: expected an object");
        reject_unknown(s, {"kind", "tol", "max_iter"}, "solver");
        if (s.contains("kind")) {
            cfg.solver.kind = at_path("solver.kind", [&] {
                return parse_solver_kind(get_string(s, "kind", "solver.kind"));
            });
        }
        if (s.contains("tol")) cfg.solver.relative_tolerance = get_number(s, "tol", "solver.tol");
        if (s.contains("max_iter")) cfg.solver.max_iterations = get_int(s, "max_iter", "solver.max_iter");
        if (!(cfg.solver.relative_tolerance > 0.0)) throw ValidationError("solver.tol: must be positive");
        if (cfg.solver.max_iterations < 1) throw ValidationError("solver.max_iter: must be >= 1");
    }

    if (doc.contains("output")) cfg.output_dir = get_string(doc, "output", "output");
    if (doc.contains("init_field")) cfg.init_field = get_string(doc, "init_field", "init_field");
    return cfg;
}

std::string config_to_json(const RunConfig& cfg, int indent) {
    json doc;
    doc["preset"] = to_string(cfg.preset);
    doc["extents"] = cfg.extents;
    doc["loadcase"] = to_string(cfg.load_case);
    doc["volfrac"] = cfg.optimizer.volume_limit;
    doc["rmin"] = cfg.filter_radius;
    doc["penal"] = cfg.material.penal;
    doc["emin"] = cfg.material.young_min;
    doc["poisson"] = cfg.material.poisson;
    doc["mode"] = to_string(cfg.optimizer.mode);
    json dirs = json::array();
    for (const auto& d : cfg.directions) {
        if (cfg.extents.size() == 2) {
            dirs.push_back({d[0], d[1]});
        } else {
            dirs.push_back({d[0], d[1], d[2]});
        }
    }
    doc["directions"] = dirs;
    doc["d0"] = cfg.ray_threshold;
    doc["heaviside"] = {{"slope1", cfg.heaviside.inner.slope},
                        {"shift1", cfg.heaviside.inner.shift},
                        {"slope2", cfg.heaviside.outer.slope},
                        {"shift2", cfg.heaviside.outer.shift}};
    json opt = {{"max_iter", cfg.optimizer.max_iterations},
                {"tol", cfg.optimizer.change_tolerance},
                {"move", cfg.optimizer.move_limit},
                {"eta", cfg.optimizer.damping},
                {"floor", cfg.optimizer.sensitivity_floor},
                {"adaptive_move", cfg.optimizer.uses_adaptive_move()}};
    if (cfg.optimizer.initial_void) {
        opt["init"] = *cfg.optimizer.initial_void;
    } else {
        opt["init"] = "auto";
    }
    doc["optimizer"] = opt;
    doc["solver"] = {{"kind", to_string(cfg.solver.kind)},
                     {"tol", cfg.solver.relative_tolerance},
                     {"max_iter", cfg.solver.max_iterations}};
    doc["output"] = cfg.output_dir;
    if (cfg.init_field) doc["init_field"] = *cfg.init_field;
    return doc.dump(indent);
}

std::vector<std::string> preset_documents() {
    const json cantilever2d = {{"preset", "cantilever2d"},
                               {"mode", "machining"},
                               {"directions", {{1, 0}, {-1, 0}, {0, 1}, {0, -1}}},
                               {"output", "out/cantilever2d"}};
    const json cantilever3d = {{"preset", "cantilever3d"},
                               {"mode", "machining"},
                               {"directions",
                                {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}},
                               {"output", "out/cantilever3d"}};
    const json mbb3d = {{"preset", "mbb3d"},
                        {"mode", "machining"},
                        {"directions", {{0, 0, 1}, {0, 0, -1}}},
                        {"output", "out/mbb3d"}};
    std::vector<std::string> out;
    for (const json* j : {&cantilever2d, &cantilever3d, &mbb3d}) {
        out.push_back(config_to_json(parse_config(j->dump())));
    }
    return out;
}

StructuredGrid make_grid(const RunConfig& config) { return StructuredGrid(config.extents); }

std::vector<MillingDirection> make_directions(const RunConfig& config, const StructuredGrid& grid) {
    std::vector<MillingDirection> out;
    if (config.mode() == Mode::reference) return out;
    for (const auto& d : config.directions) out.emplace_back(grid, d, config.ray_threshold);
    return out;
}

}  // namespace millopt
