#include "millopt/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "millopt/errors.hpp"

namespace millopt {

Mode parse_mode(const std::string& name) {
    if (name == "reference") return Mode::reference;
    if (name == "machining") return Mode::machining;
    throw ValidationError("unknown mode '" + name + "' (expected reference or machining)");
}

std::string to_string(Mode mode) { return mode == Mode::reference ? "reference" : "machining"; }

void OptimizationConfig::validate() const {
    if (!(volume_limit > 0.0 && volume_limit < 1.0)) {
        throw ValidationError("volume limit must lie in (0, 1)");
    }
    if (max_iterations < 1) throw ValidationError("iteration cap must be >= 1");
    if (!(change_tolerance > 0.0)) throw ValidationError("change tolerance must be positive");
    if (!(move_limit > 0.0 && move_limit <= 1.0)) throw ValidationError("move limit must lie in (0, 1]");
    if (!(damping > 0.0 && damping <= 1.0)) throw ValidationError("damping must lie in (0, 1]");
    if (!(sensitivity_floor > 0.0)) throw ValidationError("sensitivity floor must be positive");
    if (initial_void && !(*initial_void >= 0.0 && *initial_void <= 1.0)) {
        throw ValidationError("initial void value must lie in [0, 1]");
    }
}

// ---------------------------------------------------------------------------
// DesignChain

DesignChain::DesignChain(FeaProblem problem, double filter_radius,
                         std::vector<MillingDirection> directions, Mode mode,
                         HeavisideParams heaviside, SolverSettings solver)
    : filter_(problem.grid, filter_radius),
      directions_(std::move(directions)),
      mode_(mode),
      heaviside_(heaviside),
      solver_(std::move(problem), solver) {
    heaviside_.validate();
    if (mode_ == Mode::machining && directions_.empty()) {
        throw ValidationError("machining mode needs at least one milling direction");
    }
    if (mode_ == Mode::reference) directions_.clear();
    for (const auto& d : directions_) {
        if (d.grid().extents() != grid().extents()) {
            throw ValidationError("milling direction was built for a different grid");
        }
    }
}

DensityField DesignChain::physical(std::span<const double> rho_v) const {
    DensityField rho_f = filter_.apply(rho_v);
    if (mode_ == Mode::reference) return rho_f;
    std::vector<DensityField> fields;
    fields.reserve(directions_.size());
    for (const auto& d : directions_) fields.push_back(project_direction(d, rho_f, heaviside_).field);
    return combine_directions(fields);
}

DesignChain::Forward DesignChain::forward(std::span<const double> rho_v) {
    Forward s;
    s.rho_v.assign(rho_v.begin(), rho_v.end());
    s.rho_f = filter_.apply(rho_v);
    if (mode_ == Mode::reference) {
        s.physical = s.rho_f;
    } else {
        std::vector<DensityField> fields;
        for (const auto& d : directions_) {
            s.per_direction.push_back(project_direction(d, s.rho_f, heaviside_));
            fields.push_back(s.per_direction.back().field);
        }
        s.physical = combine_directions(fields);
    }
    s.fea = solver_.solve(s.physical);
    s.compliance = s.fea.compliance;
    s.volume = volume_fraction(s.physical);
    return s;
}

DesignChain::Gradients DesignChain::total_gradient(const Forward& state) const {
    const DensityField dc_phys = compliance_sensitivity(problem(), state.physical, state.fea);
    const DensityField dv_phys = volume_sensitivity(state.physical.size());
    if (mode_ == Mode::reference) {
        return {filter_.backprop(dc_phys), filter_.backprop(dv_phys)};
    }
    const DensityField dc_f =
        projection_backprop(directions_, state.rho_f, state.per_direction, dc_phys, heaviside_);
    const DensityField dv_f =
        projection_backprop(directions_, state.rho_f, state.per_direction, dv_phys, heaviside_);
    return {filter_.backprop(dc_f), filter_.backprop(dv_f)};
}

// ---------------------------------------------------------------------------
// Initialization and update

double volume_matched_void(const DesignChain& chain, double volume_limit) {
    const std::size_t n = chain.grid().element_count();
    auto volume_at = [&](double c) { return volume_fraction(chain.physical(DensityField(n, c))); };
    // Volume decreases as the void value grows.
    double lo = 0.0, hi = 1.0;
    const double v_lo = volume_at(lo), v_hi = volume_at(hi);
    if (!(v_lo >= volume_limit && v_hi <= volume_limit)) {
        std::ostringstream msg;
        msg << "no uniform start reaches volume " << volume_limit << " (range " << v_hi << " .. "
            << v_lo << ")";
        throw NumericalError(msg.str());
    }
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (volume_at(mid) > volume_limit) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

DensityField oc_update(const DesignChain& chain, std::span<const double> rho_v,
                       const DesignChain::Gradients& gradients, const OptimizationConfig& config,
                       std::span<const double> move_limits) {
    const std::size_t n = rho_v.size();
    if (gradients.compliance.size() != n || gradients.volume.size() != n) {
        throw ValidationError("oc_update: gradient sizes do not match the design");
    }
    if (!move_limits.empty() && move_limits.size() != n) {
        throw ValidationError("oc_update: move limit count does not match the design");
    }
    double dv_max = 0.0;
    for (double g : gradients.volume) dv_max = std::max(dv_max, -g);
    const double dv_cutoff = 1e-12 * dv_max;

    // Material variable m = 1 - rho_v: dC/dm = -dC/drho_v <= 0, dV/dm >= 0.
    // ratio < 0 marks an element held at its current value.
    DensityField m(n), lower(n), upper(n), ratio(n);
    for (std::size_t e = 0; e < n; ++e) {
        m[e] = 1.0 - rho_v[e];
        const double move = move_limits.empty() ? config.move_limit : move_limits[e];
        lower[e] = std::max(0.0, m[e] - move);
        upper[e] = std::min(1.0, m[e] + move);
        const double descent = std::max(config.sensitivity_floor, gradients.compliance[e]);
        const double dv = -gradients.volume[e];
        ratio[e] = dv > dv_cutoff ? descent / dv : -1.0;  // descent >= floor > 0
    }

    DensityField candidate(n);
    auto update_for = [&](double log_lambda) {
        for (std::size_t e = 0; e < n; ++e) {
            double next = m[e];
            if (ratio[e] >= 0.0) {
                const double expo = config.damping * (std::log(ratio[e]) - log_lambda);
                next = m[e] * std::exp(std::clamp(expo, -700.0, 700.0));
            }
            candidate[e] = 1.0 - std::clamp(next, lower[e], upper[e]);
        }
        return volume_fraction(chain.physical(candidate));
    };

    // Bracket wide enough that both ends saturate at the move bounds,
    // independent of the scale of the sensitivities.
    double r_min = std::numeric_limits<double>::infinity(), r_max = 0.0;
    for (double r : ratio) {
        if (r > 0.0) {
            r_min = std::min(r_min, r);
            r_max = std::max(r_max, r);
        }
    }
    if (!(r_max > 0.0)) r_min = r_max = 1.0;
    const double target = config.volume_limit;
    double log_lo = std::log(r_min) - 92.0, log_hi = std::log(r_max) + 92.0;
    const double v_small = update_for(log_lo);
    const double v_large = update_for(log_hi);
    if (v_small < target - 1e-4 || v_large > target + 1e-4) {
        std::ostringstream msg;
        msg << "volume limit " << target << " unreachable in this step (reachable range " << v_large
            << " .. " << v_small << ")";
        throw NumericalError(msg.str());
    }
    double volume = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (log_lo + log_hi);
        volume = update_for(mid);
        if (std::abs(volume - target) <= 1e-6 || log_hi - log_lo < 1e-12) break;
        if (volume > target) {
            log_lo = mid;
        } else {
            log_hi = mid;
        }
    }
    if (std::abs(volume - target) >= 1e-4) {
        std::ostringstream msg;
        msg << "volume bisection stalled at " << volume << " (target " << target << ")";
        throw NumericalError(msg.str());
    }
    return candidate;
}

void adapt_move_limits(std::span<double> move_limits, std::span<const double> step,
                       std::span<const double> previous_step, double max_move) {
    constexpr double shrink = 0.7, grow = 1.2, floor = 0.005;
    const double min_move = std::min(floor, max_move);
    for (std::size_t e = 0; e < move_limits.size(); ++e) {
        const double trend = step[e] * previous_step[e];
        if (trend < 0.0) {
            move_limits[e] = std::max(min_move, move_limits[e] * shrink);
        } else if (trend > 0.0) {
            move_limits[e] = std::min(max_move, move_limits[e] * grow);
        }
    }
}

RunResult run(DesignChain& chain, const OptimizationConfig& config,
              std::optional<DensityField> initial_void_field, const IterationCallback& on_iteration) {
    config.validate();
    const std::size_t n = chain.grid().element_count();
    RunResult out;
    if (initial_void_field) {
        if (initial_void_field->size() != n) {
            throw ValidationError("initial field size does not match the grid");
        }
        out.rho_v = std::move(*initial_void_field);
    } else {
        const double start = config.initial_void ? *config.initial_void
                                                 : volume_matched_void(chain, config.volume_limit);
        out.rho_v.assign(n, start);
    }

    const bool adaptive = config.uses_adaptive_move();
    DensityField moves, step(n, 0.0), previous_step(n, 0.0);
    if (adaptive) moves.assign(n, config.move_limit);

    using clock = std::chrono::steady_clock;
    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        const auto t0 = clock::now();
        const DesignChain::Forward state = chain.forward(out.rho_v);
        const DesignChain::Gradients grads = chain.total_gradient(state);
        DensityField next = oc_update(chain, out.rho_v, grads, config, moves);
        double change = 0.0;
        for (std::size_t e = 0; e < n; ++e) {
            step[e] = next[e] - out.rho_v[e];
            change = std::max(change, std::abs(step[e]));
        }
        if (adaptive) {
            adapt_move_limits(moves, step, previous_step, config.move_limit);
            std::swap(step, previous_step);
        }
        out.rho_v = std::move(next);

        IterationRecord rec;
        rec.iteration = iter;
        rec.compliance = state.compliance;
        rec.volume = state.volume;
        rec.change = change;
        rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
        out.history.push_back(rec);
        if (on_iteration) on_iteration(rec);
        if (change < config.change_tolerance) {
            out.converged = true;
            break;
        }
    }
    out.final_state = chain.forward(out.rho_v);
    return out;
}

}  // namespace millopt
