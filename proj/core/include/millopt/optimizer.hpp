#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "millopt/fea.hpp"
#include "millopt/filter.hpp"
#include "millopt/machining.hpp"

namespace millopt {

enum class Mode {
    reference,  // filtered SIMP, physical field = filtered material field
    machining,  // physical field = composite machining projection
};

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

struct OptimizationConfig {
    double volume_limit = 0.2;
    int max_iterations = 300;
    double change_tolerance = 0.01;
    double move_limit = 0.2;
    double damping = 0.5;
    double sensitivity_floor = 1e-10;
    /// Uniform starting void value. When empty, the uniform value whose
    /// physical volume equals volume_limit is used.
    std::optional<double> initial_void;
    Mode mode = Mode::reference;
    /// Per-element move limits that shrink when an element's step changes
    /// sign and grow back otherwise. Defaults to on in machining mode.
    std::optional<bool> adaptive_move;

    bool uses_adaptive_move() const { return adaptive_move.value_or(mode == Mode::machining); }

    void validate() const;
};

struct IterationRecord {
    int iteration = 0;
    double compliance = 0.0;
    double volume = 0.0;
    double change = 0.0;
    double seconds = 0.0;
};

/// The full map rho_v -> rho_f -> {rho_p^(i)} -> composite -> (C, V) and its
/// adjoint.
class DesignChain {
public:
    struct Forward {
        DensityField rho_v;
        DensityField rho_f;
        std::vector<DirectionProjection> per_direction;  // empty in reference mode
        DensityField physical;
        SolveResult fea;
        double compliance = 0.0;
        double volume = 0.0;
    };

    struct Gradients {
        DensityField compliance;  // dC/d(rho_v)
        DensityField volume;      // dV/d(rho_v)
    };

    /// Machining mode requires at least one direction; reference mode ignores
    /// `directions`.
    DesignChain(FeaProblem problem, double filter_radius, std::vector<MillingDirection> directions,
                Mode mode, HeavisideParams heaviside = {}, SolverSettings solver = {});

    Mode mode() const { return mode_; }
    const StructuredGrid& grid() const { return filter_.grid(); }
    const FilterKernel& filter() const { return filter_; }
    const std::vector<MillingDirection>& directions() const { return directions_; }
    const HeavisideParams& heaviside() const { return heaviside_; }
    const FeaProblem& problem() const { return solver_.problem(); }
    SolverKind solver_kind() const { return solver_.kind(); }

    /// Physical field without the finite element solve.
    DensityField physical(std::span<const double> rho_v) const;

    Forward forward(std::span<const double> rho_v);
    Gradients total_gradient(const Forward& state) const;

private:
    FilterKernel filter_;
    std::vector<MillingDirection> directions_;
    Mode mode_;
    HeavisideParams heaviside_;
    FeaSolver solver_;
};

/// Uniform void value whose physical volume fraction equals `volume_limit`.
/// Throws NumericalError when no value in [0, 1] reaches it.
double volume_matched_void(const DesignChain& chain, double volume_limit);

/// Optimality-criteria step on the material variable m = 1 - rho_v with the
/// Lagrange multiplier found by bisection on the physical volume. Elements
/// whose volume sensitivity is negligible (below 1e-12 of the largest) keep
/// their value. `move_limits`, when given, replaces config.move_limit per
/// element. Throws NumericalError if the volume limit cannot be met for any
/// multiplier.
DensityField oc_update(const DesignChain& chain, std::span<const double> rho_v,
                       const DesignChain::Gradients& gradients, const OptimizationConfig& config,
                       std::span<const double> move_limits = {});

/// Per-element move limits for the next step given the last two steps.
void adapt_move_limits(std::span<double> move_limits, std::span<const double> step,
                       std::span<const double> previous_step, double max_move);

struct RunResult {
    DensityField rho_v;
    DesignChain::Forward final_state;
    std::vector<IterationRecord> history;
    bool converged = false;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Optimization loop. Stops when the largest design change drops below the
/// tolerance or the iteration cap is reached.
RunResult run(DesignChain& chain, const OptimizationConfig& config,
              std::optional<DensityField> initial_void_field = std::nullopt,
              const IterationCallback& on_iteration = {});

}  // namespace millopt
