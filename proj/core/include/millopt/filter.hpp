#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "millopt/grid.hpp"

namespace millopt {

/// Linear density filter mapping the void field to the fictitious material
/// field:
///
///     rho_f(f) = (1 / S_f) * sum_{i in N_f} w_fi * (1 - rho_v(i)),
///     w_fi = max(0, r_min - dist(f, i)),  S_f = sum_{i in N_f} w_fi.
///
/// On a structured grid every neighborhood is a clipped copy of one offset
/// stencil, so only the stencil and the per-element sums S_f are stored.
class FilterKernel {
public:
    struct StencilEntry {
        Index3 offset;
        double weight;
    };

    /// Throws ValidationError for r_min <= 0.
    FilterKernel(const StructuredGrid& grid, double r_min);

    double radius() const { return r_min_; }
    const StructuredGrid& grid() const { return grid_; }
    std::span<const StencilEntry> stencil() const { return stencil_; }
    std::span<const double> weight_sums() const { return sums_; }

    /// Explicit N_f with weights w_fi (zero-weight pairs are never present).
    struct Entry {
        std::size_t index;
        double weight;
    };
    std::vector<Entry> neighbors(std::size_t f) const;

    /// rho_v -> rho_f.
    DensityField apply(std::span<const double> rho_v) const;

    /// Normalized averaging W x (no complement); apply(x) == 1 - W x.
    DensityField average(std::span<const double> x) const;

    /// Gradient w.r.t. rho_v given a gradient w.r.t. rho_f. This is the exact
    /// transpose of apply's linearization, so it carries the minus sign.
    DensityField backprop(std::span<const double> grad_f) const;

    /// W^T y.
    DensityField average_transpose(std::span<const double> y) const;

private:
    StructuredGrid grid_;
    double r_min_;
    std::vector<StencilEntry> stencil_;
    std::vector<double> sums_;
};

}  // namespace millopt
