#include "millopt/filter.hpp"

#include <cmath>
#include <string>

#include "millopt/errors.hpp"

namespace millopt {

namespace {

void check_length(std::span<const double> x, std::size_t n, const char* what) {
    if (x.size() != n) {
        throw ValidationError(std::string(what) + ": expected " + std::to_string(n) +
                              " values, got " + std::to_string(x.size()));
    }
}

}  // namespace

FilterKernel::FilterKernel(const StructuredGrid& grid, double r_min) : grid_(grid), r_min_(r_min) {
    if (!(r_min > 0.0) || !std::isfinite(r_min)) {
        throw ValidationError("filter radius must be positive and finite");
    }
    const int reach = static_cast<int>(std::ceil(r_min));
    const int reach_z = grid.dimension() == 3 ? reach : 0;
    for (int dz = -reach_z; dz <= reach_z; ++dz) {
        for (int dy = -reach; dy <= reach; ++dy) {
            for (int dx = -reach; dx <= reach; ++dx) {
                const double dist = std::sqrt(double(dx * dx + dy * dy + dz * dz));
                if (dist < r_min) stencil_.push_back({{dx, dy, dz}, r_min - dist});
            }
        }
    }

    const std::size_t n = grid.element_count();
    sums_.assign(n, 0.0);
    for (std::size_t f = 0; f < n; ++f) {
        const Index3 c = grid.coords(f);
        double s = 0.0;
        for (const auto& st : stencil_) {
            const Index3 q{c[0] + st.offset[0], c[1] + st.offset[1], c[2] + st.offset[2]};
            if (grid.contains(q)) s += st.weight;
        }
        sums_[f] = s;
    }
}

std::vector<FilterKernel::Entry> FilterKernel::neighbors(std::size_t f) const {
    const Index3 c = grid_.coords(f);
    std::vector<Entry> out;
    for (const auto& st : stencil_) {
        const Index3 q{c[0] + st.offset[0], c[1] + st.offset[1], c[2] + st.offset[2]};
        if (grid_.contains(q)) out.push_back({grid_.index(q), st.weight});
    }
    return out;
}

DensityField FilterKernel::average(std::span<const double> x) const {
    const std::size_t n = grid_.element_count();
    check_length(x, n, "filter input");
    DensityField out(n);
    for (std::size_t f = 0; f < n; ++f) {
        const Index3 c = grid_.coords(f);
        double acc = 0.0;
        for (const auto& st : stencil_) {
            const Index3 q{c[0] + st.offset[0], c[1] + st.offset[1], c[2] + st.offset[2]};
            if (grid_.contains(q)) acc += st.weight * x[grid_.index(q)];
        }
        out[f] = acc / sums_[f];
    }
    return out;
}

DensityField FilterKernel::apply(std::span<const double> rho_v) const {
    const std::size_t n = grid_.element_count();
    check_length(rho_v, n, "void field");
    DensityField out(n);
    for (std::size_t f = 0; f < n; ++f) {
        const Index3 c = grid_.coords(f);
        double acc = 0.0;
        for (const auto& st : stencil_) {
            const Index3 q{c[0] + st.offset[0], c[1] + st.offset[1], c[2] + st.offset[2]};
            if (grid_.contains(q)) acc += st.weight * (1.0 - rho_v[grid_.index(q)]);
        }
        out[f] = acc / sums_[f];
    }
    return out;
}

DensityField FilterKernel::average_transpose(std::span<const double> y) const {
    const std::size_t n = grid_.element_count();
    check_length(y, n, "filter adjoint input");
    // Weights are symmetric, so (W^T y)(i) = sum_{f in N_i} w_if * y(f) / S_f.
    DensityField out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Index3 c = grid_.coords(i);
        double acc = 0.0;
        for (const auto& st : stencil_) {
            const Index3 q{c[0] + st.offset[0], c[1] + st.offset[1], c[2] + st.offset[2]};
            if (grid_.contains(q)) {
                const std::size_t f = grid_.index(q);
                acc += st.weight * y[f] / sums_[f];
            }
        }
        out[i] = acc;
    }
    return out;
}

DensityField FilterKernel::backprop(std::span<const double> grad_f) const {
    DensityField g = average_transpose(grad_f);
    for (double& v : g) v = -v;
    return g;
}

}  // namespace millopt
