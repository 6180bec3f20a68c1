#include "millopt/machining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <utility>

#include "millopt/errors.hpp"

namespace millopt {

namespace {

constexpr double kUnitTolerance = 1e-12;
// Slack on the membership inequalities so that lattice points lying exactly
// on the ray start plane or on the cutoff cylinder are classified the same
// way regardless of rounding.
constexpr double kMembershipSlack = 1e-9;

double sech2(double z) {
    const double c = std::cosh(z);
    return std::isfinite(c) ? 1.0 / (c * c) : 0.0;
}

void check_length(std::size_t got, std::size_t n, const char* what) {
    if (got != n) {
        throw ValidationError(std::string(what) + ": expected " + std::to_string(n) +
                              " values, got " + std::to_string(got));
    }
}

}  // namespace

double SmoothStep::value(double x) const { return 0.5 * (std::tanh(slope * x - shift) + 1.0); }

double SmoothStep::derivative(double x) const { return 0.5 * slope * sech2(slope * x - shift); }

void HeavisideParams::validate() const {
    if (!(inner.slope > 0.0) || !std::isfinite(inner.slope) || !std::isfinite(inner.shift)) {
        throw ValidationError("inner Heaviside slope must be positive and finite");
    }
    if (!(outer.slope > 0.0) || !std::isfinite(outer.slope) || !std::isfinite(outer.shift)) {
        throw ValidationError("outer Heaviside slope must be positive and finite");
    }
}

double heaviside1(double x) { return HeavisideParams{}.inner.value(x); }
double heaviside1_deriv(double x) { return HeavisideParams{}.inner.derivative(x); }
double heaviside2(double x) { return HeavisideParams{}.outer.value(x); }
double heaviside2_deriv(double x) { return HeavisideParams{}.outer.derivative(x); }

Vec3 normalized(const Vec3& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw ValidationError("direction vector must be nonzero and finite");
    }
    return {v[0] / n, v[1] / n, v[2] / n};
}

// ---------------------------------------------------------------------------
// MillingDirection

MillingDirection::MillingDirection(const StructuredGrid& grid, const Vec3& direction,
                                   double threshold)
    : grid_(grid), dir_(direction), threshold_(threshold) {
    const double norm =
        std::sqrt(dir_[0] * dir_[0] + dir_[1] * dir_[1] + dir_[2] * dir_[2]);
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > kUnitTolerance) {
        throw ValidationError("milling direction must be a unit vector");
    }
    if (grid.dimension() == 2 && dir_[2] != 0.0) {
        throw ValidationError("milling direction for a 2D grid must have zero z component");
    }
    if (!(threshold > 0.0) || threshold > 1.0) {
        throw ValidationError("ray threshold must lie in (0, 1]");
    }
    for (int a = 0; a < 3; ++a) {
        if (std::abs(std::abs(dir_[a]) - 1.0) <= kUnitTolerance) {
            axis_ = a;
            // Rays run along -direction; a negative axis component therefore
            // marches toward the high-index face.
            entry_at_max_ = dir_[a] < 0.0;
        }
    }
    if (axis_ < 0) build_oblique();
}

void MillingDirection::build_oblique() {
    const Vec3 u{-dir_[0], -dir_[1], -dir_[2]};
    const int dims = grid_.dimension();
    int a = 0;
    for (int b = 1; b < dims; ++b) {
        if (std::abs(u[b]) > std::abs(u[a])) a = b;
    }
    const int sgn = u[a] > 0.0 ? 1 : -1;
    const double ua = std::abs(u[a]);
    // Any member in slice k lies within 1 + sqrt(3) of the ray point in that
    // slice, so a +-3 lattice window around it is exhaustive.
    constexpr int kWindow = 3;
    int others[2] = {-1, -1};
    for (int b = 0, n = 0; b < dims; ++b) {
        if (b != a) others[n++] = b;
    }
    const double cutoff2 = threshold_ * threshold_;

    const std::size_t n = grid_.element_count();
    offsets_.assign(n + 1, 0);
    std::vector<std::pair<double, std::size_t>> found;
    for (std::size_t e = 0; e < n; ++e) {
        const Index3 c = grid_.coords(e);
        found.clear();
        for (int k = 0;; ++k) {
            const int slice = c[a] + sgn * k;
            if (slice < 0 || slice >= grid_.extents()[a]) break;
            const double t_slice = k / ua;
            int lo[2] = {0, 0}, hi[2] = {0, 0};
            for (int m = 0; m < 2; ++m) {
                if (others[m] < 0) continue;
                const int centre = static_cast<int>(std::lround(t_slice * u[others[m]]));
                lo[m] = centre - kWindow;
                hi[m] = centre + kWindow;
            }
            for (int o1 = lo[1]; o1 <= hi[1]; ++o1) {
                for (int o0 = lo[0]; o0 <= hi[0]; ++o0) {
                    Index3 v{0, 0, 0};
                    v[a] = sgn * k;
                    if (others[0] >= 0) v[others[0]] = o0;
                    if (others[1] >= 0) v[others[1]] = o1;
                    const Index3 q{c[0] + v[0], c[1] + v[1], c[2] + v[2]};
                    if (!grid_.contains(q)) continue;
                    const double t = v[0] * u[0] + v[1] * u[1] + v[2] * u[2];
                    if (t < -kMembershipSlack) continue;
                    const double w0 = v[0] - t * u[0];
                    const double w1 = v[1] - t * u[1];
                    const double w2 = v[2] - t * u[2];
                    if (w0 * w0 + w1 * w1 + w2 * w2 >= cutoff2 - kMembershipSlack) continue;
                    found.emplace_back(std::max(t, 0.0), grid_.index(q));
                }
            }
        }
        std::sort(found.begin(), found.end());
        for (const auto& [t, j] : found) members_.push_back(static_cast<std::uint32_t>(j));
        offsets_[e + 1] = members_.size();
    }
}

std::size_t MillingDirection::column_count() const {
    if (!axis_aligned()) throw ValidationError("columns exist only for axis-aligned directions");
    return grid_.element_count() / static_cast<std::size_t>(grid_.extents()[axis_]);
}

MillingDirection::ColumnLayout MillingDirection::column_layout(std::size_t c) const {
    const auto nx = static_cast<std::size_t>(grid_.nx());
    const auto ny = static_cast<std::size_t>(grid_.ny());
    std::size_t base = 0;
    std::size_t stride = 1;
    switch (axis_) {
        case 0:
            base = c * nx;
            stride = 1;
            break;
        case 1:
            base = (c % nx) + (c / nx) * nx * ny;
            stride = nx;
            break;
        default:
            base = c;
            stride = nx * ny;
            break;
    }
    const auto len = static_cast<std::size_t>(grid_.extents()[axis_]);
    if (entry_at_max_) {
        return {base + (len - 1) * stride, -static_cast<std::ptrdiff_t>(stride), len};
    }
    return {base, static_cast<std::ptrdiff_t>(stride), len};
}

std::vector<std::size_t> MillingDirection::column(std::size_t c) const {
    if (c >= column_count()) throw ValidationError("column index out of range");
    const ColumnLayout col = column_layout(c);
    std::vector<std::size_t> out(col.length);
    for (std::size_t q = 0; q < col.length; ++q) {
        out[q] = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(col.first) +
                                          static_cast<std::ptrdiff_t>(q) * col.step);
    }
    return out;
}

std::vector<std::size_t> MillingDirection::ray_set(std::size_t e) const {
    if (e >= grid_.element_count()) throw ValidationError("element index out of range");
    if (!axis_aligned()) {
        return {members_.begin() + static_cast<std::ptrdiff_t>(offsets_[e]),
                members_.begin() + static_cast<std::ptrdiff_t>(offsets_[e + 1])};
    }
    const Index3 c = grid_.coords(e);
    const int len = grid_.extents()[axis_];
    std::vector<std::size_t> out;
    Index3 q = c;
    const int step = entry_at_max_ ? 1 : -1;
    for (; q[axis_] >= 0 && q[axis_] < len; q[axis_] += step) out.push_back(grid_.index(q));
    return out;
}

std::size_t MillingDirection::ray_length(std::size_t e) const {
    if (!axis_aligned()) return offsets_[e + 1] - offsets_[e];
    const int pos = grid_.coords(e)[axis_];
    const int len = grid_.extents()[axis_];
    return static_cast<std::size_t>(entry_at_max_ ? len - pos : pos + 1);
}

std::size_t MillingDirection::max_ray_length() const {
    if (axis_aligned()) return static_cast<std::size_t>(grid_.extents()[axis_]);
    std::size_t best = 0;
    for (std::size_t e = 0; e < grid_.element_count(); ++e) best = std::max(best, ray_length(e));
    return best;
}

bool MillingDirection::rays_nested() const {
    if (axis_aligned()) return true;
    const std::size_t n = grid_.element_count();
    for (std::size_t e = 0; e < n; ++e) {
        const auto ray = ray_set(e);
        const std::set<std::size_t> members(ray.begin(), ray.end());
        for (std::size_t j : ray) {
            for (std::size_t k : ray_set(j)) {
                if (!members.count(k)) return false;
            }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Forward projection

namespace {

DensityField inner_values(std::span<const double> rho_f, const HeavisideParams& params) {
    DensityField h(rho_f.size());
    for (std::size_t j = 0; j < rho_f.size(); ++j) h[j] = params.inner.value(rho_f[j]);
    return h;
}

std::size_t column_element(const MillingDirection::ColumnLayout& col, std::size_t q) {
    return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(col.first) +
                                    static_cast<std::ptrdiff_t>(q) * col.step);
}

}  // namespace

DirectionProjection project_direction(const MillingDirection& dir, std::span<const double> rho_f,
                                      const HeavisideParams& params) {
    if (!dir.axis_aligned()) return project_direction_generic(dir, rho_f, params);
    const std::size_t n = dir.grid().element_count();
    check_length(rho_f.size(), n, "fictitious field");
    const DensityField h = inner_values(rho_f, params);
    DirectionProjection out{DensityField(n), DensityField(n)};
    const std::size_t columns = dir.column_count();
    for (std::size_t c = 0; c < columns; ++c) {
        const auto col = dir.column_layout(c);
        double s = 0.0;
        for (std::size_t q = 0; q < col.length; ++q) {
            const std::size_t e = column_element(col, q);
            s += h[e];
            out.sums[e] = s;
            out.field[e] = params.outer.value(s);
        }
    }
    return out;
}

DirectionProjection project_direction_generic(const MillingDirection& dir,
                                              std::span<const double> rho_f,
                                              const HeavisideParams& params) {
    const std::size_t n = dir.grid().element_count();
    check_length(rho_f.size(), n, "fictitious field");
    const DensityField h = inner_values(rho_f, params);
    DirectionProjection out{DensityField(n), DensityField(n)};
    for (std::size_t e = 0; e < n; ++e) {
        const auto ray = dir.ray_set(e);
        // Accumulate from the entry boundary toward e.
        double s = 0.0;
        for (auto it = ray.rbegin(); it != ray.rend(); ++it) s += h[*it];
        out.sums[e] = s;
        out.field[e] = params.outer.value(s);
    }
    return out;
}

DensityField combine_directions(std::span<const DensityField> fields) {
    if (fields.empty()) throw ValidationError("combine_directions needs at least one field");
    const std::size_t n = fields.front().size();
    DensityField out(n, 1.0);
    for (const auto& f : fields) {
        check_length(f.size(), n, "direction field");
        for (std::size_t e = 0; e < n; ++e) out[e] *= f[e];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adjoint

namespace {

// Accumulates sum_{e : j in M(e)} a(e) into acc(j).
void scatter_over_rays(const MillingDirection& dir, std::span<const double> a,
                       std::span<double> acc) {
    if (dir.axis_aligned()) {
        const std::size_t columns = dir.column_count();
        for (std::size_t c = 0; c < columns; ++c) {
            const auto col = dir.column_layout(c);
            double suffix = 0.0;
            for (std::size_t q = col.length; q-- > 0;) {
                const std::size_t e = column_element(col, q);
                suffix += a[e];
                acc[e] += suffix;
            }
        }
        return;
    }
    const std::size_t n = dir.grid().element_count();
    for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t j : dir.ray_set(e)) acc[j] += a[e];
    }
}

}  // namespace

DensityField projection_backprop(std::span<const MillingDirection> dirs,
                                 std::span<const double> rho_f,
                                 std::span<const DirectionProjection> cache,
                                 std::span<const double> grad_composite,
                                 const HeavisideParams& params) {
    if (dirs.empty()) throw ValidationError("projection_backprop needs at least one direction");
    if (cache.size() != dirs.size()) {
        throw ValidationError("projection cache does not match the direction list");
    }
    const std::size_t n = rho_f.size();
    check_length(grad_composite.size(), n, "composite gradient");

    DensityField grad_f(n, 0.0);
    DensityField a(n);
    DensityField acc(n);
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        for (std::size_t e = 0; e < n; ++e) {
            double others = 1.0;
            for (std::size_t k = 0; k < dirs.size(); ++k) {
                if (k != i) others *= cache[k].field[e];
            }
            a[e] = grad_composite[e] * others * params.outer.derivative(cache[i].sums[e]);
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        scatter_over_rays(dirs[i], a, acc);
        for (std::size_t j = 0; j < n; ++j) grad_f[j] += params.inner.derivative(rho_f[j]) * acc[j];
    }
    return grad_f;
}

DensityField direction_backprop_generic(const MillingDirection& dir,
                                        std::span<const double> rho_f,
                                        const DirectionProjection& cache,
                                        std::span<const double> grad_field,
                                        const HeavisideParams& params) {
    const std::size_t n = dir.grid().element_count();
    check_length(rho_f.size(), n, "fictitious field");
    check_length(grad_field.size(), n, "direction gradient");
    DensityField out(n, 0.0);
    for (std::size_t e = 0; e < n; ++e) {
        const double a = grad_field[e] * params.outer.derivative(cache.sums[e]);
        for (std::size_t j : dir.ray_set(e)) out[j] += a;
    }
    for (std::size_t j = 0; j < n; ++j) out[j] *= params.inner.derivative(rho_f[j]);
    return out;
}

double monotonicity_violation(const MillingDirection& dir, std::span<const double> field) {
    const std::size_t n = dir.grid().element_count();
    check_length(field.size(), n, "density field");
    double worst = 0.0;
    if (dir.axis_aligned()) {
        const std::size_t columns = dir.column_count();
        for (std::size_t c = 0; c < columns; ++c) {
            const auto col = dir.column_layout(c);
            double shallow_max = -std::numeric_limits<double>::infinity();
            for (std::size_t q = 0; q < col.length; ++q) {
                const double v = field[column_element(col, q)];
                worst = std::max(worst, shallow_max - v);
                shallow_max = std::max(shallow_max, v);
            }
        }
        return worst;
    }
    for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t j : dir.ray_set(e)) worst = std::max(worst, field[j] - field[e]);
    }
    return worst;
}

}  // namespace millopt
