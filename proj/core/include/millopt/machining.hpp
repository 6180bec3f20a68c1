#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "millopt/grid.hpp"

namespace millopt {

/// Smooth step (tanh(slope * x - shift) + 1) / 2.
struct SmoothStep {
    double slope;
    double shift;

    double value(double x) const;
    double derivative(double x) const;
};

/// The two smooth steps of the machining projection: `inner` maps each
/// fictitious density before accumulation along a ray, `outer` maps the
/// accumulated sum to the physical density.
struct HeavisideParams {
    SmoothStep inner{10.0, 3.0};
    SmoothStep outer{6.0, 3.0};

    /// Throws ValidationError unless both slopes are positive and finite.
    void validate() const;
};

double heaviside1(double x);
double heaviside1_deriv(double x);
double heaviside2(double x);
double heaviside2_deriv(double x);

/// Default perpendicular cutoff for ray membership, in element edges.
inline constexpr double kDefaultRayThreshold = 0.5;

/// Returns v / |v|; throws ValidationError for a zero or non-finite vector.
Vec3 normalized(const Vec3& v);

/// A tool insertion direction together with the ray set M(e) of every element.
///
/// `direction` points from the tool into the stock. M(e) holds the elements
/// met when marching from e along -direction to the boundary where the tool
/// enters: element j belongs to M(e) when its center projects onto the ray
/// {center(e) - t * direction, t >= 0} with t >= 0 and lies closer than
/// `threshold` to it. M(e) always starts with e and is ordered by increasing t.
///
/// Axis-aligned directions reduce to lattice columns; those are not stored
/// explicitly and the projection uses running sums along each column.
class MillingDirection {
public:
    /// Throws ValidationError if |direction| differs from 1 by more than 1e-12,
    /// if a 2D grid is given a direction with a z component, or if threshold is
    /// outside (0, 1].
    MillingDirection(const StructuredGrid& grid, const Vec3& direction,
                     double threshold = kDefaultRayThreshold);

    const StructuredGrid& grid() const { return grid_; }
    const Vec3& direction() const { return dir_; }
    double threshold() const { return threshold_; }
    bool axis_aligned() const { return axis_ >= 0; }

    /// M(e), ordered from e outward to the entry boundary.
    std::vector<std::size_t> ray_set(std::size_t e) const;
    std::size_t ray_length(std::size_t e) const;
    std::size_t max_ray_length() const;

    /// True when j in M(e) implies M(j) subset of M(e) for every e. Always
    /// true for axis-aligned and lattice-diagonal directions; oblique
    /// staircase rays can break it. O(N * L^2).
    bool rays_nested() const;

    /// Axis-aligned only: number of columns and the elements of column c,
    /// ordered from the entry boundary inward.
    std::size_t column_count() const;
    std::vector<std::size_t> column(std::size_t c) const;

    // Low-level column description for the fast paths.
    struct ColumnLayout {
        std::size_t first;   // element at the entry face
        std::ptrdiff_t step; // index increment moving inward
        std::size_t length;
    };
    ColumnLayout column_layout(std::size_t c) const;

private:
    void build_oblique();

    StructuredGrid grid_;
    Vec3 dir_;
    double threshold_;
    int axis_ = -1;           // axis index when axis-aligned
    bool entry_at_max_ = false;
    // CSR storage of M(e) for oblique directions.
    std::vector<std::size_t> offsets_;
    std::vector<std::uint32_t> members_;
};

/// Forward quantities of one direction, kept for the adjoint pass.
struct DirectionProjection {
    DensityField sums;   // s(e) = sum_{j in M(e)} H1(rho_f(j))
    DensityField field;  // rho_p(e) = H2(s(e))
};

/// rho_f -> rho_p for one direction. Uses column running sums when the
/// direction is axis-aligned.
DirectionProjection project_direction(const MillingDirection& dir, std::span<const double> rho_f,
                                      const HeavisideParams& params = {});

/// Same map evaluated directly from the ray sets, for any direction.
DirectionProjection project_direction_generic(const MillingDirection& dir,
                                              std::span<const double> rho_f,
                                              const HeavisideParams& params = {});

/// Elementwise product of the per-direction fields.
DensityField combine_directions(std::span<const DensityField> fields);

/// Gradient w.r.t. rho_f of a response whose gradient w.r.t. the composite
/// field is `grad_composite`. `cache[i]` must be the forward result of
/// `dirs[i]` at `rho_f`.
DensityField projection_backprop(std::span<const MillingDirection> dirs,
                                 std::span<const double> rho_f,
                                 std::span<const DirectionProjection> cache,
                                 std::span<const double> grad_composite,
                                 const HeavisideParams& params = {});

/// Reference adjoint of one direction computed from explicit ray sets:
/// returns d(response)/d(rho_f) given d(response)/d(rho_p) for that direction.
DensityField direction_backprop_generic(const MillingDirection& dir,
                                        std::span<const double> rho_f,
                                        const DirectionProjection& cache,
                                        std::span<const double> grad_field,
                                        const HeavisideParams& params = {});

/// Largest amount by which `field` decreases when moving deeper along the
/// insertion direction: max over e and j in M(e) of field(j) - field(e),
/// floored at 0. Zero means the field is machinable from this direction.
double monotonicity_violation(const MillingDirection& dir, std::span<const double> field);

}  // namespace millopt
