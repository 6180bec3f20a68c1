#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "millopt/errors.hpp"
#include "millopt/filter.hpp"
#include "millopt/machining.hpp"

using namespace millopt;

namespace {

DensityField random_field(std::size_t n, unsigned seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    DensityField x(n);
    for (auto& v : x) v = u(rng);
    return x;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Direct reading of the membership rule: j is on the ray from e along -d when
// its center projects to t >= 0 and lies closer than d0 to the ray.
std::vector<std::size_t> brute_ray(const StructuredGrid& g, std::size_t e, const Vec3& d, double d0) {
    std::vector<std::pair<double, std::size_t>> hits;
    const Vec3 ce = g.center(e);
    for (std::size_t j = 0; j < g.element_count(); ++j) {
        const Vec3 cj = g.center(j);
        const Vec3 v{ce[0] - cj[0], ce[1] - cj[1], ce[2] - cj[2]};
        const double t = v[0] * d[0] + v[1] * d[1] + v[2] * d[2];
        if (t < 0.0) continue;
        const Vec3 perp{v[0] - t * d[0], v[1] - t * d[1], v[2] - t * d[2]};
        if (std::sqrt(perp[0] * perp[0] + perp[1] * perp[1] + perp[2] * perp[2]) < d0) {
            hits.push_back({t, j});
        }
    }
    std::sort(hits.begin(), hits.end());
    std::vector<std::size_t> out;
    for (const auto& h : hits) out.push_back(h.second);
    return out;
}

// Dense Jacobian d(composite)/d(rho_f) assembled from brute-force ray sets.
std::vector<std::vector<double>> dense_jacobian(const StructuredGrid& g, const std::vector<Vec3>& dirs,
                                                std::span<const double> rho_f) {
    const std::size_t n = g.element_count();
    std::vector<std::vector<std::vector<std::size_t>>> rays(dirs.size());
    std::vector<DensityField> s(dirs.size(), DensityField(n)), p(dirs.size(), DensityField(n));
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        for (std::size_t e = 0; e < n; ++e) {
            rays[i].push_back(brute_ray(g, e, dirs[i], kDefaultRayThreshold));
            for (std::size_t j : rays[i][e]) s[i][e] += heaviside1(rho_f[j]);
            p[i][e] = heaviside2(s[i][e]);
        }
    }
    std::vector<std::vector<double>> jac(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        for (std::size_t e = 0; e < n; ++e) {
            double others = 1.0;
            for (std::size_t k = 0; k < dirs.size(); ++k) {
                if (k != i) others *= p[k][e];
            }
            for (std::size_t j : rays[i][e]) {
                jac[e][j] += others * heaviside2_deriv(s[i][e]) * heaviside1_deriv(rho_f[j]);
            }
        }
    }
    return jac;
}

struct Chain {
    std::vector<MillingDirection> dirs;
    std::vector<DirectionProjection> cache;
    DensityField composite;
};

Chain run_chain(const StructuredGrid& g, const std::vector<Vec3>& dvec, std::span<const double> rho_f) {
    Chain c;
    std::vector<DensityField> fields;
    for (const auto& d : dvec) {
        c.dirs.emplace_back(g, d);
        c.cache.push_back(project_direction(c.dirs.back(), rho_f));
        fields.push_back(c.cache.back().field);
    }
    c.composite = combine_directions(fields);
    return c;
}

const double kInvSqrt2 = 1.0 / std::sqrt(2.0);

}  // namespace

TEST(Heaviside, Values) {
    EXPECT_DOUBLE_EQ(heaviside1(0.3), 0.5);
    EXPECT_NEAR(heaviside1(0.0), 0.002473, 5e-7);
    EXPECT_NEAR(heaviside1(0.0), (std::tanh(-3.0) + 1.0) / 2.0, 1e-16);
    EXPECT_DOUBLE_EQ(heaviside1_deriv(0.3), 5.0);
    EXPECT_DOUBLE_EQ(heaviside2(0.5), 0.5);
    EXPECT_NEAR(heaviside2(0.0), 0.002473, 5e-7);
    EXPECT_DOUBLE_EQ(heaviside2_deriv(0.5), 3.0);
    for (double x : {-1.0, 0.0, 0.2, 0.9, 2.0}) {
        EXPECT_GT(heaviside1(x), 0.0);
        EXPECT_LT(heaviside1(x), 1.0);
        EXPECT_GT(heaviside2_deriv(x), 0.0);
        const double h = 1e-6;
        EXPECT_NEAR(heaviside1_deriv(x), (heaviside1(x + h) - heaviside1(x - h)) / (2 * h), 1e-7);
        EXPECT_NEAR(heaviside2_deriv(x), (heaviside2(x + h) - heaviside2(x - h)) / (2 * h), 1e-7);
    }
    EXPECT_EQ(heaviside1_deriv(1e6), 0.0);
}

TEST(Heaviside, Validation) {
    HeavisideParams p;
    EXPECT_NO_THROW(p.validate());
    p.outer.slope = 0.0;
    EXPECT_THROW(p.validate(), ValidationError);
}

TEST(RaySets, ColumnFromTop) {
    const StructuredGrid g{1, 4};
    const MillingDirection d(g, {0, -1, 0});
    EXPECT_TRUE(d.axis_aligned());
    EXPECT_EQ(d.ray_set(0), (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_EQ(d.ray_set(3), (std::vector<std::size_t>{3}));
}

TEST(RaySets, SingleElement) {
    const StructuredGrid g{1, 1};
    for (const Vec3& v : {Vec3{1, 0, 0}, Vec3{0, -1, 0}, Vec3{kInvSqrt2, kInvSqrt2, 0}}) {
        EXPECT_EQ(MillingDirection(g, v).ray_set(0), (std::vector<std::size_t>{0}));
    }
}

TEST(RaySets, RowInPositiveX) {
    const StructuredGrid g{3, 3};
    const MillingDirection d(g, {1, 0, 0});
    EXPECT_EQ(d.ray_set(g.index(2, 1)),
              (std::vector<std::size_t>{g.index(2, 1), g.index(1, 1), g.index(0, 1)}));
}

TEST(RaySets, DiagonalMatchesBruteForce) {
    const StructuredGrid g{5, 5};
    const Vec3 dir{kInvSqrt2, kInvSqrt2, 0};
    const MillingDirection d(g, dir, 0.5);
    EXPECT_FALSE(d.axis_aligned());
    for (std::size_t e = 0; e < g.element_count(); ++e) {
        EXPECT_EQ(d.ray_set(e), brute_ray(g, e, dir, 0.5)) << e;
    }
}

TEST(RaySets, ObliqueMatchesBruteForce) {
    const StructuredGrid g{7, 6, 5};
    const std::vector<Vec3> dirs = {normalized({2, 1, 0}), normalized({1, -1, 1}), normalized({0, 3, -2}),
                                    {0, 0, -1}};
    for (const Vec3& dir : dirs) {
        for (double d0 : {0.5, 0.8}) {
            const MillingDirection d(g, dir, d0);
            for (std::size_t e = 0; e < g.element_count(); ++e) {
                ASSERT_EQ(d.ray_set(e), brute_ray(g, e, dir, d0)) << e;
            }
        }
    }
}

TEST(RaySets, ContainsSelfFirst) {
    const StructuredGrid g{6, 5, 4};
    for (const Vec3& v : {Vec3{0, 1, 0}, normalized({1, 1, 1}), normalized({-3, 1, 2})}) {
        const MillingDirection d(g, v);
        for (std::size_t e = 0; e < g.element_count(); ++e) {
            const auto r = d.ray_set(e);
            ASSERT_FALSE(r.empty());
            EXPECT_EQ(r.front(), e);
            EXPECT_EQ(d.ray_length(e), r.size());
        }
    }
}

TEST(RaySets, NestingForConfiguredDirections) {
    const StructuredGrid g2{10, 10};
    for (const Vec3& v : {Vec3{1, 0, 0}, Vec3{-1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, -1, 0},
                          Vec3{kInvSqrt2, kInvSqrt2, 0}, Vec3{kInvSqrt2, -kInvSqrt2, 0}}) {
        EXPECT_TRUE(MillingDirection(g2, v).rays_nested());
    }
    const StructuredGrid g3{10, 10, 10};
    for (const Vec3& v : {Vec3{0, 0, 1}, Vec3{0, 0, -1}, Vec3{1, 0, 0}, Vec3{0, -1, 0},
                          normalized({1, 1, 1}), normalized({1, 0, -1})}) {
        EXPECT_TRUE(MillingDirection(g3, v).rays_nested());
    }
}

TEST(RaySets, Validation) {
    const StructuredGrid g{3, 3};
    EXPECT_THROW(MillingDirection(g, {1, 1, 0}), ValidationError);
    EXPECT_THROW(MillingDirection(g, {0, 0, 1}), ValidationError);
    EXPECT_THROW(MillingDirection(g, {1, 0, 0}, 0.0), ValidationError);
    EXPECT_THROW(MillingDirection(g, {1, 0, 0}, 1.5), ValidationError);
    EXPECT_THROW(normalized({0, 0, 0}), ValidationError);
}

TEST(Projection, ShadowFillsVoidBelowSolid) {
    const StructuredGrid g{1, 3};
    const MillingDirection d(g, {0, -1, 0});
    const auto p = project_direction(d, DensityField{0.0, 1.0, 0.0});
    const double h0 = heaviside1(0.0), h1 = heaviside1(1.0);
    EXPECT_NEAR(p.sums[0], h0 + h1 + h0, 1e-15);
    EXPECT_NEAR(p.sums[1], h1 + h0, 1e-15);
    EXPECT_NEAR(p.sums[2], h0, 1e-15);
    EXPECT_NEAR(p.sums[0], 1.0049, 1e-4);
    EXPECT_NEAR(p.field[0], 0.9976, 1e-4);
    EXPECT_NEAR(p.field[1], 0.9976, 1e-4);
    EXPECT_NEAR(p.field[2], 0.0025, 1e-4);
}

TEST(Projection, SingleElementFloor) {
    const StructuredGrid g{1, 1};
    const MillingDirection d(g, {1, 0, 0});
    const auto p = project_direction(d, DensityField{0.0});
    EXPECT_NEAR(p.field[0], heaviside2(heaviside1(0.0)), 1e-16);
    EXPECT_NEAR(p.field[0], 0.00254, 1e-5);
}

TEST(Projection, FastPathMatchesGeneric) {
    const StructuredGrid g{7, 5, 6};
    const DensityField rho_f = random_field(g.element_count(), 21);
    for (const Vec3& v : {Vec3{1, 0, 0}, Vec3{-1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, -1, 0}, Vec3{0, 0, 1},
                          Vec3{0, 0, -1}}) {
        const MillingDirection d(g, v);
        const auto fast = project_direction(d, rho_f);
        const auto slow = project_direction_generic(d, rho_f);
        for (std::size_t e = 0; e < rho_f.size(); ++e) {
            EXPECT_NEAR(fast.sums[e], slow.sums[e], 1e-14);
            EXPECT_NEAR(fast.field[e], slow.field[e], 1e-14);
        }
    }
}

TEST(Projection, MonotoneAlongColumns) {
    const StructuredGrid g{9, 8, 7};
    const DensityField rho_f = random_field(g.element_count(), 8);
    for (const Vec3& v : {Vec3{1, 0, 0}, Vec3{0, -1, 0}, Vec3{0, 0, 1}}) {
        const MillingDirection d(g, v);
        const auto p = project_direction(d, rho_f);
        EXPECT_LE(monotonicity_violation(d, p.field), 1e-15);
        for (std::size_t c = 0; c < d.column_count(); ++c) {
            const auto col = d.column(c);
            for (std::size_t k = 1; k < col.size(); ++k) EXPECT_GE(p.field[col[k]], p.field[col[k - 1]]);
        }
    }
    const MillingDirection diag(g, normalized({1, 1, 1}));
    EXPECT_LE(monotonicity_violation(diag, project_direction(diag, rho_f).field), 1e-15);
}

TEST(Projection, MonotoneOperatorAndRange) {
    const StructuredGrid g{6, 6};
    const MillingDirection d(g, {kInvSqrt2, -kInvSqrt2, 0});
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const DensityField rho_f = random_field(g.element_count(), 50 + trial);
        DensityField bumped = rho_f;
        bumped[rng() % bumped.size()] += 0.1;
        const auto a = project_direction(d, rho_f);
        const auto b = project_direction(d, bumped);
        for (std::size_t e = 0; e < rho_f.size(); ++e) {
            EXPECT_GE(b.field[e], a.field[e]);
            EXPECT_GT(a.field[e], 0.0);
            EXPECT_LE(a.field[e], 1.0);
        }
    }
}

TEST(Projection, ViolationDetectsHole) {
    const StructuredGrid g{1, 3};
    const MillingDirection down(g, {0, -1, 0});
    EXPECT_DOUBLE_EQ(monotonicity_violation(down, DensityField{0.0, 1.0, 0.0}), 1.0);
    EXPECT_DOUBLE_EQ(monotonicity_violation(down, DensityField{1.0, 1.0, 0.0}), 0.0);
}

TEST(Combine, Products) {
    const DensityField a{0.3, 0.7};
    EXPECT_EQ(combine_directions(std::vector<DensityField>{a}), a);
    EXPECT_EQ(combine_directions(std::vector<DensityField>{{1, 1}, {1, 0}}), (DensityField{1, 0}));
    const double c = 0.9975;
    const std::vector<DensityField> six(6, DensityField{c, c, c});
    for (double v : combine_directions(six)) EXPECT_NEAR(v, std::pow(c, 6), 1e-15);
    EXPECT_THROW(combine_directions(std::vector<DensityField>{}), ValidationError);
    EXPECT_THROW(combine_directions(std::vector<DensityField>{{1, 1}, {1}}), ValidationError);
}

TEST(Backprop, SingleElementChainIsMinusFifteen) {
    const StructuredGrid g{1, 1};
    const FilterKernel identity(g, 0.5);
    const DensityField rho_v{0.7};
    const DensityField rho_f = identity.apply(rho_v);
    EXPECT_NEAR(rho_f[0], 0.3, 1e-15);
    const std::vector<MillingDirection> dirs{MillingDirection(g, {0, 1, 0})};
    const std::vector<DirectionProjection> cache{project_direction(dirs[0], rho_f)};
    const DensityField g_f = projection_backprop(dirs, rho_f, cache, DensityField{1.0});
    const DensityField g_v = identity.backprop(g_f);
    EXPECT_NEAR(g_v[0], -15.0, 1e-12);
}

TEST(Backprop, ZeroSeedGivesZero) {
    const StructuredGrid g{4, 4};
    const DensityField rho_f = random_field(g.element_count(), 2);
    const Chain c = run_chain(g, {{1, 0, 0}, {0, -1, 0}}, rho_f);
    for (double v : projection_backprop(c.dirs, rho_f, c.cache, DensityField(16, 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(Backprop, FullChainMatchesFiniteDifference) {
    const StructuredGrid g{6, 6};
    const FilterKernel filter(g, 1.6);
    const std::vector<Vec3> dvec{{0, 1, 0}, {kInvSqrt2, -kInvSqrt2, 0}};
    const std::size_t n = g.element_count();
    const DensityField rho_v = random_field(n, 31);
    const DensityField w = random_field(n, 32, -1, 1);
    auto objective = [&](const DensityField& v) {
        const DensityField f = filter.apply(v);
        return dot(run_chain(g, dvec, f).composite, w);
    };
    const DensityField rho_f = filter.apply(rho_v);
    const Chain c = run_chain(g, dvec, rho_f);
    const DensityField grad = filter.backprop(projection_backprop(c.dirs, rho_f, c.cache, w));
    double scale = 0.0;
    for (double v : grad) scale = std::max(scale, std::abs(v));
    const double h = 1e-6;
    for (std::size_t i = 0; i < n; ++i) {
        DensityField p = rho_v, m = rho_v;
        p[i] += h;
        m[i] -= h;
        const double fd = (objective(p) - objective(m)) / (2 * h);
        EXPECT_LT(std::abs(fd - grad[i]) / scale, 1e-6) << i;
    }
}

TEST(Backprop, GenericAdjointMatchesFastPath) {
    const StructuredGrid g{5, 4, 3};
    const DensityField rho_f = random_field(g.element_count(), 41);
    const DensityField seed = random_field(g.element_count(), 42, -1, 1);
    for (const Vec3& v : {Vec3{0, 0, 1}, Vec3{-1, 0, 0}}) {
        const std::vector<MillingDirection> dirs{MillingDirection(g, v)};
        const std::vector<DirectionProjection> cache{project_direction(dirs[0], rho_f)};
        const DensityField fast = projection_backprop(dirs, rho_f, cache, seed);
        const DensityField slow = direction_backprop_generic(dirs[0], rho_f, cache[0], seed);
        for (std::size_t e = 0; e < seed.size(); ++e) EXPECT_NEAR(fast[e], slow[e], 1e-13);
    }
}

TEST(Backprop, TransposeOfDenseJacobian) {
    const StructuredGrid g{5, 5};
    const std::vector<Vec3> dvec{{1, 0, 0}, {0, -1, 0}, {kInvSqrt2, kInvSqrt2, 0}};
    const std::size_t n = g.element_count();
    const DensityField rho_f = random_field(n, 61);
    const auto jac = dense_jacobian(g, dvec, rho_f);
    const Chain c = run_chain(g, dvec, rho_f);
    for (unsigned s = 0; s < 4; ++s) {
        const DensityField u = random_field(n, 70 + s, -1, 1);
        const DensityField v = random_field(n, 80 + s, -1, 1);
        DensityField ju(n, 0.0);
        for (std::size_t e = 0; e < n; ++e) {
            for (std::size_t k = 0; k < n; ++k) ju[e] += jac[e][k] * u[k];
        }
        const DensityField jtv = projection_backprop(c.dirs, rho_f, c.cache, v);
        const double lhs = dot(ju, v), rhs = dot(u, jtv);
        EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
        for (std::size_t k = 0; k < n; ++k) {
            double col = 0.0;
            for (std::size_t e = 0; e < n; ++e) col += jac[e][k] * v[e];
            EXPECT_NEAR(jtv[k], col, 1e-12 * (1.0 + std::abs(col)));
        }
    }
}
