#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "millopt/errors.hpp"
#include "millopt/fea.hpp"

using namespace millopt;

namespace {

DensityField random_field(std::size_t n, unsigned seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    DensityField x(n);
    for (auto& v : x) v = u(rng);
    return x;
}

// Closed-form bilinear plane-stress stiffness, counter-clockwise nodes from
// the lower-left corner.
Eigen::MatrixXd analytic_q4(double nu) {
    const double k[8] = {0.5 - nu / 6,         0.125 + nu / 8, -0.25 - nu / 12, -0.125 + 3 * nu / 8,
                         -0.25 + nu / 12,      -0.125 - nu / 8, nu / 6,          0.125 - 3 * nu / 8};
    const int idx[8][8] = {{0, 1, 2, 3, 4, 5, 6, 7}, {1, 0, 7, 6, 5, 4, 3, 2}, {2, 7, 0, 5, 6, 3, 4, 1},
                           {3, 6, 5, 0, 7, 2, 1, 4}, {4, 5, 6, 7, 0, 1, 2, 3}, {5, 4, 3, 2, 1, 0, 7, 6},
                           {6, 3, 4, 1, 2, 7, 0, 5}, {7, 2, 1, 4, 3, 6, 5, 0}};
    Eigen::MatrixXd ke(8, 8);
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) ke(i, j) = k[idx[i][j]] / (1 - nu * nu);
    }
    return ke;
}

int zero_modes(const Eigen::MatrixXd& k) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
    int zeros = 0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        EXPECT_GT(es.eigenvalues()(i), -1e-12);
        if (std::abs(es.eigenvalues()(i)) < 1e-10) ++zeros;
    }
    return zeros;
}

}  // namespace

TEST(ElementStiffness, QuadMatchesClosedForm) {
    const MaterialModel m;
    const Eigen::MatrixXd k0 = element_stiffness(m, 2);
    ASSERT_EQ(k0.rows(), 8);
    EXPECT_NEAR(k0(0, 0), (0.5 - 0.3 / 6) / (1 - 0.09), 1e-14);
    EXPECT_NEAR(k0(0, 0), 0.4945, 1e-4);
    EXPECT_LT((k0 - analytic_q4(0.3)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ((k0 - k0.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(zero_modes(k0), 3);
    Eigen::VectorXd tx(8), ty(8);
    for (int n = 0; n < 4; ++n) {
        tx.segment<2>(2 * n) << 1, 0;
        ty.segment<2>(2 * n) << 0, 1;
    }
    EXPECT_LT((k0 * tx).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((k0 * ty).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ElementStiffness, HexSymmetricWithSixRigidModes) {
    MaterialModel m;
    const Eigen::MatrixXd k0 = element_stiffness(m, 3);
    ASSERT_EQ(k0.rows(), 24);
    const double nu = m.poisson;
    EXPECT_NEAR(k0(0, 0), (2 - 3 * nu) / (9 * (1 + nu) * (1 - 2 * nu)), 1e-13);
    EXPECT_EQ((k0 - k0.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(zero_modes(k0), 6);
    for (int c = 0; c < 3; ++c) {
        Eigen::VectorXd t = Eigen::VectorXd::Zero(24);
        for (int n = 0; n < 8; ++n) t(3 * n + c) = 1;
        EXPECT_LT((k0 * t).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(Material, InterpolationAndValidation) {
    MaterialModel m;
    EXPECT_DOUBLE_EQ(m.modulus(1.0), 1.0);
    EXPECT_DOUBLE_EQ(m.modulus(0.0), 1e-9);
    EXPECT_NEAR(m.modulus_derivative(0.5), 3 * 0.25 * (1 - 1e-9), 1e-15);
    m.penal = 0.5;
    EXPECT_THROW(m.validate(), ValidationError);
    m = {};
    m.young_min = 2.0;
    EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Solve, SingleElementMatchesDenseSolve) {
    const StructuredGrid g{1, 1};
    // bottom edge fixed, unit upward load at the top-right node
    FeaProblem p{g, {0, 1, 2, 3}, {{g.node_index(1, 1), 1, 1.0}}, {}};
    const Eigen::MatrixXd k0 = element_stiffness(p.material, 2);
    const Eigen::MatrixXd kff = k0.bottomRightCorner(4, 4);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(4);
    f(1) = 1.0;  // node (1,1) is the third element node
    const Eigen::VectorXd u = kff.ldlt().solve(f);
    for (SolverKind kind : {SolverKind::direct, SolverKind::pcg}) {
        const SolveResult r = solve(p, DensityField{1.0}, {kind});
        EXPECT_NEAR(r.compliance, f.dot(u), 1e-10 * f.dot(u));
        // free dofs 4..7 are nodes (0,1) and (1,1); element order puts (1,1) first
        EXPECT_NEAR(r.displacement[6], u(0), 1e-10);
        EXPECT_NEAR(r.displacement[7], u(1), 1e-10);
        EXPECT_NEAR(r.displacement[4], u(2), 1e-10);
        EXPECT_NEAR(r.displacement[5], u(3), 1e-10);
    }
}

TEST(Solve, ZeroLoadGivesZeroDisplacement) {
    const StructuredGrid g{3, 2};
    FeaProblem p = make_problem(LoadCase::cantilever, g);
    p.loads[0].magnitude = 0.0;
    for (SolverKind kind : {SolverKind::direct, SolverKind::pcg, SolverKind::mgpcg}) {
        const SolveResult r = solve(p, DensityField(6, 0.5), {kind});
        EXPECT_EQ(r.compliance, 0.0);
        for (double u : r.displacement) EXPECT_EQ(u, 0.0);
    }
}

TEST(Solve, DoublingLoadQuadruplesCompliance) {
    const StructuredGrid g{6, 4};
    FeaProblem p = make_problem(LoadCase::cantilever, g);
    const DensityField rho = random_field(g.element_count(), 1, 0.2, 1.0);
    const double c1 = solve(p, rho).compliance;
    p.loads[0].magnitude *= 2.0;
    EXPECT_NEAR(solve(p, rho).compliance, 4.0 * c1, 1e-10 * c1);
}

TEST(Solve, EnergyIdentity) {
    for (const StructuredGrid& g : {StructuredGrid{8, 5}, StructuredGrid{6, 4, 4}}) {
        const FeaProblem p = make_problem(LoadCase::cantilever, g);
        const DensityField rho = random_field(g.element_count(), 2, 0.05, 1.0);
        const SolveResult r = solve(p, rho);
        double sum = 0.0;
        for (std::size_t e = 0; e < rho.size(); ++e) sum += p.material.modulus(rho[e]) * r.element_energy[e];
        EXPECT_NEAR(sum, r.compliance, 1e-8 * r.compliance);
        EXPECT_GT(r.compliance, 0.0);
    }
}

TEST(Solve, SolverKindsAgree) {
    const StructuredGrid g{16, 8, 8};
    const FeaProblem p = make_problem(LoadCase::cantilever, g);
    const DensityField rho = random_field(g.element_count(), 3, 0.1, 1.0);
    const double ref = solve(p, rho, {SolverKind::direct}).compliance;
    for (SolverKind kind : {SolverKind::pcg, SolverKind::mgpcg}) {
        const SolveResult r = solve(p, rho, {kind});
        EXPECT_NEAR(r.compliance, ref, 1e-7 * ref) << to_string(kind);
        EXPECT_LE(r.relative_residual, 1e-8);
    }
}

TEST(Solve, AutomaticTracksDirectAcrossDesignSequence) {
    const StructuredGrid g{12, 6, 6};
    const FeaProblem p = make_problem(LoadCase::cantilever, g);
    FeaSolver automatic(p);
    DensityField rho = random_field(g.element_count(), 5, 1e-3, 1.0);
    const DensityField step = random_field(g.element_count(), 6, -0.2, 0.2);
    for (int k = 0; k < 4; ++k) {
        const double ref = solve(p, rho, {SolverKind::direct}).compliance;
        EXPECT_NEAR(automatic.solve(rho).compliance, ref, 1e-6 * ref) << k;
        for (std::size_t e = 0; e < rho.size(); ++e) rho[e] = std::clamp(rho[e] + step[e], 1e-3, 1.0);
    }
}

TEST(Solve, WarmStartReusesPreviousSolution) {
    const StructuredGrid g{8, 4, 4};
    FeaSolver solver(make_problem(LoadCase::cantilever, g), {SolverKind::pcg});
    const DensityField rho = random_field(g.element_count(), 4, 0.3, 1.0);
    const SolveResult first = solver.solve(rho);
    const SolveResult again = solver.solve(rho);
    EXPECT_LT(again.iterations, first.iterations);
    EXPECT_NEAR(again.compliance, first.compliance, 1e-8 * first.compliance);
}

TEST(Solve, StiffnessOperatorSymmetric) {
    const StructuredGrid g{5, 4, 3};
    FeaSolver solver(make_problem(LoadCase::mbb, g));
    const DensityField rho = random_field(g.element_count(), 5);
    const std::size_t ndof = solver.problem().dof_count();
    const DensityField x = random_field(ndof, 6, -1, 1), y = random_field(ndof, 7, -1, 1);
    const auto kx = solver.apply_stiffness(rho, x);
    const auto ky = solver.apply_stiffness(rho, y);
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < ndof; ++i) {
        a += kx[i] * y[i];
        b += x[i] * ky[i];
    }
    EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
}

TEST(Sensitivity, MatchesFiniteDifference) {
    for (const StructuredGrid& g : {StructuredGrid{1, 1}, StructuredGrid{6, 6}, StructuredGrid{4, 3, 3}}) {
        FeaProblem p = make_problem(LoadCase::cantilever, g);
        if (g.element_count() == 1) p = FeaProblem{g, {0, 1, 2, 3}, {{2, 1, 1.0}}, {}};
        const DensityField rho = random_field(g.element_count(), 8, 0.2, 1.0);
        const SolveResult r = solve(p, rho, {SolverKind::direct});
        const DensityField dc = compliance_sensitivity(p, rho, r);
        const double h = 1e-6;
        for (std::size_t e = 0; e < rho.size(); ++e) {
            EXPECT_LE(dc[e], 0.0);
            DensityField a = rho, b = rho;
            a[e] += h;
            b[e] -= h;
            const double fd = (solve(p, a, {SolverKind::direct}).compliance -
                               solve(p, b, {SolverKind::direct}).compliance) / (2 * h);
            EXPECT_NEAR(dc[e], fd, 1e-5 * std::abs(fd) + 1e-12) << e;
        }
    }
}

TEST(Sensitivity, ZeroEnergyElementHasZeroSensitivity) {
    const StructuredGrid g{3, 1};
    FeaProblem p = make_problem(LoadCase::cantilever, g);
    p.loads[0].magnitude = 0.0;
    const DensityField rho(3, 0.7);
    const SolveResult r = solve(p, rho);
    for (double v : compliance_sensitivity(p, rho, r)) EXPECT_EQ(v, 0.0);
}

TEST(Volume, FractionAndGradient) {
    EXPECT_DOUBLE_EQ(volume_fraction(DensityField(10, 1.0)), 1.0);
    EXPECT_NEAR(volume_fraction(DensityField(7, 0.3)), 0.3, 1e-15);
    for (double v : volume_sensitivity(8)) EXPECT_DOUBLE_EQ(v, 0.125);
}

TEST(Problems, BenchmarkBoundaryConditions) {
    const StructuredGrid g2{10, 6};
    const FeaProblem c2 = make_problem(LoadCase::cantilever, g2);
    EXPECT_EQ(c2.fixed_dofs.size(), 2u * 7u);
    ASSERT_EQ(c2.loads.size(), 1u);
    EXPECT_EQ(c2.loads[0].node, g2.node_index(10, 0));
    EXPECT_EQ(c2.loads[0].component, 1);
    EXPECT_EQ(c2.loads[0].magnitude, -1.0);

    const StructuredGrid g3{12, 4, 4};
    const FeaProblem c3 = make_problem(LoadCase::cantilever, g3);
    EXPECT_EQ(c3.fixed_dofs.size(), 3u * 5u * 5u);
    EXPECT_EQ(c3.loads[0].node, g3.node_index(12, 0, 2));

    const FeaProblem m3 = make_problem(LoadCase::mbb, g3);
    EXPECT_EQ(m3.fixed_dofs.size(), 25u + 3u * 5u);
    EXPECT_EQ(m3.loads[0].node, g3.node_index(0, 4, 2));
    EXPECT_NO_THROW(m3.validate());

    FeaProblem bad = c2;
    bad.fixed_dofs.push_back(c2.dof_count());
    EXPECT_THROW(bad.validate(), ValidationError);
}
