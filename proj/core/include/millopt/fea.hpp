#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "millopt/grid.hpp"

namespace millopt {

/// Isotropic linear elastic material with SIMP interpolation
/// E(rho) = E_min + rho^p (E0 - E_min).
struct MaterialModel {
    double young = 1.0;
    double poisson = 0.3;
    double young_min = 1e-9;
    double penal = 3.0;

    void validate() const;
    double modulus(double rho) const;
    double modulus_derivative(double rho) const;
};

/// Unit-modulus element stiffness of a unit quad (plane stress, unit
/// thickness; 8x8) or unit hex (24x24). Degrees of freedom are node-major
/// (ux, uy[, uz]) in StructuredGrid::element_nodes order.
Eigen::MatrixXd element_stiffness(const MaterialModel& model, int dimension);

struct PointLoad {
    std::size_t node;
    int component;
    double magnitude;
};

struct FeaProblem {
    StructuredGrid grid;
    std::vector<std::size_t> fixed_dofs;
    std::vector<PointLoad> loads;
    MaterialModel material;

    std::size_t dof_count() const { return grid.node_count() * grid.dimension(); }
    std::vector<double> load_vector() const;
    /// Throws ValidationError on out-of-range DOFs or non-finite loads.
    void validate() const;
};

/// Benchmark boundary conditions.
enum class LoadCase {
    /// Face x = 0 clamped; unit downward point load at the bottom-right corner
    /// (2D) or the midpoint of the bottom-right edge (3D).
    cantilever,
    /// Half MBB beam: symmetry (u_x = 0) on x = 0, bottom-right support, unit
    /// downward load at the top of the symmetry plane (mid-depth in 3D).
    mbb,
};

FeaProblem make_problem(LoadCase load_case, const StructuredGrid& grid,
                        const MaterialModel& material = {});

enum class SolverKind {
    automatic,  // direct for 2D; for 3D, mgpcg falling back to direct when CG stalls
    direct,     // sparse supernodal Cholesky (CHOLMOD)
    pcg,        // Jacobi-preconditioned CG, matrix-free
    mgpcg,      // CG preconditioned by a geometric multigrid V-cycle
};

SolverKind parse_solver_kind(const std::string& name);
std::string to_string(SolverKind kind);

struct SolverSettings {
    SolverKind kind = SolverKind::automatic;
    double relative_tolerance = 1e-8;
    int max_iterations = 20000;
};

struct SolveResult {
    std::vector<double> displacement;
    double compliance = 0.0;
    /// u_e^T k0 u_e per element (unit modulus).
    DensityField element_energy;
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Reusable solver for one FeaProblem. Keeps the sparsity analysis of the
/// direct path and the previous displacement as the starting guess of the
/// iterative paths.
class FeaSolver {
public:
    FeaSolver(FeaProblem problem, SolverSettings settings = {});
    ~FeaSolver();
    FeaSolver(FeaSolver&&) noexcept;
    FeaSolver& operator=(FeaSolver&&) noexcept;

    const FeaProblem& problem() const { return problem_; }
    SolverKind kind() const { return kind_; }

    /// Solves K(rho_p) U = F. Throws NumericalError when the iterative solver
    /// does not reach the tolerance within the iteration cap.
    SolveResult solve(std::span<const double> rho_p);

    /// K(rho_p) x with fixed DOFs treated as eliminated (rows/cols zeroed).
    std::vector<double> apply_stiffness(std::span<const double> rho_p,
                                        std::span<const double> x) const;

private:
    struct Impl;
    FeaProblem problem_;
    SolverSettings settings_;
    SolverKind kind_;
    std::unique_ptr<Impl> impl_;
};

/// One-shot solve without warm start.
SolveResult solve(const FeaProblem& problem, std::span<const double> rho_p,
                  const SolverSettings& settings = {});

/// dC/d(rho_p)(e) = -p rho^(p-1) (E0 - E_min) u_e^T k0 u_e.
DensityField compliance_sensitivity(const FeaProblem& problem, std::span<const double> rho_p,
                                    const SolveResult& result);

double volume_fraction(std::span<const double> rho_p);
DensityField volume_sensitivity(std::size_t element_count);

}  // namespace millopt
