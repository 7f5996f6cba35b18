#ifndef EPI_FLUID_HPP
#define EPI_FLUID_HPP

#include <Eigen/Dense>

#include "epi/kernels.hpp"
#include "epi/model.hpp"

namespace epi {

/// Initial fractions per patch; must be nonnegative and sum to one across
/// all patches and compartments.
struct FluidInit {
    Eigen::VectorXd S0, E0, I0, R0;
};

struct FluidOptions {
    double picard_tol = 1e-12;
    int max_picard = 50;
};

/// Deterministic large-population limit on the kernel grid. Rows are grid
/// points, columns patches. Upsilon stores the infection functional without
/// the lambda factor.
struct FluidTrajectory {
    double dt = 0.0;
    Eigen::MatrixXd S, E, I, R, Upsilon;

    int points() const { return static_cast<int>(S.rows()); }
    int patches() const { return static_cast<int>(S.cols()); }
    double horizon() const { return (points() - 1) * dt; }
    int grid_index(double t) const;

    /// Largest clamped negative excursion (roundoff diagnostic).
    double max_clamped = 0.0;
    /// Minimum over the grid of (patch total) - (its exponential lower
    /// bound exp(-max-exit-rate * t) of the initial total); negative values
    /// beyond roundoff indicate a solver defect.
    double min_lower_bound_gap = 0.0;
};

/// Solves the limit integral equations on the kernel table's grid by
/// trapezoidal quadrature with a per-step fixed-point iteration (the grid
/// convolutions keep the current time point inside the step equation, e.g.
/// when the exposed law has mass at zero).
FluidTrajectory solve_fluid(const ModelSpec& spec, const LawSet& laws, const FluidInit& init,
                            const TransitionKernelTable& table, const FluidOptions& opts = {});

/// Independent solver for the deterministic-period special case: exposed
/// period t_e, infectious period t_o, initial stages uniform on (0, t_e) and
/// (0, t_o). Integrates the delay form of the limit equations by method of
/// steps; used to cross-check solve_fluid. t_e and t_o must be grid multiples.
FluidTrajectory solve_fluid_delay(const ModelSpec& spec, double t_e, double t_o,
                                  const FluidInit& init, double dt, double horizon,
                                  const FluidOptions& opts = {});

} // namespace epi

#endif
