#ifndef EPI_CONFIG_HPP
#define EPI_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "epi/fluid.hpp"
#include "epi/kernels.hpp"
#include "epi/model.hpp"

namespace epi {

enum class RunMode { Simulate, Fluid, Fclt, VerifyFlln, VerifyFclt, Kernels };

RunMode run_mode_from_string(const std::string& name);
const char* to_string(RunMode m);

/// Config-overridable verdict constants; defaults match the documented
/// decision rules (3-SE band, [-0.65,-0.35] slope window, 95% CIs, 5%
/// relative covariance tolerance).
struct VerifyThresholds {
    double z_mult = 3.0;
    double slope_lo = -0.65;
    double slope_hi = -0.35;
    double ci_level = 0.95;
    double cov_rel_tol = 0.05;
};

/// A parsed experiment: the internal model (variant relabeling already
/// applied), the duration laws, the initial condition, and the run block.
struct ExperimentSpec {
    ModelSpec model;
    LawSet laws = LawSet{JointDurationLaw(JointMode::Product, DurationLaw::deterministic(0.0),
                                          DurationLaw::deterministic(0.0)),
                         JointDurationLaw(JointMode::Product, DurationLaw::deterministic(0.0),
                                          DurationLaw::deterministic(0.0)),
                         DurationLaw::deterministic(0.0)};

    FluidInit init;            // fractions (derived from counts when counts given)
    bool init_is_counts = false;
    Eigen::VectorXi S0c, E0c, I0c, R0c;  // populated when counts given

    RunMode mode = RunMode::Fluid;
    std::vector<std::int64_t> N;
    int M = 0;
    int P = 0;
    double dt = 0.0;
    double T = 0.0;
    std::vector<double> checkpoints;
    std::uint64_t base_seed = 0;
    std::string out_dir = "out";
    int threads = 0;

    bool strict_paper_indices = true;
    KernelBuildOptions kernel_opts;
    VerifyThresholds thresholds;
    /// Optional per-patch standard deviations for independent Gaussian
    /// initial fluctuations in the FCLT ensemble; empty means start at zero.
    Eigen::VectorXd fluct0_std_S, fluct0_std_E, fluct0_std_I, fluct0_std_R;

    Variant user_variant = Variant::SEIR;  // as written in the file
    std::string config_hash;               // FNV-1a-64 of the raw bytes, hex
};

/// Parses and validates a config file. Throws PARSE_ERROR (malformed text,
/// with location), SCHEMA_VIOLATION (unknown/missing/ill-typed key, naming
/// its path), VALIDATION / FCLT_INADMISSIBLE (semantic checks).
ExperimentSpec load_config(const std::string& path);
/// Same from an in-memory string; `origin` labels error messages.
ExperimentSpec parse_config(const std::string& text, const std::string& origin);

/// Integer initial state for population size N: the configured counts when
/// given (N must match their total), otherwise largest-remainder rounding of
/// the fractions so the counts sum to exactly N.
PopulationState initial_counts(const ExperimentSpec& exp, std::int64_t N);

std::uint64_t fnv1a64(const std::string& bytes);

} // namespace epi

#endif
