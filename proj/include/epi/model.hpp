#ifndef EPI_MODEL_HPP
#define EPI_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epi/duration.hpp"

namespace epi {

enum class Variant { SEIR, SIR, SIS, SIRS };

Variant variant_from_string(const std::string& name);
const char* to_string(Variant v);

/// Piecewise-constant per-patch infection rates lambda_i(t).
struct RateSchedule {
    std::vector<double> breakpoints;       // breakpoints[0] == 0, strictly increasing
    std::vector<Eigen::VectorXd> values;   // values[j] on [breakpoints[j], breakpoints[j+1])

    static RateSchedule constant(Eigen::VectorXd lambda);

    double at(int patch, double t) const;
    const Eigen::VectorXd& at(double t) const;
    bool is_constant() const { return breakpoints.size() == 1; }
    /// Largest per-patch rate over all pieces.
    Eigen::VectorXd max_values() const;
};

/// Model parameterization. The four migration matrices and the exposed law
/// refer to the internal compartment slots (S, E, I, R); the SIR/SIS/SIRS
/// variants are expressed through this same structure (see config.cpp for
/// the user-facing relabeling).
struct ModelSpec {
    int L = 1;
    RateSchedule lambda;
    Eigen::MatrixXd kappa;
    double gamma = 0.0;
    Eigen::MatrixXd nu_S, nu_E, nu_I, nu_R;  // off-diagonal rates; diagonals ignored
    Variant variant = Variant::SEIR;

    /// Compartment whose occupancy drives infection pressure: I for
    /// SEIR/SIR/SIS; the E slot for SIRS (its infectious stage lives there).
    bool driver_is_exposed_slot() const { return variant == Variant::SIRS; }
    /// SIS and SIRS feed the completed-infection flow back into S.
    bool recovered_to_susceptible() const {
        return variant == Variant::SIS || variant == Variant::SIRS;
    }
    bool uses_exposed_stage() const {
        return variant == Variant::SEIR || variant == Variant::SIRS;
    }

    Eigen::VectorXd kappa_row_sums() const { return kappa.rowwise().sum(); }
};

/// The duration laws of a model: H (newly infected), H0 (initially exposed)
/// and F0 (initially infectious remaining periods). Marginals of H are G, F;
/// the exposed marginal of H0 is G0.
struct LawSet {
    JointDurationLaw H;
    JointDurationLaw H0;
    DurationLaw F0;

    const DurationLaw& G() const { return H.exposed(); }
    const DurationLaw& F() const { return H.infectious(); }
    const DurationLaw& G0() const { return H0.exposed(); }
};

struct PopulationState {
    Eigen::VectorXi S, E, I, R;
    std::int64_t N = 0;
    double t = 0.0;

    std::int64_t total() const { return S.sum() + E.sum() + I.sum() + R.sum(); }
    bool balanced() const { return total() == N; }
};

struct ValidationIssue {
    std::string field;
    std::string constraint;
    const char* code;
};

/// Returns the list of invariant violations; empty means the spec is valid.
std::vector<ValidationIssue> validate_spec(const ModelSpec& spec);
/// Throws Error(VALIDATION) listing all violations unless the spec is valid.
void require_valid(const ModelSpec& spec);

/// Per-patch infection functional: Upsilon_i = S_i * sum_l kappa_il I_l /
/// (N^{1-gamma} * (S_i+E_i+I_i+R_i)^gamma), with the 0/0 = 0 convention for
/// empty patches. The caller multiplies by lambda_i(t) to get the infection
/// rate. The driving compartment is I, or the E slot for SIRS.
Eigen::VectorXd upsilon(const PopulationState& state, const ModelSpec& spec);

/// Fluid-scale version operating on per-patch fractions.
Eigen::VectorXd upsilon_fluid(const Eigen::VectorXd& S, const Eigen::VectorXd& E,
                              const Eigen::VectorXd& I, const Eigen::VectorXd& R,
                              const ModelSpec& spec);

/// The a.s. rate ceiling max_i lambda_i * kappa_bar_i: Upsilon_i/N never
/// exceeds kappa_bar_i, so N times this bounds every patch's infection rate.
double upsilon_bound(const ModelSpec& spec);

} // namespace epi

#endif
