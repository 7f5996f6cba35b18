#include "epi/model.hpp"

#include <cmath>
#include <sstream>

#include "epi/errors.hpp"

namespace epi {

Variant variant_from_string(const std::string& name) {
    if (name == "SEIR") return Variant::SEIR;
    if (name == "SIR") return Variant::SIR;
    if (name == "SIS") return Variant::SIS;
    if (name == "SIRS") return Variant::SIRS;
    throw Error(ErrorCode::SCHEMA_VIOLATION, "unknown variant '" + name + "'");
}

const char* to_string(Variant v) {
    switch (v) {
        case Variant::SEIR: return "SEIR";
        case Variant::SIR: return "SIR";
        case Variant::SIS: return "SIS";
        case Variant::SIRS: return "SIRS";
    }
    return "?";
}

RateSchedule RateSchedule::constant(Eigen::VectorXd lambda) {
    RateSchedule s;
    s.breakpoints = {0.0};
    s.values.push_back(std::move(lambda));
    return s;
}

double RateSchedule::at(int patch, double t) const { return at(t)(patch); }

const Eigen::VectorXd& RateSchedule::at(double t) const {
    std::size_t j = breakpoints.size() - 1;
    while (j > 0 && breakpoints[j] > t) --j;
    return values[j];
}

Eigen::VectorXd RateSchedule::max_values() const {
    Eigen::VectorXd m = values.front();
    for (const auto& v : values) m = m.cwiseMax(v);
    return m;
}

namespace {

void check_migration_matrix(const char* name, const Eigen::MatrixXd& nu, int L,
                            std::vector<ValidationIssue>& issues) {
    if (nu.rows() != L || nu.cols() != L) {
        issues.push_back({name, "must be LxL", "DIM_MISMATCH"});
        return;
    }
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < L; ++j)
            if (i != j && nu(i, j) < 0.0) {
                issues.push_back({name, "off-diagonal rates must be >= 0", "NEGATIVE_RATE"});
                return;
            }
}

} // namespace

std::vector<ValidationIssue> validate_spec(const ModelSpec& spec) {
    std::vector<ValidationIssue> issues;
    const int L = spec.L;
    if (L < 1) issues.push_back({"L", "patch count must be >= 1", "DIM_MISMATCH"});

    if (spec.kappa.rows() != L || spec.kappa.cols() != L) {
        issues.push_back({"kappa", "must be LxL", "DIM_MISMATCH"});
    } else {
        for (int i = 0; i < L; ++i) {
            if (spec.kappa(i, i) != 1.0)
                issues.push_back({"kappa", "kappa_ii must equal 1", "KAPPA_DIAGONAL"});
            for (int j = 0; j < L; ++j)
                if (spec.kappa(i, j) < 0.0)
                    issues.push_back({"kappa", "entries must be >= 0", "NEGATIVE_RATE"});
        }
    }

    if (!(spec.gamma >= 0.0 && spec.gamma <= 1.0))
        issues.push_back({"gamma", "must lie in [0,1]", "GAMMA_RANGE"});

    if (spec.lambda.values.empty() || spec.lambda.breakpoints.size() != spec.lambda.values.size() ||
        spec.lambda.breakpoints.front() != 0.0) {
        issues.push_back({"lambda", "schedule must start at t=0", "DIM_MISMATCH"});
    } else {
        for (std::size_t j = 0; j < spec.lambda.values.size(); ++j) {
            if (spec.lambda.values[j].size() != L)
                issues.push_back({"lambda", "each schedule piece must have L entries", "DIM_MISMATCH"});
            else if (spec.lambda.values[j].minCoeff() < 0.0)
                issues.push_back({"lambda", "rates must be >= 0", "NEGATIVE_RATE"});
            if (j > 0 && spec.lambda.breakpoints[j] <= spec.lambda.breakpoints[j - 1])
                issues.push_back({"lambda", "breakpoints must increase", "DIM_MISMATCH"});
        }
    }

    check_migration_matrix("nu_S", spec.nu_S, L, issues);
    check_migration_matrix("nu_I", spec.nu_I, L, issues);
    check_migration_matrix("nu_R", spec.nu_R, L, issues);
    if (spec.uses_exposed_stage()) {
        check_migration_matrix("nu_E", spec.nu_E, L, issues);
    } else if (spec.nu_E.size() != 0 && spec.nu_E.cwiseAbs().maxCoeff() != 0.0) {
        issues.push_back({"nu_E", "unused for SIR/SIS; must be absent or zero", "VALIDATION"});
    }
    return issues;
}

void require_valid(const ModelSpec& spec) {
    auto issues = validate_spec(spec);
    if (issues.empty()) return;
    std::ostringstream os;
    for (const auto& v : issues) os << "[" << v.code << "] " << v.field << ": " << v.constraint << "; ";
    throw Error(ErrorCode::VALIDATION, os.str());
}

namespace {

Eigen::VectorXd upsilon_impl(const Eigen::VectorXd& S, const Eigen::VectorXd& E,
                             const Eigen::VectorXd& I, const Eigen::VectorXd& R,
                             double scale_pow, const ModelSpec& spec) {
    const Eigen::VectorXd& driver = spec.driver_is_exposed_slot() ? E : I;
    Eigen::VectorXd pressure = spec.kappa * driver;  // sum_l kappa_il * driver_l
    Eigen::VectorXd out(spec.L);
    for (int i = 0; i < spec.L; ++i) {
        double patch_total = S(i) + E(i) + I(i) + R(i);
        if (patch_total <= 0.0) {
            out(i) = 0.0;  // 0/0 convention; numerator vanishes too when gamma < 1
            continue;
        }
        out(i) = S(i) * pressure(i) / (scale_pow * std::pow(patch_total, spec.gamma));
    }
    return out;
}

} // namespace

Eigen::VectorXd upsilon(const PopulationState& state, const ModelSpec& spec) {
    double scale = std::pow(static_cast<double>(state.N), 1.0 - spec.gamma);
    return upsilon_impl(state.S.cast<double>(), state.E.cast<double>(), state.I.cast<double>(),
                        state.R.cast<double>(), scale, spec);
}

Eigen::VectorXd upsilon_fluid(const Eigen::VectorXd& S, const Eigen::VectorXd& E,
                              const Eigen::VectorXd& I, const Eigen::VectorXd& R,
                              const ModelSpec& spec) {
    return upsilon_impl(S, E, I, R, 1.0, spec);
}

double upsilon_bound(const ModelSpec& spec) {
    Eigen::VectorXd lambda_max = spec.lambda.max_values();
    return (lambda_max.array() * spec.kappa_row_sums().array()).maxCoeff();
}

} // namespace epi
