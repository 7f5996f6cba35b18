#ifndef EPI_DURATION_HPP
#define EPI_DURATION_HPP

#include <memory>
#include <string>
#include <vector>

#include "epi/rng.hpp"

namespace epi {

enum class LawFamily {
    Exponential,
    Gamma,
    Lognormal,
    Uniform,
    Deterministic,
    Empirical,
    Equilibrium, // stationary-excess law of a base law
};

/// A nonnegative duration distribution exposed as a sampler + CDF pair.
/// Immutable after construction; cheap to copy (shared impl).
class DurationLaw {
public:
    static DurationLaw exponential(double rate);
    static DurationLaw gamma(double shape, double scale);
    static DurationLaw lognormal(double mu, double sigma);
    static DurationLaw uniform(double lo, double hi);
    static DurationLaw deterministic(double value);
    static DurationLaw empirical(std::vector<double> atoms); // equal weights

    /// Stationary-excess law F_e(x) = int_0^x (1-F) / int_0^inf (1-F) of a
    /// base law; closed-form for exponential, uniform, deterministic, gamma.
    static DurationLaw equilibrium(const DurationLaw& base);

    double cdf(double t) const;
    double sample(Rng& rng) const;
    /// Generalized inverse: inf{t : cdf(t) >= p}.
    double quantile(double p) const;
    double mean() const;

    LawFamily family() const;
    /// True if the law has point masses (deterministic, empirical).
    bool has_atoms() const;
    /// Atom locations (empty for continuous laws).
    std::vector<double> atoms() const;

    std::string describe() const;

    struct Impl;

private:
    explicit DurationLaw(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<const Impl> impl_;
};

enum class JointMode { Product, Comonotone, GaussianCopula };

/// Joint law of (exposed period eta, infectious period zeta): the H / H0 of
/// the model. The conditional CDF F(.|u) is what kernel quadrature needs.
class JointDurationLaw {
public:
    JointDurationLaw(JointMode mode, DurationLaw exposed, DurationLaw infectious,
                     double rho = 0.0);

    const DurationLaw& exposed() const { return exposed_; }
    const DurationLaw& infectious() const { return infectious_; }
    JointMode mode() const { return mode_; }
    double rho() const { return rho_; }

    std::pair<double, double> sample(Rng& rng) const;

    /// P(zeta <= v | eta = u).
    double conditional_cdf(double v, double u) const;
    bool has_conditional_cdf() const { return true; }

private:
    JointMode mode_;
    DurationLaw exposed_;
    DurationLaw infectious_;
    double rho_;
};

/// Standard normal CDF / quantile (shared by copula and lognormal code).
double normal_cdf(double x);
double normal_quantile(double p);

} // namespace epi

#endif
