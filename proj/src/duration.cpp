#include "epi/duration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "epi/errors.hpp"

namespace epi {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
    return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

struct DurationLaw::Impl {
    LawFamily family;
    // family parameters; meaning depends on family
    double a = 0.0, b = 0.0;
    std::vector<double> points;             // empirical atoms, sorted
    std::shared_ptr<const Impl> base;       // equilibrium wraps a base law

    double cdf(double t) const;
    double sample(Rng& rng) const;
    double quantile(double p) const;
    double mean() const;
};

namespace {

double gamma_cdf(double t, double shape, double scale) {
    if (t <= 0.0) return 0.0;
    return boost::math::gamma_p(shape, t / scale);
}

} // namespace

double DurationLaw::Impl::cdf(double t) const {
    if (t < 0.0) return 0.0;
    switch (family) {
        case LawFamily::Exponential:
            return -std::expm1(-a * t);
        case LawFamily::Gamma:
            return gamma_cdf(t, a, b);
        case LawFamily::Lognormal:
            return t > 0.0 ? normal_cdf((std::log(t) - a) / b) : 0.0;
        case LawFamily::Uniform:
            return std::clamp((t - a) / (b - a), 0.0, 1.0);
        case LawFamily::Deterministic:
            return t >= a ? 1.0 : 0.0;
        case LawFamily::Empirical: {
            auto it = std::upper_bound(points.begin(), points.end(), t);
            return static_cast<double>(it - points.begin()) / points.size();
        }
        case LawFamily::Equilibrium: {
            // int_0^t (1 - F_base) / mean_base, closed form per base family
            double m = base->mean();
            switch (base->family) {
                case LawFamily::Exponential:
                    return -std::expm1(-base->a * t);
                case LawFamily::Deterministic:
                    return std::clamp(t / base->a, 0.0, 1.0);
                case LawFamily::Uniform: {
                    double lo = base->a, hi = base->b;
                    double x = std::min(t, hi);
                    double integral;
                    if (x <= lo) {
                        integral = x;
                    } else {
                        integral = lo + (hi * (x - lo) - 0.5 * (x * x - lo * lo)) / (hi - lo);
                    }
                    return std::clamp(integral / m, 0.0, 1.0);
                }
                case LawFamily::Gamma: {
                    // int_0^t (1-F_k) = t(1-F_k(t)) + k*theta*F_{k+1}(t)
                    double k = base->a, th = base->b;
                    double integral = t * (1.0 - gamma_cdf(t, k, th)) + k * th * gamma_cdf(t, k + 1.0, th);
                    return std::clamp(integral / m, 0.0, 1.0);
                }
                default:
                    throw Error(ErrorCode::UNKNOWN_FAMILY,
                                "equilibrium law has no closed form for this base family");
            }
        }
    }
    return 0.0;
}

double DurationLaw::Impl::sample(Rng& rng) const {
    switch (family) {
        case LawFamily::Exponential:
            return rng.exponential(a);
        case LawFamily::Gamma:
            return rng.gamma(a, b);
        case LawFamily::Lognormal:
            return std::exp(a + b * rng.normal());
        case LawFamily::Uniform:
            return a + (b - a) * rng.uniform();
        case LawFamily::Deterministic:
            return a;
        case LawFamily::Empirical:
            return points[rng.uniform_index(points.size())];
        case LawFamily::Equilibrium:
            return quantile(rng.uniform());
    }
    return 0.0;
}

double DurationLaw::Impl::quantile(double p) const {
    p = std::clamp(p, 0.0, 1.0);
    switch (family) {
        case LawFamily::Exponential:
            return p < 1.0 ? -std::log1p(-p) / a : std::numeric_limits<double>::infinity();
        case LawFamily::Lognormal:
            if (p <= 0.0) return 0.0;
            if (p >= 1.0) return std::numeric_limits<double>::infinity();
            return std::exp(a + b * normal_quantile(p));
        case LawFamily::Uniform:
            return a + (b - a) * p;
        case LawFamily::Deterministic:
            return a;
        case LawFamily::Empirical: {
            if (p <= 0.0) return points.front();
            std::size_t k = static_cast<std::size_t>(std::ceil(p * points.size()));
            return points[std::min(k == 0 ? 0 : k - 1, points.size() - 1)];
        }
        default: {
            // monotone CDF: bisection on a growing bracket
            if (p <= 0.0) return 0.0;
            double hi = 1.0;
            while (cdf(hi) < p && hi < 1e18) hi *= 2.0;
            double lo = 0.0;
            for (int iter = 0; iter < 200 && (hi - lo) > 1e-14 * (1.0 + hi); ++iter) {
                double mid = 0.5 * (lo + hi);
                (cdf(mid) >= p ? hi : lo) = mid;
            }
            return hi;
        }
    }
}

double DurationLaw::Impl::mean() const {
    switch (family) {
        case LawFamily::Exponential: return 1.0 / a;
        case LawFamily::Gamma: return a * b;
        case LawFamily::Lognormal: return std::exp(a + 0.5 * b * b);
        case LawFamily::Uniform: return 0.5 * (a + b);
        case LawFamily::Deterministic: return a;
        case LawFamily::Empirical: {
            double s = 0.0;
            for (double x : points) s += x;
            return s / points.size();
        }
        case LawFamily::Equilibrium: {
            // E[X_e] = E[X^2] / (2 E[X]); not needed in closed form here
            double m = 0.0, prev = 0.0, t = 0.0, dt = 1e-3 * base->mean();
            // crude quadrature fallback, only used for reporting
            for (int i = 0; i < 2000000 && prev < 1.0 - 1e-12; ++i) {
                t += dt;
                double c = cdf(t);
                m += (1.0 - 0.5 * (c + prev)) * dt;
                prev = c;
            }
            return m;
        }
    }
    return 0.0;
}

DurationLaw DurationLaw::exponential(double rate) {
    if (rate <= 0.0) throw Error(ErrorCode::VALIDATION, "exponential rate must be > 0");
    auto impl = std::make_shared<Impl>();
    impl->family = LawFamily::Exponential;
    impl->a = rate;
    return DurationLaw(impl);
}

DurationLaw DurationLaw::gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0)
        throw Error(ErrorCode::VALIDATION, "gamma shape/scale must be > 0");
    auto impl = std::make_shared<Impl>();
    impl->family = LawFamily::Gamma;
    impl->a = shape;
    impl->b = scale;
    return DurationLaw(impl);
}

DurationLaw DurationLaw::lognormal(double mu, double sigma) {
    if (sigma <= 0.0) throw Error(ErrorCode::VALIDATION, "lognormal sigma must be > 0");
    auto impl = std::make_shared<Impl>();
    impl->family = LawFamily::Lognormal;
    impl->a = mu;
    impl->b = sigma;
    return DurationLaw(impl);
}

DurationLaw DurationLaw::uniform(double lo, double hi) {
    if (lo < 0.0 || hi <= lo) throw Error(ErrorCode::VALIDATION, "uniform needs 0 <= lo < hi");
    auto impl = std::make_shared<Impl>();
    impl->family = LawFamily::Uniform;
    impl->a = lo;
    impl->b = hi;
    return DurationLaw(impl);
}

DurationLaw DurationLaw::deterministic(double value) {
    if (value < 0.0) throw Error(ErrorCode::VALIDATION, "deterministic value must be >= 0");
    auto impl = std::make_shared<Impl>();
    impl->family = LawFamily::Deterministic;
    impl->a = value;
    return DurationLaw(impl);
}

DurationLaw DurationLaw::empirical(std::vector<double> atoms) {
    if (atoms.empty()) throw Error(ErrorCode::VALIDATION, "empirical law needs atoms");
    for (double x : atoms)
        if (x < 0.0) throw Error(ErrorCode::VALIDATION, "empirical atoms must be >= 0");
    std::sort(atoms.begin(), atoms.end());
    auto impl = std::make_shared<Impl>();
    impl->family = LawFamily::Empirical;
    impl->points = std::move(atoms);
    return DurationLaw(impl);
}

DurationLaw DurationLaw::equilibrium(const DurationLaw& base) {
    switch (base.family()) {
        case LawFamily::Exponential:
        case LawFamily::Uniform:
        case LawFamily::Deterministic:
        case LawFamily::Gamma:
            break;
        default:
            throw Error(ErrorCode::UNKNOWN_FAMILY,
                        "equilibrium law supported only for exponential, uniform, "
                        "deterministic, gamma bases");
    }
    auto impl = std::make_shared<Impl>();
    impl->family = LawFamily::Equilibrium;
    impl->base = base.impl_;
    return DurationLaw(impl);
}

double DurationLaw::cdf(double t) const { return impl_->cdf(t); }
double DurationLaw::sample(Rng& rng) const { return impl_->sample(rng); }
double DurationLaw::quantile(double p) const { return impl_->quantile(p); }
double DurationLaw::mean() const { return impl_->mean(); }
LawFamily DurationLaw::family() const { return impl_->family; }

bool DurationLaw::has_atoms() const {
    return impl_->family == LawFamily::Deterministic || impl_->family == LawFamily::Empirical;
}

std::vector<double> DurationLaw::atoms() const {
    if (impl_->family == LawFamily::Deterministic) return {impl_->a};
    if (impl_->family == LawFamily::Empirical) return impl_->points;
    return {};
}

std::string DurationLaw::describe() const {
    std::ostringstream os;
    switch (impl_->family) {
        case LawFamily::Exponential: os << "exponential(rate=" << impl_->a << ")"; break;
        case LawFamily::Gamma: os << "gamma(shape=" << impl_->a << ",scale=" << impl_->b << ")"; break;
        case LawFamily::Lognormal: os << "lognormal(mu=" << impl_->a << ",sigma=" << impl_->b << ")"; break;
        case LawFamily::Uniform: os << "uniform(" << impl_->a << "," << impl_->b << ")"; break;
        case LawFamily::Deterministic: os << "deterministic(" << impl_->a << ")"; break;
        case LawFamily::Empirical: os << "empirical(n=" << impl_->points.size() << ")"; break;
        case LawFamily::Equilibrium: os << "equilibrium(...)"; break;
    }
    return os.str();
}

JointDurationLaw::JointDurationLaw(JointMode mode, DurationLaw exposed,
                                   DurationLaw infectious, double rho)
    : mode_(mode), exposed_(std::move(exposed)), infectious_(std::move(infectious)), rho_(rho) {
    if (mode_ == JointMode::GaussianCopula && (rho_ <= -1.0 || rho_ >= 1.0))
        throw Error(ErrorCode::VALIDATION, "copula rho must lie in (-1,1)");
}

std::pair<double, double> JointDurationLaw::sample(Rng& rng) const {
    switch (mode_) {
        case JointMode::Product:
            return {exposed_.sample(rng), infectious_.sample(rng)};
        case JointMode::Comonotone: {
            double u = rng.uniform();
            return {exposed_.quantile(u), infectious_.quantile(u)};
        }
        case JointMode::GaussianCopula: {
            double z1 = rng.normal();
            double z2 = rho_ * z1 + std::sqrt(1.0 - rho_ * rho_) * rng.normal();
            return {exposed_.quantile(normal_cdf(z1)), infectious_.quantile(normal_cdf(z2))};
        }
    }
    return {0.0, 0.0};
}

double JointDurationLaw::conditional_cdf(double v, double u) const {
    switch (mode_) {
        case JointMode::Product:
            return infectious_.cdf(v);
        case JointMode::Comonotone:
            // zeta = F^{-1}(G(eta)) given eta = u
            return exposed_.cdf(u) <= infectious_.cdf(v) ? 1.0 : 0.0;
        case JointMode::GaussianCopula: {
            double gu = exposed_.cdf(u);
            double fv = infectious_.cdf(v);
            if (fv >= 1.0) return 1.0;
            if (fv <= 0.0) return 0.0;
            double zu = normal_quantile(std::clamp(gu, 1e-15, 1.0 - 1e-15));
            double zv = normal_quantile(fv);
            return normal_cdf((zv - rho_ * zu) / std::sqrt(1.0 - rho_ * rho_));
        }
    }
    return 0.0;
}

} // namespace epi
