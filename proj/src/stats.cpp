#include "epi/stats.hpp"

#include <cmath>

#include <boost/math/distributions/chi_squared.hpp>

#include "epi/duration.hpp"
#include "epi/errors.hpp"

namespace epi {

void RunningStats::add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
}

void RunningStats::merge(const RunningStats& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_);
    const double delta = other.mean_ - mean_;
    mean_ = (na * mean_ + nb * other.mean_) / (na + nb);
    m2_ += other.m2_ + delta * delta * na * nb / (na + nb);
    n_ += other.n_;
}

double RunningStats::variance() const {
    if (n_ < 2) return 0.0;
    return m2_ / static_cast<double>(n_ - 1);
}

double RunningStats::stddev() const { return std::sqrt(variance()); }

std::pair<double, double> chi_square_variance_ci(double sample_variance, std::int64_t n,
                                                 double alpha) {
    if (n < 2) throw Error(ErrorCode::INSUFFICIENT_REPLICATES, "variance CI needs n >= 2");
    const double dof = static_cast<double>(n - 1);
    boost::math::chi_squared chi2(dof);
    const double hi_q = boost::math::quantile(chi2, 1.0 - alpha / 2.0);
    const double lo_q = boost::math::quantile(chi2, alpha / 2.0);
    return {dof * sample_variance / hi_q, dof * sample_variance / lo_q};
}

double dkw_half_width(std::int64_t n, double alpha) {
    return std::sqrt(std::log(2.0 / alpha) / (2.0 * static_cast<double>(n)));
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw Error(ErrorCode::DIM_MISMATCH, "slope fit needs matching arrays of size >= 2");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw Error(ErrorCode::DIM_MISMATCH, "total variation needs equal-length vectors");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

double z_test_pvalue(double observed, double expected, double standard_error) {
    if (standard_error <= 0.0) return observed == expected ? 1.0 : 0.0;
    const double z = std::abs(observed - expected) / standard_error;
    return 2.0 * (1.0 - normal_cdf(z));
}

} // namespace epi
