#ifndef EPI_STATS_HPP
#define EPI_STATS_HPP

#include <cstdint>
#include <utility>
#include <vector>

namespace epi {

/// One-pass mean/variance accumulator (Welford). Merging two accumulators is
/// exact, which lets replicate batches combine in a fixed order regardless of
/// how they were scheduled.
class RunningStats {
public:
    void add(double x);
    void merge(const RunningStats& other);

    std::int64_t count() const { return n_; }
    double mean() const { return mean_; }
    /// Unbiased sample variance; zero for fewer than two observations.
    double variance() const;
    double stddev() const;

private:
    std::int64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

/// Two-sided chi-square confidence interval for a population variance given
/// the sample variance of n observations.
std::pair<double, double> chi_square_variance_ci(double sample_variance, std::int64_t n,
                                                 double alpha);

/// Dvoretzky-Kiefer-Wolfowitz band half-width: sup-norm deviation of the
/// empirical CDF exceeds this with probability at most alpha.
double dkw_half_width(std::int64_t n, double alpha);

/// Least-squares slope of log(y) against log(x); x and y must be positive.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Total variation distance between two probability vectors of equal length.
double total_variation(const std::vector<double>& a, const std::vector<double>& b);

/// Two-sided normal-approximation p-value for observed mean vs expected mean
/// given a standard error.
double z_test_pvalue(double observed, double expected, double standard_error);

} // namespace epi

#endif
