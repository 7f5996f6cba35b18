#ifndef EPI_MARKOV_HPP
#define EPI_MARKOV_HPP

#include <Eigen/Dense>

namespace epi {

/// Conservative generator built from off-diagonal migration rates:
/// Q_ll' = nu_ll' (l != l'), Q_ll = -sum of the row's off-diagonal entries.
class GeneratorMatrix {
public:
    /// Diagonal entries of `rates` are ignored.
    explicit GeneratorMatrix(const Eigen::MatrixXd& rates);

    const Eigen::MatrixXd& Q() const { return Q_; }
    int size() const { return static_cast<int>(Q_.rows()); }
    /// Largest exit rate max_l |Q_ll|.
    double uniformization_rate() const { return uniformization_rate_; }

private:
    Eigen::MatrixXd Q_;
    double uniformization_rate_;
};

/// Transition probabilities exp(Qt) by uniformization: Poisson-weighted
/// powers of the uniformized stochastic matrix, truncated when the neglected
/// Poisson tail drops below 1e-12. Rows sum to 1 and entries stay in [0,1]
/// up to roundoff.
Eigen::MatrixXd transition_matrix(const GeneratorMatrix& gen, double t);

} // namespace epi

#endif
