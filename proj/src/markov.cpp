#include "epi/markov.hpp"

#include <cmath>

#include "epi/errors.hpp"

namespace epi {

GeneratorMatrix::GeneratorMatrix(const Eigen::MatrixXd& rates) {
    const auto L = rates.rows();
    if (rates.cols() != L) throw Error(ErrorCode::DIM_MISMATCH, "generator must be square");
    Q_ = rates;
    Q_.diagonal().setZero();
    for (Eigen::Index i = 0; i < L; ++i) {
        for (Eigen::Index j = 0; j < L; ++j)
            if (i != j && Q_(i, j) < 0.0)
                throw Error(ErrorCode::NEGATIVE_RATE, "generator off-diagonal must be >= 0");
        Q_(i, i) = -Q_.row(i).sum();
    }
    uniformization_rate_ = Q_.diagonal().cwiseAbs().maxCoeff();
}

Eigen::MatrixXd transition_matrix(const GeneratorMatrix& gen, double t) {
    if (t < 0.0) throw Error(ErrorCode::NEGATIVE_TIME, "transition time must be >= 0");
    const int L = gen.size();
    const double mu = gen.uniformization_rate();
    Eigen::MatrixXd result = Eigen::MatrixXd::Identity(L, L);
    if (mu == 0.0 || t == 0.0) return result;

    // uniformized stochastic matrix P = I + Q/mu
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(L, L) + gen.Q() / mu;
    const double a = mu * t;

    // exp(Qt) = sum_k pois(k; a) P^k, stop once the remaining tail < 1e-12
    double log_weight = -a;              // log pois(0; a)
    double weight = std::exp(log_weight);
    double accumulated = weight;
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(L, L);
    result = weight * power;
    const int max_terms = static_cast<int>(a + 60.0 * std::sqrt(a + 1.0)) + 64;
    for (int k = 1; k <= max_terms; ++k) {
        power = power * P;
        weight *= a / k;
        if (weight > 0.0) {
            result += weight * power;
            accumulated += weight;
        }
        if (1.0 - accumulated < 1e-12 && k > a) break;
    }
    // fold the truncated tail back proportionally so rows sum to exactly 1
    if (accumulated > 0.0) result /= accumulated;
    return result;
}

} // namespace epi
