#ifndef EPI_FCLT_HPP
#define EPI_FCLT_HPP

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "epi/fluid.hpp"
#include "epi/kernels.hpp"
#include "epi/model.hpp"
#include "epi/rng.hpp"

namespace epi {

/// Per grid point, the L x 4L matrix mapping the stacked fluctuation vector
/// (S_1..S_L, E.., I.., R..) to the linearized infection functional. Exact
/// partial derivatives of the fluid functional evaluated along the fluid path.
struct LinearizationField {
    std::vector<Eigen::MatrixXd> coeff;
};

/// Throws FCLT_INADMISSIBLE when gamma = 1 combines with cross-patch
/// contact (the Gaussian limit only covers gamma < 1 or diagonal kappa).
LinearizationField linearize_infection(const ModelSpec& spec, const FluidTrajectory& fluid);

/// Aggregated Gaussian forcing evaluated at the grid times, one column per
/// patch, already summed into the four compartment equations.
struct DriverPaths {
    Eigen::MatrixXd WS, WE, WI, WR;  // K x L
};

/// Individual driver families of one sampled path, kept for covariance
/// verification. Migration columns are indexed from*L + to; the per-origin
/// vectors hold one K x L matrix per origin patch.
struct DriverComponents {
    Eigen::MatrixXd MA;                      // infection-count Brownian term
    std::array<Eigen::MatrixXd, 4> Mmig;     // per-pair migration noise, K x (L*L);
                                             // independent BMs for S/R, aggregated
                                             // jump martingales for E/I
    std::vector<Eigen::MatrixXd> E0hat;      // initially-exposed latency flow
    std::vector<Eigen::MatrixXd> I01hat;     // initially-infectious bridge
    std::vector<Eigen::MatrixXd> I02hat;     // initially-exposed full completion
    std::vector<Eigen::MatrixXd> Ehat;       // post-zero latency-completion flow
    std::vector<Eigen::MatrixXd> Ihat;       // post-zero full-completion flow
};

/// Precomputed sampling machinery for the driver processes: Brownian
/// time-change variances (exact increments), the initially-infectious
/// empirical bridge (exact construction), and Cholesky factors for the
/// correlated initial-exposed and infection-flow Gaussian blocks.
class DriverSampler {
public:
    DriverSampler(const ModelSpec& spec, const LawSet& laws,
                  const TransitionKernelTable& table, const FluidTrajectory& fluid);

    DriverPaths sample(Rng& rng, DriverComponents* comps = nullptr) const;

    int points() const { return K_; }
    int patches() const { return L_; }

    /// Analytic covariance of one driver-family cell at two grid times.
    /// Families: "MA" (l,l2 ignored), "MS"/"ME"/"MI"/"MR" (pairs l->i and
    /// l2->i2), the per-origin flows "E0", "I01", "I02", "E0xI02", "E",
    /// "I", "ExI" where l is the origin (zero whenever l != l2), and
    /// "AxE"/"AxI" crossing the origin-l infection count with the origin-l
    /// flow into i2 (i ignored). The migration jump martingales cross the
    /// completion flows of the same individuals; those cells are exposed as
    /// "MExE", "MExI", "MIxI" (post-zero infections), "ME0xE0", "ME0xI02",
    /// "MI0xI02" (initially exposed) and "MI01xI01" (initially infectious),
    /// with (l,i) the ordered migration pair, l2 the origin patch and i2 the
    /// completion patch. Throws OFF_GRID for non-grid times and
    /// UNKNOWN_FAMILY otherwise.
    double driver_covariance(const std::string& family, int l, int i, int l2, int i2,
                             double t, double t2) const;

    /// Covariance of the summed I-flow forcing at two grid times for one
    /// patch pair; exposed for verification against ensemble statistics.
    const Eigen::MatrixXd& init_block_covariance(int l) const { return cov_init_[l]; }
    const Eigen::MatrixXd& flow_block_covariance(int l) const { return cov_flow_[l]; }

private:
    /// Ordered migration pairs with positive rate for one compartment; the
    /// compensated per-individual jump counts of these pairs are correlated
    /// with the duration flows (the same chains carry the completion
    /// locations), so they join the per-origin Gaussian blocks.
    struct MigPairs {
        std::vector<int> from, to;
        std::vector<double> rate;
        int count() const { return static_cast<int>(from.size()); }
        int find(int a, int b) const {
            for (int p = 0; p < count(); ++p)
                if (from[p] == a && to[p] == b) return p;
            return -1;
        }
    };

    int K_ = 0, L_ = 0;
    double dt_ = 0.0;
    bool recovered_to_susceptible_ = false;
    Eigen::MatrixXd var_A_;                     // K x L cumulative int lambda*Ups
    std::vector<Eigen::MatrixXd> var_mig_;      // 4 entries, K x (L*L) cumulative nu*int X
    Eigen::MatrixXd m_I01_;                     // K x (L*L) recovery kernel of the
                                                // initially infectious, scaled later
    Eigen::VectorXd I0_, E0_;                   // initial fluid fractions per patch
    double F0_total_ = 0.0;                     // unused; kept via m_I01_ leftovers
    MigPairs pairsE_, pairsI_;
    std::vector<Eigen::MatrixXd> cov_init_;     // per origin patch
    std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_init_;
    std::vector<bool> has_init_;
    std::vector<Eigen::MatrixXd> cov_flow_;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_flow_;
    std::vector<bool> has_flow_;
    std::vector<Eigen::MatrixXd> cov_i01_;      // initially-infectious cohort blocks
    std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_i01_;
    std::vector<bool> has_i01_;
};

struct FcltOptions {
    /// Keep the source text's index placement in the initial-condition terms
    /// of the I/R equations; disable for the mass-balanced per-origin form.
    bool strict_paper_indices = true;
    /// Deterministic initial fluctuations; empty means zero.
    Eigen::VectorXd Shat0, Ehat0, Ihat0, Rhat0;
};

struct FluctuationPath {
    double dt = 0.0;
    Eigen::MatrixXd S, E, I, R, Upsilon;  // K x L
};

/// Solves the linear stochastic Volterra system for one sampled driver path:
/// trapezoidal quadrature with a 4L x 4L linear solve per step (the current
/// time point appears implicitly through the linearized functional).
FluctuationPath solve_fluctuations(const ModelSpec& spec, const TransitionKernelTable& table,
                                   const FluidTrajectory& fluid, const LinearizationField& lin,
                                   const DriverPaths& drivers, const FcltOptions& opts = {});

/// Cholesky factorization with escalating diagonal jitter; throws NOT_PSD
/// (reporting the most negative eigenvalue) when the matrix stays indefinite
/// at the maximum allowed jitter.
Eigen::LLT<Eigen::MatrixXd> robust_cholesky(const Eigen::MatrixXd& cov);

} // namespace epi

#endif
