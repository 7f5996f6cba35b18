#ifndef EPI_KERNELS_HPP
#define EPI_KERNELS_HPP

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "epi/markov.hpp"
#include "epi/model.hpp"

namespace epi {

enum class KernelBuildMethod { Quadrature, MonteCarlo };

struct KernelBuildOptions {
    KernelBuildMethod method = KernelBuildMethod::Quadrature;
    std::int64_t mc_samples = 1'000'000;
    std::uint64_t mc_seed = 0x6b65726e656c00ULL;  // dedicated fixed seed
};

/// Gridded transition probabilities of the exposed (X) and infectious (Y)
/// migration chains together with every convolution kernel the limit
/// solvers consume:
///   p, q       : transition matrices p_ll'(t_k), q_ll'(t_k)
///   PG0, PG    : int_0^t p_li(u) G0(du), G(du)
///   QF0, QF    : int_0^t q_li(v) F0(dv), F(dv)
///   Phi0, Phi  : int_0^t sum_l' p_ll'(u) int_0^{t-u} q_l'i(v) H0/H(du,dv)
/// All arrays share one grid; the solvers are required to run on it.
class TransitionKernelTable {
public:
    double dt() const { return dt_; }
    double horizon() const { return horizon_; }
    int points() const { return static_cast<int>(p_.size()); }
    int patches() const { return L_; }

    const Eigen::MatrixXd& p(int k) const { return p_[k]; }
    const Eigen::MatrixXd& q(int k) const { return q_[k]; }
    const Eigen::MatrixXd& PG0(int k) const { return PG0_[k]; }
    const Eigen::MatrixXd& PG(int k) const { return PG_[k]; }
    const Eigen::MatrixXd& QF0(int k) const { return QF0_[k]; }
    const Eigen::MatrixXd& QF(int k) const { return QF_[k]; }
    const Eigen::MatrixXd& Phi0(int k) const { return Phi0_[k]; }
    const Eigen::MatrixXd& Phi(int k) const { return Phi_[k]; }

    const std::vector<Eigen::MatrixXd>& p_all() const { return p_; }
    const std::vector<Eigen::MatrixXd>& q_all() const { return q_; }
    const std::vector<Eigen::MatrixXd>& QF_all() const { return QF_; }
    const std::vector<Eigen::MatrixXd>& QF0_all() const { return QF0_; }
    // inner integral of Phi0: the initially exposed serve a *full* infectious
    // period drawn from the H0 marginal, not the residual law F0
    const std::vector<Eigen::MatrixXd>& QFH0_all() const { return QFH0_; }

    /// Monte Carlo standard errors for Phi0/Phi; empty when built by quadrature.
    const std::vector<Eigen::MatrixXd>& Phi_se() const { return Phi_se_; }
    const std::vector<Eigen::MatrixXd>& Phi0_se() const { return Phi0_se_; }
    KernelBuildMethod method() const { return method_; }

    /// Index of a grid-aligned time; throws OFF_GRID otherwise.
    int grid_index(double t) const;
    /// Kernel value at an arbitrary lag in [0,T] by linear interpolation
    /// (used by the conditional-flow estimator, not by the solvers).
    double interp_PG(int l, int i, double t) const;
    double interp_Phi(int l, int i, double t) const;

    friend TransitionKernelTable build_kernel_table(const ModelSpec&, const LawSet&,
                                                    double, double,
                                                    const KernelBuildOptions&);

private:
    double dt_ = 0.0, horizon_ = 0.0;
    int L_ = 0;
    std::vector<Eigen::MatrixXd> p_, q_, PG0_, PG_, QF0_, QF_, QFH0_, Phi0_, Phi_;
    std::vector<Eigen::MatrixXd> Phi_se_, Phi0_se_;
    KernelBuildMethod method_ = KernelBuildMethod::Quadrature;
};

TransitionKernelTable build_kernel_table(const ModelSpec& spec, const LawSet& laws,
                                         double dt, double horizon,
                                         const KernelBuildOptions& opts = {});

/// Stieltjes increments of a duration law on the table grid. For atomic laws
/// the mass sits exactly on cell right endpoints; increments[0] carries any
/// mass at t = 0 (the degenerate exposed law of the no-latency variants).
struct LawIncrements {
    std::vector<double> mass;  // length K
    bool atomic = false;
};

LawIncrements law_increments(const DurationLaw& law, double dt, int K);

/// Node weights turning sum_m w[m] f(t_m) into int f dLaw, valid whenever the
/// integrand vanishes at the last node it multiplies (see kernel assembly).
std::vector<double> outer_node_weights(const LawIncrements& inc);

/// Cross kernel int_0^t p_li(u) int_0^{t'-u} q_ii'(v) H(du,dv) needed by the
/// FCLT (E,I)-flow cross covariance; t <= t', both grid-aligned.
double phi_cross(const TransitionKernelTable& table, const LawSet& laws, int l, int i,
                 int i2, double t, double t2);
/// Same with H0 (initial-condition cross covariance).
double phi_cross0(const TransitionKernelTable& table, const LawSet& laws, int l, int i,
                  int i2, double t, double t2);

} // namespace epi

#endif
