#include "epi/kernels.hpp"

#include <cmath>
#include <string>

#include "epi/errors.hpp"
#include "epi/rng.hpp"

namespace epi {

LawIncrements law_increments(const DurationLaw& law, double dt, int K) {
    LawIncrements inc;
    inc.mass.assign(K, 0.0);
    inc.atomic = law.has_atoms();
    if (inc.atomic) {
        const auto atoms = law.atoms();
        const double w = 1.0 / static_cast<double>(atoms.size());
        const double horizon = (K - 1) * dt;
        for (double a : atoms) {
            if (a > horizon + 1e-9 * std::max(1.0, a)) continue;  // never completes in-window
            const double ratio = a / dt;
            const long m = std::lround(ratio);
            if (std::abs(a - m * dt) > 1e-9 * std::max(1.0, a))
                throw Error(ErrorCode::OFF_GRID,
                            "duration atom at " + std::to_string(a) +
                                " is not a grid multiple of dt=" + std::to_string(dt));
            inc.mass[static_cast<std::size_t>(m)] += w;
        }
    } else {
        double prev = law.cdf(0.0);
        inc.mass[0] = prev;  // zero for continuous laws
        for (int m = 1; m < K; ++m) {
            const double cur = law.cdf(m * dt);
            inc.mass[m] = std::max(0.0, cur - prev);
            prev = cur;
        }
    }
    return inc;
}

std::vector<double> outer_node_weights(const LawIncrements& inc) {
    const int K = static_cast<int>(inc.mass.size());
    std::vector<double> w(K, 0.0);
    if (inc.atomic) {
        w = inc.mass;
    } else {
        w[0] = inc.mass[0] + 0.5 * (K > 1 ? inc.mass[1] : 0.0);
        for (int m = 1; m < K; ++m)
            w[m] = 0.5 * (inc.mass[m] + (m + 1 < K ? inc.mass[m + 1] : 0.0));
    }
    return w;
}

namespace {

// Cumulative int_[0,t_k] M(v) L(dv) for every k; right-endpoint rule on atomic
// cells (exact), endpoint average on continuous ones.
std::vector<Eigen::MatrixXd> cumulative_kernel(const std::vector<Eigen::MatrixXd>& M,
                                               const LawIncrements& inc) {
    const int K = static_cast<int>(M.size());
    std::vector<Eigen::MatrixXd> out(K);
    out[0] = inc.mass[0] * M[0];
    for (int k = 1; k < K; ++k) {
        if (inc.atomic)
            out[k] = out[k - 1] + inc.mass[k] * M[k];
        else
            out[k] = out[k - 1] + (0.5 * inc.mass[k]) * (M[k - 1] + M[k]);
    }
    return out;
}

Eigen::MatrixXd interp_matrix(const std::vector<Eigen::MatrixXd>& M, double dt, double t) {
    const int K = static_cast<int>(M.size());
    if (t <= 0.0) return M[0];
    const double x = t / dt;
    int k = static_cast<int>(x);
    if (k >= K - 1) return M[K - 1];
    const double frac = x - k;
    return (1.0 - frac) * M[k] + frac * M[k + 1];
}

// Inner conditional integral C_m(s) = int_[0,s] q_ii'(v) F(dv | u = t_m),
// tabulated for all grid lags s. Product mode reuses the marginal table;
// comonotone conditionals are point masses handled by interpolation of q.
class InnerIntegral {
public:
    InnerIntegral(const JointDurationLaw& joint, const std::vector<Eigen::MatrixXd>& q,
                  const std::vector<Eigen::MatrixXd>& QF_marginal, double dt)
        : joint_(joint), q_(q), QF_(QF_marginal), dt_(dt), K_(static_cast<int>(q.size())) {}

    // Product mode is node-independent, so the table can be built once.
    bool node_independent() const { return joint_.mode() == JointMode::Product; }

    // Matrix of values at lag index s for node u = t_m; product mode is
    // m-independent.
    void tabulate(int m, std::vector<Eigen::MatrixXd>& out) const {
        const int L = static_cast<int>(q_[0].rows());
        switch (joint_.mode()) {
            case JointMode::Product:
                out = QF_;
                return;
            case JointMode::Comonotone: {
                // conditional law is the point mass at v*(u) = F^{-1}(G(u))
                const double gu = joint_.exposed().cdf(m * dt_);
                const double vstar = joint_.infectious().quantile(gu);
                const Eigen::MatrixXd qv = interp_matrix(q_, dt_, vstar);
                out.assign(K_, Eigen::MatrixXd::Zero(L, L));
                for (int s = 0; s < K_; ++s)
                    if (vstar <= s * dt_ + 1e-12) out[s] = qv;
                return;
            }
            case JointMode::GaussianCopula: {
                const double u = m * dt_;
                out.assign(K_, Eigen::MatrixXd::Zero(L, L));
                double prev = joint_.conditional_cdf(0.0, u);
                for (int s = 1; s < K_; ++s) {
                    const double cur = joint_.conditional_cdf(s * dt_, u);
                    const double dF = std::max(0.0, cur - prev);
                    out[s] = out[s - 1] + (0.5 * dF) * (q_[s - 1] + q_[s]);
                    prev = cur;
                }
                return;
            }
        }
        throw Error(ErrorCode::UNSUPPORTED_JOINT, "joint law lacks a usable conditional CDF");
    }

private:
    const JointDurationLaw& joint_;
    const std::vector<Eigen::MatrixXd>& q_;
    const std::vector<Eigen::MatrixXd>& QF_;
    double dt_;
    int K_;
};

// Double kernel Phi_li(t_k) = sum over exposed-duration nodes of
// p(t_m) * weight_m * C_m(t_{k-m}).
std::vector<Eigen::MatrixXd> double_kernel(const std::vector<Eigen::MatrixXd>& p,
                                           const LawIncrements& incG,
                                           const InnerIntegral& inner) {
    const int K = static_cast<int>(p.size());
    const int L = static_cast<int>(p[0].rows());
    const auto w = outer_node_weights(incG);
    std::vector<Eigen::MatrixXd> out(K, Eigen::MatrixXd::Zero(L, L));
    std::vector<Eigen::MatrixXd> C;
    if (inner.node_independent()) inner.tabulate(0, C);
    Eigen::MatrixXd W(L, L);
    for (int m = 0; m + 1 < K; ++m) {
        if (w[m] == 0.0) continue;
        if (!inner.node_independent()) inner.tabulate(m, C);
        W = w[m] * p[m];
        // hot loop over the lag axis: raw column-major accumulation avoids
        // per-step temporaries
        const double* Wd = W.data();
        for (int k = m + 1; k < K; ++k) {
            const double* Cd = C[k - m].data();
            double* Od = out[k].data();
            for (int c = 0; c < L; ++c)
                for (int r = 0; r < L; ++r) {
                    double s = 0.0;
                    for (int t = 0; t < L; ++t) s += Wd[t * L + r] * Cd[c * L + t];
                    Od[c * L + r] += s;
                }
        }
    }
    return out;
}

void monte_carlo_double_kernel(const JointDurationLaw& joint,
                               const std::vector<Eigen::MatrixXd>& p,
                               const std::vector<Eigen::MatrixXd>& q, double dt,
                               std::int64_t samples, Rng& rng,
                               std::vector<Eigen::MatrixXd>& value,
                               std::vector<Eigen::MatrixXd>& se) {
    const int K = static_cast<int>(p.size());
    const int L = static_cast<int>(p[0].rows());
    std::vector<Eigen::MatrixXd> binned(K, Eigen::MatrixXd::Zero(L, L));
    std::vector<Eigen::MatrixXd> binned_sq(K, Eigen::MatrixXd::Zero(L, L));
    for (std::int64_t n = 0; n < samples; ++n) {
        const auto [eta, zeta] = joint.sample(rng);
        const double total = eta + zeta;
        // completion lands in the first grid point at or after eta + zeta
        const int b = static_cast<int>(std::ceil(total / dt - 1e-12));
        if (b >= K) continue;
        const Eigen::MatrixXd V =
            interp_matrix(p, dt, eta) * interp_matrix(q, dt, zeta);
        binned[std::max(b, 0)] += V;
        binned_sq[std::max(b, 0)] += V.cwiseProduct(V);
    }
    value.assign(K, Eigen::MatrixXd::Zero(L, L));
    se.assign(K, Eigen::MatrixXd::Zero(L, L));
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(L, L);
    Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(L, L);
    const double M = static_cast<double>(samples);
    for (int k = 0; k < K; ++k) {
        sum += binned[k];
        sum_sq += binned_sq[k];
        value[k] = sum / M;
        const Eigen::MatrixXd var =
            (sum_sq / M - value[k].cwiseProduct(value[k])).cwiseMax(0.0);
        se[k] = (var / M).cwiseSqrt();
    }
}

void require_positive_infectious(const DurationLaw& F, const char* name) {
    if (F.cdf(0.0) > 0.0)
        throw Error(ErrorCode::VALIDATION,
                    std::string(name) + ": infectious period must be strictly positive");
}

} // namespace

int TransitionKernelTable::grid_index(double t) const {
    if (t < -1e-12) throw Error(ErrorCode::NEGATIVE_TIME, "kernel lookup at negative time");
    const long k = std::lround(t / dt_);
    if (std::abs(t - k * dt_) > 1e-9 * std::max(1.0, t))
        throw Error(ErrorCode::OFF_GRID, "time " + std::to_string(t) + " is off the kernel grid");
    if (k >= points())
        throw Error(ErrorCode::OFF_GRID, "time " + std::to_string(t) + " exceeds the kernel horizon");
    return static_cast<int>(k);
}

double TransitionKernelTable::interp_PG(int l, int i, double t) const {
    if (t <= 0.0) return PG_[0](l, i);
    const double x = std::min(t, horizon_) / dt_;
    const int k = std::min(static_cast<int>(x), points() - 2);
    const double frac = x - k;
    return (1.0 - frac) * PG_[k](l, i) + frac * PG_[k + 1](l, i);
}

double TransitionKernelTable::interp_Phi(int l, int i, double t) const {
    if (t <= 0.0) return Phi_[0](l, i);
    const double x = std::min(t, horizon_) / dt_;
    const int k = std::min(static_cast<int>(x), points() - 2);
    const double frac = x - k;
    return (1.0 - frac) * Phi_[k](l, i) + frac * Phi_[k + 1](l, i);
}

TransitionKernelTable build_kernel_table(const ModelSpec& spec, const LawSet& laws,
                                         double dt, double horizon,
                                         const KernelBuildOptions& opts) {
    if (dt <= 0.0 || horizon <= 0.0)
        throw Error(ErrorCode::GRID_MISMATCH, "dt and horizon must be positive");
    const double steps = horizon / dt;
    const long K_steps = std::lround(steps);
    if (K_steps < 1 || std::abs(steps - K_steps) > 1e-9 * std::max(1.0, steps))
        throw Error(ErrorCode::GRID_MISMATCH, "horizon must be an integer multiple of dt");
    const int K = static_cast<int>(K_steps) + 1;
    const int L = spec.L;

    require_positive_infectious(laws.F(), "F");
    require_positive_infectious(laws.F0, "F0");

    TransitionKernelTable table;
    table.dt_ = dt;
    table.horizon_ = horizon;
    table.L_ = L;
    table.method_ = opts.method;

    // one-step transition matrices, then chain products along the grid
    const GeneratorMatrix genE(spec.uses_exposed_stage() ? spec.nu_E
                                                         : Eigen::MatrixXd::Zero(L, L));
    const GeneratorMatrix genI(spec.nu_I);
    const Eigen::MatrixXd p1 = transition_matrix(genE, dt);
    const Eigen::MatrixXd q1 = transition_matrix(genI, dt);
    table.p_.resize(K);
    table.q_.resize(K);
    table.p_[0] = Eigen::MatrixXd::Identity(L, L);
    table.q_[0] = Eigen::MatrixXd::Identity(L, L);
    for (int k = 1; k < K; ++k) {
        table.p_[k] = table.p_[k - 1] * p1;
        table.q_[k] = table.q_[k - 1] * q1;
    }

    const auto incG = law_increments(laws.G(), dt, K);
    const auto incG0 = law_increments(laws.G0(), dt, K);
    const auto incF = law_increments(laws.F(), dt, K);
    const auto incF0 = law_increments(laws.F0, dt, K);
    table.PG_ = cumulative_kernel(table.p_, incG);
    table.PG0_ = cumulative_kernel(table.p_, incG0);
    table.QF_ = cumulative_kernel(table.q_, incF);
    table.QF0_ = cumulative_kernel(table.q_, incF0);
    table.QFH0_ = cumulative_kernel(table.q_, law_increments(laws.H0.infectious(), dt, K));

    if (opts.method == KernelBuildMethod::MonteCarlo) {
        Rng rng(opts.mc_seed);
        monte_carlo_double_kernel(laws.H, table.p_, table.q_, dt, opts.mc_samples, rng,
                                  table.Phi_, table.Phi_se_);
        monte_carlo_double_kernel(laws.H0, table.p_, table.q_, dt, opts.mc_samples, rng,
                                  table.Phi0_, table.Phi0_se_);
    } else {
        const InnerIntegral inner(laws.H, table.q_, table.QF_, dt);
        const InnerIntegral inner0(laws.H0, table.q_, table.QFH0_, dt);
        table.Phi_ = double_kernel(table.p_, incG, inner);
        table.Phi0_ = double_kernel(table.p_, incG0, inner0);
    }
    return table;
}

namespace {

double phi_cross_impl(const TransitionKernelTable& table, const JointDurationLaw& joint,
                      const std::vector<Eigen::MatrixXd>* QF_marginal, int l, int i,
                      int i2, double t, double t2) {
    const int kt = table.grid_index(t);
    const int kt2 = table.grid_index(t2);
    const double dt = table.dt();
    const int K = table.points();

    const auto incG = law_increments(joint.exposed(), dt, K);

    // inner conditional integral at node u = t_m with lag s = t2 - u
    std::vector<Eigen::MatrixXd> copula_buffer;
    const auto inner_at = [&](int m) -> double {
        const int s = kt2 - m;
        if (s <= 0) return 0.0;
        switch (joint.mode()) {
            case JointMode::Product:
                return (*QF_marginal)[s](i, i2);
            case JointMode::Comonotone: {
                const double gu = joint.exposed().cdf(m * dt);
                const double vstar = joint.infectious().quantile(gu);
                if (vstar > s * dt + 1e-12) return 0.0;
                return interp_matrix(table.q_all(), dt, vstar)(i, i2);
            }
            case JointMode::GaussianCopula: {
                const double u = m * dt;
                double acc = 0.0;
                double prev = joint.conditional_cdf(0.0, u);
                for (int j = 1; j <= s; ++j) {
                    const double cur = joint.conditional_cdf(j * dt, u);
                    acc += 0.5 * std::max(0.0, cur - prev) *
                           (table.q(j - 1)(i, i2) + table.q(j)(i, i2));
                    prev = cur;
                }
                return acc;
            }
        }
        throw Error(ErrorCode::UNSUPPORTED_JOINT, "joint law lacks a usable conditional CDF");
    };

    const auto f = [&](int m) { return table.p(m)(l, i) * inner_at(m); };

    if (incG.atomic) {
        double acc = 0.0;
        for (int m = 0; m <= kt; ++m)
            if (incG.mass[m] != 0.0) acc += incG.mass[m] * f(m);
        return acc;
    }
    double acc = incG.mass[0] * f(0);
    double f_prev = f(0);
    for (int m = 1; m <= kt; ++m) {
        const double f_cur = f(m);
        acc += 0.5 * incG.mass[m] * (f_prev + f_cur);
        f_prev = f_cur;
    }
    return acc;
}

} // namespace

double phi_cross(const TransitionKernelTable& table, const LawSet& laws, int l, int i,
                 int i2, double t, double t2) {
    return phi_cross_impl(table, laws.H, &table.QF_all(), l, i, i2, t, t2);
}

double phi_cross0(const TransitionKernelTable& table, const LawSet& laws, int l, int i,
                  int i2, double t, double t2) {
    return phi_cross_impl(table, laws.H0, &table.QFH0_all(), l, i, i2, t, t2);
}

} // namespace epi

