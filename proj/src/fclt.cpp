#include "epi/fclt.hpp"

#include <cmath>
#include <string>

#include "epi/errors.hpp"
#include "epi/markov.hpp"

namespace epi {

namespace {

// stacked layout: x = (S_0..S_{L-1}, E.., I.., R..)
constexpr int kS = 0, kE = 1, kI = 2, kR = 3;

Eigen::VectorXd cell_lambda(const ModelSpec& spec, int k, double dt) {
    return spec.lambda.at((k - 1) * dt + 0.5 * dt);
}

// trapezoid node weight of int_0^{t_a} f(s) lambda(s) ds for node j, with
// lambda constant on cells; the weight of node a itself is half its cell
double node_weight(const std::vector<Eigen::VectorXd>& lam_cells, int j, int a, int patch,
                   double dt) {
    if (a == 0) return 0.0;
    if (j == 0) return 0.5 * dt * lam_cells[1](patch);
    if (j == a) return 0.5 * dt * lam_cells[a](patch);
    return 0.5 * dt * (lam_cells[j](patch) + lam_cells[j + 1](patch));
}

// ---- migration jump-martingale coupling -----------------------------------
// For one individual with phase chain Z started at l and phase duration law
// D, the compensated a->b jump count m_ab is a centered martingale, so its
// crossings with the completion indicators need no product subtraction:
//   E[m_ab(u)^2]                 = nu_ab int_0^u P(phase ongoing at r, Z(r)=a) dr
//   E[m_ab(u) 1{D<=v, Z(D)=j}]   = nu_ab int_[0,v] D(d eta)
//                                    int_0^{u^eta} Z_{la}(r) (Z_{bj}-Z_{aj})(eta-r) dr
// (a jump forces the chain to b, an occupied unit of compensator leaves it
// at a; the bracket is the resulting location tilt at completion).

// grid increments of the infectious period conditional on the latency node
// t_m; product mode reuses the marginal, comonotone collapses to the
// quantile atom rounded to the grid
LawIncrements conditional_increments(const JointDurationLaw& joint,
                                     const LawIncrements& marginal, int m, double dt,
                                     int K) {
    switch (joint.mode()) {
        case JointMode::Product:
            return marginal;
        case JointMode::Comonotone: {
            LawIncrements inc;
            inc.mass.assign(K, 0.0);
            inc.atomic = true;
            const double gu = joint.exposed().cdf(m * dt);
            const double vstar = joint.infectious().quantile(gu);
            if (std::isfinite(vstar)) {
                const long b = std::lround(vstar / dt);
                if (b >= 0 && b < K) inc.mass[static_cast<std::size_t>(b)] = 1.0;
            }
            return inc;
        }
        case JointMode::GaussianCopula: {
            LawIncrements inc;
            inc.mass.assign(K, 0.0);
            double prev = joint.conditional_cdf(0.0, m * dt);
            inc.mass[0] = prev;
            for (int s = 1; s < K; ++s) {
                const double cur = joint.conditional_cdf(s * dt, m * dt);
                inc.mass[s] = std::max(0.0, cur - prev);
                prev = cur;
            }
            return inc;
        }
    }
    throw Error(ErrorCode::UNSUPPORTED_JOINT, "joint law lacks a usable conditional CDF");
}

// right-continuous survival on the grid, 1 - running mass
std::vector<double> survival_from(const LawIncrements& inc) {
    std::vector<double> s(inc.mass.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < inc.mass.size(); ++k) {
        acc += inc.mass[k];
        s[k] = std::max(0.0, 1.0 - acc);
    }
    return s;
}

// c(m, w) = int_0^{t_w} chain_{la}(r) (chain_{bj} - chain_{aj})(t_m - r) dr
// for w <= m (lower triangle; the rest stays zero)
Eigen::MatrixXd jump_cross_core(const std::vector<Eigen::MatrixXd>& chain, int l, int a,
                                int b, int j, double dt) {
    const int K = static_cast<int>(chain.size());
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(K, K);
    for (int m = 1; m < K; ++m)
        for (int w = 1; w <= m; ++w) {
            const double f0 =
                chain[w - 1](l, a) * (chain[m - w + 1](b, j) - chain[m - w + 1](a, j));
            const double f1 = chain[w](l, a) * (chain[m - w](b, j) - chain[m - w](a, j));
            c(m, w) = c(m, w - 1) + 0.5 * dt * (f0 + f1);
        }
    return c;
}

// T(j, k) = int_[0, t_k] c(eta, t_j ^ eta) Law(d eta); Stieltjes cumulative
// in k with the endpoint-average convention of the kernel tables
Eigen::MatrixXd jump_completion_cross(const Eigen::MatrixXd& c, const LawIncrements& inc) {
    const int K = static_cast<int>(c.rows());
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(K, K);
    for (int j = 0; j < K; ++j)
        for (int k = 1; k < K; ++k) {
            const double add =
                inc.atomic ? inc.mass[k] * c(k, std::min(j, k))
                           : 0.5 * inc.mass[k] *
                                 (c(k - 1, std::min(j, k - 1)) + c(k, std::min(j, k)));
            T(j, k) = T(j, k - 1) + add;
        }
    return T;
}

} // namespace

LinearizationField linearize_infection(const ModelSpec& spec, const FluidTrajectory& fluid) {
    const int L = spec.L;
    if (spec.gamma == 1.0)
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                if (i != j && spec.kappa(i, j) > 0.0)
                    throw Error(ErrorCode::FCLT_INADMISSIBLE,
                                "gamma = 1 requires diagonal contact matrix");
    const int K = fluid.points();
    const bool driver_E = spec.driver_is_exposed_slot();
    LinearizationField lin;
    lin.coeff.assign(K, Eigen::MatrixXd::Zero(L, 4 * L));
    for (int k = 0; k < K; ++k) {
        Eigen::MatrixXd& C = lin.coeff[k];
        for (int i = 0; i < L; ++i) {
            const double s = fluid.S(k, i), e = fluid.E(k, i), ii = fluid.I(k, i),
                         r = fluid.R(k, i);
            const double U = s + e + ii + r;
            if (U <= 0.0) continue;
            double P = 0.0;  // kappa-weighted driver occupancy seen from patch i
            for (int l = 0; l < L; ++l)
                P += spec.kappa(i, l) * (driver_E ? fluid.E(k, l) : fluid.I(k, l));
            const double Upow1 = std::pow(U, 1.0 + spec.gamma);
            const double Upow = std::pow(U, spec.gamma);
            const double dU_only = -spec.gamma * s * P / Upow1;
            C(i, kS * L + i) = P * (U - spec.gamma * s) / Upow1;
            const int dblock = driver_E ? kE : kI;
            for (int b = 1; b < 4; ++b)
                C(i, b * L + i) = (b == dblock) ? s * (U - spec.gamma * P) / Upow1 : dU_only;
            for (int j = 0; j < L; ++j)
                if (j != i) C(i, dblock * L + j) += spec.kappa(i, j) * s / Upow;
        }
    }
    return lin;
}

Eigen::LLT<Eigen::MatrixXd> robust_cholesky(const Eigen::MatrixXd& cov) {
    const int n = static_cast<int>(cov.rows());
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) return llt;
    const double scale = std::max(cov.trace(), 1e-30);
    for (double jitter = 1e-12 * scale; jitter <= 1e-10 * scale * (1.0 + 1e-12);
         jitter *= 10.0) {
        llt.compute(cov + jitter * Eigen::MatrixXd::Identity(n, n));
        if (llt.info() == Eigen::Success) return llt;
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov,
                                                            Eigen::EigenvaluesOnly);
    throw Error(ErrorCode::NOT_PSD,
                "driver covariance is not positive semidefinite; smallest eigenvalue " +
                    std::to_string(es.eigenvalues().minCoeff()));
}

DriverSampler::DriverSampler(const ModelSpec& spec, const LawSet& laws,
                             const TransitionKernelTable& table,
                             const FluidTrajectory& fluid) {
    require_valid(spec);
    L_ = spec.L;
    K_ = fluid.points();
    dt_ = fluid.dt;
    recovered_to_susceptible_ = spec.recovered_to_susceptible();
    if (table.points() != K_ || std::abs(table.dt() - dt_) > 1e-12)
        throw Error(ErrorCode::GRID_MISMATCH, "kernel table and fluid solution grids differ");
    const int L = L_, K = K_;
    E0_ = fluid.E.row(0);
    I0_ = fluid.I.row(0);

    std::vector<Eigen::VectorXd> lam_cells(K);
    for (int k = 1; k < K; ++k) lam_cells[k] = cell_lambda(spec, k, dt_);

    // Brownian time changes
    var_A_.setZero(K, L);
    var_mig_.assign(4, Eigen::MatrixXd::Zero(K, L * L));
    const Eigen::MatrixXd* nus[4] = {&spec.nu_S, &spec.nu_E, &spec.nu_I, &spec.nu_R};
    const Eigen::MatrixXd zero_nu = Eigen::MatrixXd::Zero(L, L);
    if (!spec.uses_exposed_stage()) nus[1] = &zero_nu;
    for (int k = 1; k < K; ++k) {
        for (int i = 0; i < L; ++i) {
            var_A_(k, i) = var_A_(k - 1, i) +
                           0.5 * dt_ * lam_cells[k](i) *
                               (fluid.Upsilon(k - 1, i) + fluid.Upsilon(k, i));
            const double cellX[4] = {
                0.5 * dt_ * (fluid.S(k - 1, i) + fluid.S(k, i)),
                0.5 * dt_ * (fluid.E(k - 1, i) + fluid.E(k, i)),
                0.5 * dt_ * (fluid.I(k - 1, i) + fluid.I(k, i)),
                0.5 * dt_ * (fluid.R(k - 1, i) + fluid.R(k, i))};
            for (int c = 0; c < 4; ++c)
                for (int l = 0; l < L; ++l)
                    var_mig_[c](k, i * L + l) =
                        var_mig_[c](k - 1, i * L + l) +
                        (l == i ? 0.0 : (*nus[c])(i, l) * cellX[c]);
        }
    }

    // recovery kernel of the initially infectious (for the bridge)
    m_I01_.setZero(K, L * L);
    for (int k = 0; k < K; ++k)
        for (int l = 0; l < L; ++l)
            for (int i = 0; i < L; ++i) m_I01_(k, l * L + i) = table.QF0(k)(l, i);

    // migration pairs whose compensated jump counts ride on the same phase
    // chains as the completion flows; S and R jumps use fresh chains and stay
    // independent Brownian terms
    if (spec.uses_exposed_stage())
        for (int a = 0; a < L; ++a)
            for (int b = 0; b < L; ++b)
                if (a != b && spec.nu_E(a, b) > 0.0) {
                    pairsE_.from.push_back(a);
                    pairsE_.to.push_back(b);
                    pairsE_.rate.push_back(spec.nu_E(a, b));
                }
    for (int a = 0; a < L; ++a)
        for (int b = 0; b < L; ++b)
            if (a != b && spec.nu_I(a, b) > 0.0) {
                pairsI_.from.push_back(a);
                pairsI_.to.push_back(b);
                pairsI_.rate.push_back(spec.nu_I(a, b));
            }
    const int PE = pairsE_.count(), PI = pairsI_.count();

    // per-individual second moments of the jump martingales (rate factored
    // out; multiplied back in at block assembly):
    //   still*[l][p][m]        int_0^{t_m} P(phase ongoing, chain at from) dr
    //   T***[l][p][i](j, k)    E[m(t_j) 1{completion <= t_k at i}]
    // suffix 0 marks the initial-cohort laws (G0/H0), Q01 the initially
    // infectious (chain q, residual law F0)
    std::vector<std::vector<std::vector<double>>> stillE, stillE0, stillI01;
    std::vector<Eigen::MatrixXd> cumStillI_mat, cumStillI0_mat;
    using TGrid = std::vector<std::vector<std::vector<Eigen::MatrixXd>>>;
    TGrid TEE, TEE0, TEI, TEI0, TII, TII0, TQ01;
    if (PE + PI > 0) {
        const auto& pch = table.p_all();
        const auto& qch = table.q_all();
        const auto incG = law_increments(laws.G(), dt_, K);
        const auto incG0 = law_increments(laws.G0(), dt_, K);
        const auto incF = law_increments(laws.F(), dt_, K);
        const auto incFH0 = law_increments(laws.H0.infectious(), dt_, K);
        const auto incF0 = law_increments(laws.F0, dt_, K);
        const auto wG = outer_node_weights(incG);
        const auto wG0 = outer_node_weights(incG0);

        const auto cum_trapz = [&](auto f) {
            std::vector<double> c(K, 0.0);
            for (int m = 1; m < K; ++m) c[m] = c[m - 1] + 0.5 * dt_ * (f(m - 1) + f(m));
            return c;
        };
        const auto cum_q = [&](const LawIncrements& inc) {
            std::vector<Eigen::MatrixXd> out(K);
            out[0] = inc.mass[0] * qch[0];
            for (int s = 1; s < K; ++s)
                out[s] = inc.atomic
                             ? Eigen::MatrixXd(out[s - 1] + inc.mass[s] * qch[s])
                             : Eigen::MatrixXd(out[s - 1] +
                                               0.5 * inc.mass[s] * (qch[s - 1] + qch[s]));
            return out;
        };
        // conditional infectious-period survival at every latency node
        const auto cond_surv = [&](const JointDurationLaw& joint, const LawIncrements& marg) {
            std::vector<std::vector<double>> cs(K);
            if (joint.mode() == JointMode::Product) {
                const auto s = survival_from(marg);
                for (int m = 0; m < K; ++m) cs[m] = s;
            } else {
                for (int m = 0; m < K; ++m)
                    cs[m] = survival_from(conditional_increments(joint, marg, m, dt_, K));
            }
            return cs;
        };
        // P(infectious phase ongoing at t_n, chain at column patch | infected
        // at 0 in row patch); Stieltjes in the latency law
        const auto still_infectious = [&](const LawIncrements& outG,
                                          const std::vector<std::vector<double>>& cs) {
            std::vector<Eigen::MatrixXd> still(K);
            for (int n = 0; n < K; ++n) {
                const auto f = [&](int m) {
                    return Eigen::MatrixXd(cs[m][n - m] * (pch[m] * qch[n - m]));
                };
                Eigen::MatrixXd acc = outG.mass[0] * f(0);
                if (outG.atomic) {
                    for (int m = 1; m <= n; ++m)
                        if (outG.mass[m] != 0.0) acc += outG.mass[m] * f(m);
                } else {
                    Eigen::MatrixXd fp = f(0);
                    for (int m = 1; m <= n; ++m) {
                        const Eigen::MatrixXd fc = f(m);
                        acc += 0.5 * outG.mass[m] * (fp + fc);
                        fp = fc;
                    }
                }
                still[n] = acc;
            }
            return still;
        };

        if (PE > 0) {
            const auto survG = survival_from(incG);
            const auto survG0 = survival_from(incG0);
            stillE.assign(L, std::vector<std::vector<double>>(PE));
            stillE0 = stillE;
            // location-tilt cores c_j(t_m, t_w) of the exposed chain, one per
            // (start, pair, completion target)
            TGrid cP(L, std::vector<std::vector<Eigen::MatrixXd>>(PE,
                        std::vector<Eigen::MatrixXd>(L)));
            TEE.assign(L, std::vector<std::vector<Eigen::MatrixXd>>(PE,
                          std::vector<Eigen::MatrixXd>(L)));
            TEE0 = TEE;
            TEI.assign(L, std::vector<std::vector<Eigen::MatrixXd>>(PE,
                          std::vector<Eigen::MatrixXd>(L, Eigen::MatrixXd::Zero(K, K))));
            TEI0 = TEI;
            for (int l = 0; l < L; ++l)
                for (int p = 0; p < PE; ++p) {
                    const int a = pairsE_.from[p], b = pairsE_.to[p];
                    stillE[l][p] =
                        cum_trapz([&](int m) { return survG[m] * pch[m](l, a); });
                    stillE0[l][p] =
                        cum_trapz([&](int m) { return survG0[m] * pch[m](l, a); });
                    for (int j = 0; j < L; ++j) {
                        cP[l][p][j] = jump_cross_core(pch, l, a, b, j, dt_);
                        TEE[l][p][j] = jump_completion_cross(cP[l][p][j], incG);
                        TEE0[l][p][j] = jump_completion_cross(cP[l][p][j], incG0);
                    }
                }
            // full-completion crosses: the jump count seen up to the latency
            // node, times the conditional infectious completion from there
            const bool prod = laws.H.mode() == JointMode::Product;
            const bool prod0 = laws.H0.mode() == JointMode::Product;
            std::vector<Eigen::MatrixXd> cfbuf, cfbuf0;
            Eigen::VectorXd aj(K), bk(K);
            for (int m = 0; m + 1 < K; ++m) {
                const bool useG = wG[m] != 0.0, useG0 = wG0[m] != 0.0;
                if (!useG && !useG0) continue;
                const std::vector<Eigen::MatrixXd>* CF = nullptr;
                const std::vector<Eigen::MatrixXd>* CF0 = nullptr;
                if (useG) {
                    if (prod) {
                        CF = &table.QF_all();
                    } else {
                        cfbuf = cum_q(conditional_increments(laws.H, incF, m, dt_, K));
                        CF = &cfbuf;
                    }
                }
                if (useG0) {
                    if (prod0) {
                        CF0 = &table.QFH0_all();
                    } else {
                        cfbuf0 = cum_q(conditional_increments(laws.H0, incFH0, m, dt_, K));
                        CF0 = &cfbuf0;
                    }
                }
                for (int l = 0; l < L; ++l)
                    for (int p = 0; p < PE; ++p)
                        for (int lp = 0; lp < L; ++lp) {
                            const Eigen::MatrixXd& c = cP[l][p][lp];
                            for (int j = 0; j < K; ++j) aj(j) = c(m, std::min(j, m));
                            for (int i = 0; i < L; ++i) {
                                if (useG) {
                                    bk.setZero();
                                    for (int k = m; k < K; ++k)
                                        bk(k) = wG[m] * (*CF)[k - m](lp, i);
                                    TEI[l][p][i].noalias() += aj * bk.transpose();
                                }
                                if (useG0) {
                                    bk.setZero();
                                    for (int k = m; k < K; ++k)
                                        bk(k) = wG0[m] * (*CF0)[k - m](lp, i);
                                    TEI0[l][p][i].noalias() += aj * bk.transpose();
                                }
                            }
                        }
            }
        }

        if (PI > 0) {
            const auto survF0 = survival_from(incF0);
            const auto csH = cond_surv(laws.H, incF);
            const auto csH0 = cond_surv(laws.H0, incFH0);
            const auto sI = still_infectious(incG, csH);
            const auto sI0 = still_infectious(incG0, csH0);
            cumStillI_mat.assign(K, Eigen::MatrixXd::Zero(L, L));
            cumStillI0_mat = cumStillI_mat;
            for (int m = 1; m < K; ++m) {
                cumStillI_mat[m] = cumStillI_mat[m - 1] + 0.5 * dt_ * (sI[m - 1] + sI[m]);
                cumStillI0_mat[m] =
                    cumStillI0_mat[m - 1] + 0.5 * dt_ * (sI0[m - 1] + sI0[m]);
            }
            stillI01.assign(L, std::vector<std::vector<double>>(PI));
            TGrid cQ(L, std::vector<std::vector<Eigen::MatrixXd>>(PI,
                        std::vector<Eigen::MatrixXd>(L)));
            TQ01.assign(L, std::vector<std::vector<Eigen::MatrixXd>>(PI,
                           std::vector<Eigen::MatrixXd>(L)));
            TII.assign(L, std::vector<std::vector<Eigen::MatrixXd>>(PI,
                          std::vector<Eigen::MatrixXd>(L, Eigen::MatrixXd::Zero(K, K))));
            TII0 = TII;
            for (int l = 0; l < L; ++l)
                for (int p = 0; p < PI; ++p) {
                    const int a = pairsI_.from[p], b = pairsI_.to[p];
                    stillI01[l][p] =
                        cum_trapz([&](int m) { return survF0[m] * qch[m](l, a); });
                    for (int j = 0; j < L; ++j) {
                        cQ[l][p][j] = jump_cross_core(qch, l, a, b, j, dt_);
                        TQ01[l][p][j] = jump_completion_cross(cQ[l][p][j], incF0);
                    }
                }
            // infectious-phase jump counts cross the full completion through
            // the latency chain: start the core at the post-latency location
            const bool prod = laws.H.mode() == JointMode::Product;
            const bool prod0 = laws.H0.mode() == JointMode::Product;
            TGrid EpreP, EpreP0;
            if (prod || prod0) {
                EpreP.assign(L, std::vector<std::vector<Eigen::MatrixXd>>(PI,
                                std::vector<Eigen::MatrixXd>(L)));
                EpreP0 = EpreP;
                for (int lp = 0; lp < L; ++lp)
                    for (int p = 0; p < PI; ++p)
                        for (int i = 0; i < L; ++i) {
                            if (prod)
                                EpreP[lp][p][i] = jump_completion_cross(cQ[lp][p][i], incF);
                            if (prod0)
                                EpreP0[lp][p][i] =
                                    jump_completion_cross(cQ[lp][p][i], incFH0);
                        }
            }
            for (int m = 0; m + 1 < K; ++m) {
                const bool useG = wG[m] != 0.0, useG0 = wG0[m] != 0.0;
                if (!useG && !useG0) continue;
                const int n = K - m;
                for (int lp = 0; lp < L; ++lp)
                    for (int p = 0; p < PI; ++p) {
                        Eigen::MatrixXd epbuf, epbuf0;
                        for (int i = 0; i < L; ++i) {
                            const Eigen::MatrixXd* Ep = nullptr;
                            const Eigen::MatrixXd* Ep0 = nullptr;
                            if (useG) {
                                if (prod) {
                                    Ep = &EpreP[lp][p][i];
                                } else {
                                    epbuf = jump_completion_cross(
                                        cQ[lp][p][i],
                                        conditional_increments(laws.H, incF, m, dt_, K));
                                    Ep = &epbuf;
                                }
                            }
                            if (useG0) {
                                if (prod0) {
                                    Ep0 = &EpreP0[lp][p][i];
                                } else {
                                    epbuf0 = jump_completion_cross(
                                        cQ[lp][p][i],
                                        conditional_increments(laws.H0, incFH0, m, dt_, K));
                                    Ep0 = &epbuf0;
                                }
                            }
                            for (int l = 0; l < L; ++l) {
                                if (useG) {
                                    const double w = wG[m] * pch[m](l, lp);
                                    if (w != 0.0)
                                        TII[l][p][i].block(m, m, n, n).noalias() +=
                                            w * Ep->block(0, 0, n, n);
                                }
                                if (useG0) {
                                    const double w = wG0[m] * pch[m](l, lp);
                                    if (w != 0.0)
                                        TII0[l][p][i].block(m, m, n, n).noalias() +=
                                            w * Ep0->block(0, 0, n, n);
                                }
                            }
                        }
                    }
            }
        }
    }

    // correlated Gaussian blocks per origin patch, values at grid times 1..K-1
    const int n1 = K - 1;
    const int dim = 2 * L * n1;
    cov_init_.assign(L, Eigen::MatrixXd());
    chol_init_.resize(L);
    has_init_.assign(L, false);
    cov_flow_.assign(L, Eigen::MatrixXd());
    chol_flow_.resize(L);
    has_flow_.assign(L, false);
    cov_i01_.assign(L, Eigen::MatrixXd());
    chol_i01_.resize(L);
    has_i01_.assign(L, false);

    const auto idx = [n1, L](int comp, int i, int k) { return (comp * L + i) * n1 + (k - 1); };

    for (int l = 0; l < L; ++l) {
        if (E0_(l) > 0.0) {
            // flows plus the cohort's own migration jump martingales; the
            // latter are centered, so their crosses carry no product term
            const int dimi = dim + (PE + PI) * n1;
            Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dimi, dimi);
            const double e0 = E0_(l);
            for (int i = 0; i < L; ++i)
                for (int i2 = 0; i2 < L; ++i2)
                    for (int k = 1; k < K; ++k)
                        for (int k2 = 1; k2 < K; ++k2) {
                            const int mn = std::min(k, k2);
                            // completed-latency flow block
                            double v = -e0 * table.PG0(k)(l, i) * table.PG0(k2)(l, i2);
                            if (i == i2) v += e0 * table.PG0(mn)(l, i);
                            cov(idx(0, i, k), idx(0, i2, k2)) = v;
                            // full-completion flow block
                            double w = -e0 * table.Phi0(k)(l, i) * table.Phi0(k2)(l, i2);
                            if (i == i2) w += e0 * table.Phi0(mn)(l, i);
                            cov(idx(1, i, k), idx(1, i2, k2)) = w;
                            // cross block (latency completion at i by t_k,
                            // full completion at i2 by t_k2)
                            const double x =
                                e0 * (phi_cross0(table, laws, l, i, i2, k * dt_, k2 * dt_) -
                                      table.PG0(k)(l, i) * table.Phi0(k2)(l, i2));
                            cov(idx(0, i, k), idx(1, i2, k2)) = x;
                            cov(idx(1, i2, k2), idx(0, i, k)) = x;
                        }
            const auto prow = [&](int p, int k) { return dim + p * n1 + (k - 1); };
            for (int p = 0; p < PE + PI; ++p) {
                const bool eP = p < PE;
                const int pp = eP ? p : p - PE;
                const double rate = eP ? pairsE_.rate[pp] : pairsI_.rate[pp];
                const int a = eP ? pairsE_.from[pp] : pairsI_.from[pp];
                for (int k = 1; k < K; ++k)
                    for (int k2 = 1; k2 < K; ++k2) {
                        const int mn = std::min(k, k2);
                        cov(prow(p, k), prow(p, k2)) =
                            e0 * rate *
                            (eP ? stillE0[l][pp][mn] : cumStillI0_mat[mn](l, a));
                        for (int i2 = 0; i2 < L; ++i2) {
                            if (eP) {
                                const double x = e0 * rate * TEE0[l][pp][i2](k, k2);
                                cov(prow(p, k), idx(0, i2, k2)) = x;
                                cov(idx(0, i2, k2), prow(p, k)) = x;
                            }
                            const double y =
                                e0 * rate *
                                (eP ? TEI0[l][pp][i2](k, k2) : TII0[l][pp][i2](k, k2));
                            cov(prow(p, k), idx(1, i2, k2)) = y;
                            cov(idx(1, i2, k2), prow(p, k)) = y;
                        }
                    }
            }
            cov_init_[l] = cov;
            chol_init_[l] = robust_cholesky(cov);
            has_init_[l] = true;
        }
        if (spec.lambda.max_values()(l) > 0.0) {
            // the infection count A_l, the completion flows and the E/I
            // migration jump counts of the same lineage are integrals against
            // the same compensated point measure, so they are sampled jointly
            const int dimf = dim + n1 + (PE + PI) * n1;
            const auto idxA = [dim](int k) { return dim + (k - 1); };
            Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dimf, dimf);
            // V_K(i, m) = int_0^{t_m} Kern_{l,i}(t_m - s) lambda_l(s) Ups_l(s) ds
            Eigen::MatrixXd V_PG = Eigen::MatrixXd::Zero(L, K), V_Phi = V_PG;
            for (int m = 1; m < K; ++m)
                for (int j = 0; j <= m; ++j) {
                    const double w = node_weight(lam_cells, j, m, l, dt_) *
                                     fluid.Upsilon(j, l);
                    if (w == 0.0) continue;
                    for (int i = 0; i < L; ++i) {
                        V_PG(i, m) += w * table.PG(m - j)(l, i);
                        V_Phi(i, m) += w * table.Phi(m - j)(l, i);
                    }
                }
            for (int i = 0; i < L; ++i)
                for (int k = 1; k < K; ++k)
                    for (int k2 = 1; k2 < K; ++k2) {
                        const int mn = std::min(k, k2);
                        cov(idx(0, i, k), idx(0, i, k2)) = V_PG(i, mn);
                        cov(idx(1, i, k), idx(1, i, k2)) = V_Phi(i, mn);
                    }
            for (int k = 1; k < K; ++k)
                for (int k2 = 1; k2 < K; ++k2)
                    cov(idxA(k), idxA(k2)) = var_A_(std::min(k, k2), l);
            // Cov(A_l(t), flow_i(t2)) = int_0^{t ^ t2} Kern(t2 - s) lam Ups ds;
            // the truncation point is min(k, k2) <= k2, so tabulate it once
            // per k2 with a running interior sum
            for (int i = 0; i < L; ++i)
                for (int k2 = 1; k2 < K; ++k2) {
                    std::vector<double> cPG(k2 + 1, 0.0), cPhi(k2 + 1, 0.0);
                    double intPG = 0.5 * dt_ * lam_cells[1](l) * fluid.Upsilon(0, l) *
                                   table.PG(k2)(l, i);
                    double intPhi = 0.5 * dt_ * lam_cells[1](l) * fluid.Upsilon(0, l) *
                                    table.Phi(k2)(l, i);
                    for (int mn = 1; mn <= k2; ++mn) {
                        const double u = fluid.Upsilon(mn, l);
                        const double wend = 0.5 * dt_ * lam_cells[mn](l) * u;
                        cPG[mn] = intPG + wend * table.PG(k2 - mn)(l, i);
                        cPhi[mn] = intPhi + wend * table.Phi(k2 - mn)(l, i);
                        const double wint = (mn + 1 < K)
                                                ? 0.5 * dt_ *
                                                      (lam_cells[mn](l) +
                                                       lam_cells[mn + 1](l)) *
                                                      u
                                                : wend;
                        intPG += wint * table.PG(k2 - mn)(l, i);
                        intPhi += wint * table.Phi(k2 - mn)(l, i);
                    }
                    for (int k = 1; k < K; ++k) {
                        const int mn = std::min(k, k2);
                        cov(idxA(k), idx(0, i, k2)) = cPG[mn];
                        cov(idx(0, i, k2), idxA(k)) = cPG[mn];
                        cov(idxA(k), idx(1, i, k2)) = cPhi[mn];
                        cov(idx(1, i, k2), idxA(k)) = cPhi[mn];
                    }
                }
            // cross block: for evaluation times (t, t') the integrand couples
            // the joint completion kernel at lags (t^t'-s, t'-s)
            for (int i = 0; i < L; ++i)
                for (int i2 = 0; i2 < L; ++i2) {
                    // psi[d][m] = joint kernel at (t_m, t_{m+d})
                    std::vector<std::vector<double>> psi(K);
                    for (int d = 0; d < K; ++d) {
                        psi[d].resize(K - d);
                        for (int m = 0; m + d < K; ++m)
                            psi[d][m] =
                                phi_cross(table, laws, l, i, i2, m * dt_, (m + d) * dt_);
                    }
                    for (int k = 1; k < K; ++k)
                        for (int k2 = 1; k2 < K; ++k2) {
                            const int a = std::min(k, k2);
                            const int d = k2 > k ? k2 - k : 0;
                            double acc = 0.0;
                            for (int j = 0; j <= a; ++j) {
                                const double w = node_weight(lam_cells, j, a, l, dt_) *
                                                 fluid.Upsilon(j, l);
                                if (w == 0.0) continue;
                                const int alpha = a - j;
                                // compensated point-measure integrals: the
                                // cross moment is the joint kernel itself
                                acc += w * psi[d][alpha];
                            }
                            cov(idx(0, i, k), idx(1, i2, k2)) = acc;
                            cov(idx(1, i2, k2), idx(0, i, k)) = acc;
                        }
                }
            // migration pair rows: per-individual moments convolved along
            // the infection intensity; pairs are mutually orthogonal (no
            // shared jumps) and orthogonal to A (zero conditional mean)
            const auto prowf = [&](int p, int k) { return dim + n1 + p * n1 + (k - 1); };
            for (int p = 0; p < PE + PI; ++p) {
                const bool eP = p < PE;
                const int pp = eP ? p : p - PE;
                const double rate = eP ? pairsE_.rate[pp] : pairsI_.rate[pp];
                const int a = eP ? pairsE_.from[pp] : pairsI_.from[pp];
                std::vector<double> Vp(K, 0.0);
                for (int mn = 1; mn < K; ++mn) {
                    double acc = 0.0;
                    for (int j = 0; j <= mn; ++j) {
                        const double w =
                            node_weight(lam_cells, j, mn, l, dt_) * fluid.Upsilon(j, l);
                        if (w == 0.0) continue;
                        acc += w * (eP ? stillE[l][pp][mn - j]
                                       : cumStillI_mat[mn - j](l, a));
                    }
                    Vp[mn] = rate * acc;
                }
                for (int k = 1; k < K; ++k)
                    for (int k2 = 1; k2 < K; ++k2)
                        cov(prowf(p, k), prowf(p, k2)) = Vp[std::min(k, k2)];
                for (int i2 = 0; i2 < L; ++i2) {
                    const Eigen::MatrixXd* TE = eP ? &TEE[l][pp][i2] : nullptr;
                    const Eigen::MatrixXd* TI =
                        eP ? &TEI[l][pp][i2] : &TII[l][pp][i2];
                    for (int k = 1; k < K; ++k)
                        for (int k2 = 1; k2 < K; ++k2) {
                            const int mn = std::min(k, k2);
                            double accE = 0.0, accI = 0.0;
                            for (int j = 0; j <= mn; ++j) {
                                const double w = node_weight(lam_cells, j, mn, l, dt_) *
                                                 fluid.Upsilon(j, l);
                                if (w == 0.0) continue;
                                if (TE) accE += w * (*TE)(k - j, k2 - j);
                                accI += w * (*TI)(k - j, k2 - j);
                            }
                            if (TE) {
                                cov(prowf(p, k), idx(0, i2, k2)) = rate * accE;
                                cov(idx(0, i2, k2), prowf(p, k)) = rate * accE;
                            }
                            cov(prowf(p, k), idx(1, i2, k2)) = rate * accI;
                            cov(idx(1, i2, k2), prowf(p, k)) = rate * accI;
                        }
                }
            }
            cov_flow_[l] = cov;
            chol_flow_[l] = robust_cholesky(cov);
            has_flow_[l] = true;
        }
        if (I0_(l) > 0.0 && PI > 0) {
            // initially-infectious cohort: empirical completion fields (with
            // the fixed-count product term) plus its own jump martingales
            const int dim3 = (L + PI) * n1;
            Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim3, dim3);
            const double i0 = I0_(l);
            const auto f3 = [n1](int i, int k) { return i * n1 + (k - 1); };
            for (int i = 0; i < L; ++i)
                for (int i2 = 0; i2 < L; ++i2)
                    for (int k = 1; k < K; ++k)
                        for (int k2 = 1; k2 < K; ++k2) {
                            double v =
                                -i0 * table.QF0(k)(l, i) * table.QF0(k2)(l, i2);
                            if (i == i2) v += i0 * table.QF0(std::min(k, k2))(l, i);
                            cov(f3(i, k), f3(i2, k2)) = v;
                        }
            for (int p = 0; p < PI; ++p) {
                const double rate = pairsI_.rate[p];
                const auto pr = [&](int k) { return (L + p) * n1 + (k - 1); };
                for (int k = 1; k < K; ++k)
                    for (int k2 = 1; k2 < K; ++k2) {
                        cov(pr(k), pr(k2)) =
                            i0 * rate * stillI01[l][p][std::min(k, k2)];
                        for (int i2 = 0; i2 < L; ++i2) {
                            const double x = i0 * rate * TQ01[l][p][i2](k, k2);
                            cov(pr(k), f3(i2, k2)) = x;
                            cov(f3(i2, k2), pr(k)) = x;
                        }
                    }
            }
            cov_i01_[l] = cov;
            chol_i01_[l] = robust_cholesky(cov);
            has_i01_[l] = true;
        }
    }
}

DriverPaths DriverSampler::sample(Rng& rng, DriverComponents* comps) const {
    const int L = L_, K = K_;
    DriverPaths out;
    out.WS.setZero(K, L);
    out.WE.setZero(K, L);
    out.WI.setZero(K, L);
    out.WR.setZero(K, L);
    if (comps) {
        for (int c = 0; c < 4; ++c) comps->Mmig[c].setZero(K, L * L);
        comps->E0hat.assign(L, Eigen::MatrixXd::Zero(K, L));
        comps->I01hat.assign(L, Eigen::MatrixXd::Zero(K, L));
        comps->I02hat.assign(L, Eigen::MatrixXd::Zero(K, L));
        comps->Ehat.assign(L, Eigen::MatrixXd::Zero(K, L));
        comps->Ihat.assign(L, Eigen::MatrixXd::Zero(K, L));
    }

    // infection-count noise; drawn jointly with the completion flows of the
    // same origin in the correlated blocks below
    Eigen::MatrixXd MA = Eigen::MatrixXd::Zero(K, L);
    const int PE = pairsE_.count(), PI = pairsI_.count();
    const int n1 = K - 1;

    // migration nets: independent Brownian terms for S and R; the E/I jump
    // martingales are assembled from the correlated blocks below
    Eigen::MatrixXd net[4];
    for (int c = 0; c < 4; ++c) net[c].setZero(K, L);
    for (const int c : {0, 3}) {
        for (int i = 0; i < L; ++i)
            for (int l = 0; l < L; ++l) {
                if (l == i) continue;
                double path = 0.0;
                for (int k = 1; k < K; ++k) {
                    const double dv =
                        var_mig_[c](k, i * L + l) - var_mig_[c](k - 1, i * L + l);
                    path += dv > 0.0 ? std::sqrt(dv) * rng.normal() : 0.0;
                    net[c](k, l) += path;  // arrival at l
                    net[c](k, i) -= path;  // departure from i
                    if (comps) comps->Mmig[c](k, i * L + l) = path;
                }
            }
    }
    // one pair path contribution (several origin cohorts add up)
    const auto add_pair = [&](int c, const MigPairs& pairs, int p, int k, double v) {
        net[c](k, pairs.to[p]) += v;
        net[c](k, pairs.from[p]) -= v;
        if (comps) comps->Mmig[c](k, pairs.from[p] * L + pairs.to[p]) += v;
    };

    // initially infectious: with E/I jump pairs present the completion fields
    // and the cohort's migration martingales come from one Cholesky block;
    // otherwise the exact empirical bridge construction is kept: independent
    // BMs W_i run at the recovery kernel clock plus one extra BM carrying the
    // not-yet-recovered mass, recentered by m_i(t) times their total endpoint.
    Eigen::MatrixXd I01 = Eigen::MatrixXd::Zero(K, L);  // summed over origins
    for (int l = 0; l < L; ++l) {
        if (I0_(l) <= 0.0) continue;
        if (has_i01_[l]) {
            const int dim3 = static_cast<int>(cov_i01_[l].rows());
            Eigen::VectorXd z3(dim3);
            for (int j = 0; j < dim3; ++j) z3(j) = rng.normal();
            const Eigen::VectorXd g3 = chol_i01_[l].matrixL() * z3;
            for (int i = 0; i < L; ++i)
                for (int k = 1; k < K; ++k) {
                    const double v = g3(i * n1 + (k - 1));
                    I01(k, i) += v;
                    if (comps) comps->I01hat[l](k, i) = v;
                }
            for (int p = 0; p < PI; ++p)
                for (int k = 1; k < K; ++k)
                    add_pair(2, pairsI_, p, k, g3((L + p) * n1 + (k - 1)));
            continue;
        }
        Eigen::MatrixXd W = Eigen::MatrixXd::Zero(K, L);
        double endpoint_sum = 0.0;
        for (int i = 0; i < L; ++i) {
            for (int k = 1; k < K; ++k) {
                const double dm = m_I01_(k, l * L + i) - m_I01_(k - 1, l * L + i);
                W(k, i) = W(k - 1, i) + (dm > 0.0 ? std::sqrt(dm) * rng.normal() : 0.0);
            }
            endpoint_sum += W(K - 1, i);
        }
        double leftover = 1.0;
        for (int i = 0; i < L; ++i) leftover -= m_I01_(K - 1, l * L + i);
        const double V =
            endpoint_sum + (leftover > 0.0 ? std::sqrt(leftover) * rng.normal() : 0.0);
        const double scale = std::sqrt(I0_(l));
        for (int i = 0; i < L; ++i)
            for (int k = 1; k < K; ++k) {
                const double v = scale * (W(k, i) - m_I01_(k, l * L + i) * V);
                I01(k, i) += v;
                if (comps) comps->I01hat[l](k, i) = v;
            }
    }

    // correlated blocks
    const auto idx = [n1, L](int comp, int i, int k) { return (comp * L + i) * n1 + (k - 1); };
    Eigen::MatrixXd E0flow = Eigen::MatrixXd::Zero(K, L), I02 = E0flow;
    Eigen::MatrixXd Eflow = E0flow, Iflow = E0flow;
    const int dim = 2 * L * n1;
    for (int l = 0; l < L; ++l) {
        if (has_init_[l]) {
            const int dimi = static_cast<int>(cov_init_[l].rows());
            Eigen::VectorXd z(dimi);
            for (int j = 0; j < dimi; ++j) z(j) = rng.normal();
            const Eigen::VectorXd g = chol_init_[l].matrixL() * z;
            for (int i = 0; i < L; ++i)
                for (int k = 1; k < K; ++k) {
                    E0flow(k, i) += g(idx(0, i, k));
                    I02(k, i) += g(idx(1, i, k));
                    if (comps) {
                        comps->E0hat[l](k, i) = g(idx(0, i, k));
                        comps->I02hat[l](k, i) = g(idx(1, i, k));
                    }
                }
            for (int p = 0; p < PE; ++p)
                for (int k = 1; k < K; ++k)
                    add_pair(1, pairsE_, p, k, g(dim + p * n1 + (k - 1)));
            for (int p = 0; p < PI; ++p)
                for (int k = 1; k < K; ++k)
                    add_pair(2, pairsI_, p, k, g(dim + (PE + p) * n1 + (k - 1)));
        }
        if (has_flow_[l]) {
            const int dimf = static_cast<int>(cov_flow_[l].rows());
            Eigen::VectorXd zf(dimf);
            for (int j = 0; j < dimf; ++j) zf(j) = rng.normal();
            const Eigen::VectorXd gf = chol_flow_[l].matrixL() * zf;
            for (int i = 0; i < L; ++i)
                for (int k = 1; k < K; ++k) {
                    Eflow(k, i) += gf(idx(0, i, k));
                    Iflow(k, i) += gf(idx(1, i, k));
                    if (comps) {
                        comps->Ehat[l](k, i) = gf(idx(0, i, k));
                        comps->Ihat[l](k, i) = gf(idx(1, i, k));
                    }
                }
            for (int k = 1; k < K; ++k) MA(k, l) = gf(dim + (k - 1));
            const int offM = dim + n1;
            for (int p = 0; p < PE; ++p)
                for (int k = 1; k < K; ++k)
                    add_pair(1, pairsE_, p, k, gf(offM + p * n1 + (k - 1)));
            for (int p = 0; p < PI; ++p)
                for (int k = 1; k < K; ++k)
                    add_pair(2, pairsI_, p, k, gf(offM + (PE + p) * n1 + (k - 1)));
        }
    }
    if (comps) comps->MA = MA;

    for (int k = 0; k < K; ++k)
        for (int i = 0; i < L; ++i) {
            const double latency_out = E0flow(k, i) + Eflow(k, i);
            const double recovery_out = I01(k, i) + I02(k, i) + Iflow(k, i);
            out.WS(k, i) = -MA(k, i) + net[0](k, i);
            out.WE(k, i) = MA(k, i) + net[1](k, i) - latency_out;
            out.WI(k, i) = net[2](k, i) + latency_out - recovery_out;
            if (recovered_to_susceptible_) {
                out.WS(k, i) += recovery_out;
                out.WR(k, i) = net[3](k, i);
            } else {
                out.WR(k, i) = net[3](k, i) + recovery_out;
            }
        }
    return out;
}

double DriverSampler::driver_covariance(const std::string& family, int l, int i, int l2,
                                        int i2, double t, double t2) const {
    const auto kidx = [this](double s) {
        const double r = s / dt_;
        const int k = static_cast<int>(std::lround(r));
        if (k < 0 || k >= K_ || std::abs(r - k) > 1e-9 * std::max(1.0, r))
            throw Error(ErrorCode::OFF_GRID, "time " + std::to_string(s) + " is off the grid");
        return k;
    };
    const int k = kidx(t), k2 = kidx(t2);
    const int mn = std::min(k, k2);
    const int L = L_, n1 = K_ - 1;
    const auto idx = [n1, L](int comp, int j, int a) { return (comp * L + j) * n1 + (a - 1); };

    if (family == "MA") return i == i2 ? var_A_(mn, i) : 0.0;
    const char* mig_names[4] = {"MS", "ME", "MI", "MR"};
    for (int c = 0; c < 4; ++c)
        if (family == mig_names[c])
            return (l == l2 && i == i2 && l != i) ? var_mig_[c](mn, l * L + i) : 0.0;

    if (family == "I01") {
        if (l != l2 || I0_(l) <= 0.0) return 0.0;
        const double mi = m_I01_(k, l * L + i), mi2 = m_I01_(k2, l * L + i2);
        return I0_(l) * ((i == i2 ? m_I01_(mn, l * L + i) : 0.0) - mi * mi2);
    }
    if (family == "MExE" || family == "MExI" || family == "MIxI" ||
        family == "ME0xE0" || family == "ME0xI02" || family == "MI0xI02" ||
        family == "MI01xI01") {
        // (l, i) is the ordered migration pair, l2 the origin patch, i2 the
        // completion target patch
        const bool epair =
            family == "MExE" || family == "MExI" || family == "ME0xE0" ||
            family == "ME0xI02";
        const int p = (epair ? pairsE_ : pairsI_).find(l, i);
        if (p < 0 || k == 0 || k2 == 0) return 0.0;
        const int PE = pairsE_.count();
        const int prow = (epair ? p : PE + p) * n1 + (k - 1);
        const int dim = 2 * L * n1;
        if (family == "MI01xI01") {
            if (!has_i01_[l2]) return 0.0;
            return cov_i01_[l2]((L + p) * n1 + (k - 1), i2 * n1 + (k2 - 1));
        }
        if (family == "ME0xE0" || family == "ME0xI02" || family == "MI0xI02") {
            if (!has_init_[l2]) return 0.0;
            return cov_init_[l2](dim + prow, idx(family == "ME0xE0" ? 0 : 1, i2, k2));
        }
        if (!has_flow_[l2]) return 0.0;
        return cov_flow_[l2](dim + n1 + prow, idx(family == "MExE" ? 0 : 1, i2, k2));
    }
    if (family == "AxE" || family == "AxI") {
        // cross of the origin-l infection count with the origin-l flows
        if (l != l2 || k == 0 || k2 == 0 || !has_flow_[l]) return 0.0;
        const int dim = 2 * L * n1;
        return cov_flow_[l](dim + (k - 1), idx(family == "AxE" ? 0 : 1, i2, k2));
    }
    if (k == 0 || k2 == 0 || l != l2) {
        if (family == "E0" || family == "I02" || family == "E0xI02" || family == "E" ||
            family == "I" || family == "ExI")
            return 0.0;
        throw Error(ErrorCode::UNKNOWN_FAMILY, "driver family \"" + family + "\"");
    }
    if (family == "E0" || family == "I02" || family == "E0xI02") {
        if (!has_init_[l]) return 0.0;
        const Eigen::MatrixXd& cov = cov_init_[l];
        if (family == "E0") return cov(idx(0, i, k), idx(0, i2, k2));
        if (family == "I02") return cov(idx(1, i, k), idx(1, i2, k2));
        return cov(idx(0, i, k), idx(1, i2, k2));
    }
    if (family == "E" || family == "I" || family == "ExI") {
        if (!has_flow_[l]) return 0.0;
        const Eigen::MatrixXd& cov = cov_flow_[l];
        if (family == "E") return cov(idx(0, i, k), idx(0, i2, k2));
        if (family == "I") return cov(idx(1, i, k), idx(1, i2, k2));
        return cov(idx(0, i, k), idx(1, i2, k2));
    }
    throw Error(ErrorCode::UNKNOWN_FAMILY, "driver family \"" + family + "\"");
}

FluctuationPath solve_fluctuations(const ModelSpec& spec, const TransitionKernelTable& table,
                                   const FluidTrajectory& fluid, const LinearizationField& lin,
                                   const DriverPaths& drivers, const FcltOptions& opts) {
    const int L = spec.L;
    const int K = fluid.points();
    const double dt = fluid.dt;
    if (table.points() != K || std::abs(table.dt() - dt) > 1e-12)
        throw Error(ErrorCode::GRID_MISMATCH, "kernel table and fluid solution grids differ");
    if (static_cast<int>(lin.coeff.size()) != K)
        throw Error(ErrorCode::GRID_MISMATCH, "linearization grid mismatch");
    if (drivers.WS.rows() != K || drivers.WS.cols() != L)
        throw Error(ErrorCode::GRID_MISMATCH, "driver path grid mismatch");

    const auto hat0 = [L](const Eigen::VectorXd& v, const char* name) {
        if (v.size() == 0) return Eigen::VectorXd(Eigen::VectorXd::Zero(L));
        if (v.size() != L)
            throw Error(ErrorCode::DIM_MISMATCH,
                        std::string(name) + " must have L entries");
        return v;
    };
    const Eigen::VectorXd Shat0 = hat0(opts.Shat0, "Shat0"), Ehat0 = hat0(opts.Ehat0, "Ehat0"),
                          Ihat0 = hat0(opts.Ihat0, "Ihat0"), Rhat0 = hat0(opts.Rhat0, "Rhat0");

    const Eigen::MatrixXd QS = GeneratorMatrix(spec.nu_S).Q().transpose();
    const Eigen::MatrixXd QE = (spec.uses_exposed_stage()
                                    ? GeneratorMatrix(spec.nu_E).Q()
                                    : Eigen::MatrixXd::Zero(L, L))
                                   .transpose();
    const Eigen::MatrixXd QI = GeneratorMatrix(spec.nu_I).Q().transpose();
    const Eigen::MatrixXd QR = GeneratorMatrix(spec.nu_R).Q().transpose();
    const Eigen::MatrixXd PG0T = table.PG(0).transpose();
    const Eigen::MatrixXd Phi0T = table.Phi(0).transpose();
    const bool rts = spec.recovered_to_susceptible();

    FluctuationPath path;
    path.dt = dt;
    path.S.resize(K, L);
    path.E.resize(K, L);
    path.I.resize(K, L);
    path.R.resize(K, L);
    path.Upsilon.resize(K, L);
    path.S.row(0) = Shat0;
    path.E.row(0) = Ehat0;
    path.I.row(0) = Ihat0;
    path.R.row(0) = Rhat0;
    Eigen::VectorXd x(4 * L);
    x << Shat0, Ehat0, Ihat0, Rhat0;
    path.Upsilon.row(0) = lin.coeff[0] * x;

    std::vector<double> g(static_cast<std::size_t>(K) * L, 0.0);
    Eigen::VectorXd intU_prefix = Eigen::VectorXd::Zero(L);
    Eigen::VectorXd cumS = Eigen::VectorXd::Zero(L), cumE = cumS, cumI = cumS, cumR = cumS;
    Eigen::VectorXd D_base(L), E2_base(L);

    for (int k = 1; k < K; ++k) {
        const Eigen::VectorXd lam_cell = cell_lambda(spec, k, dt);
        const Eigen::VectorXd lam_prev_cell = k >= 2 ? cell_lambda(spec, k - 1, dt) : lam_cell;
        const Eigen::VectorXd S_prev = path.S.row(k - 1), E_prev = path.E.row(k - 1),
                              I_prev = path.I.row(k - 1), R_prev = path.R.row(k - 1);
        const Eigen::VectorXd Ups_prev = path.Upsilon.row(k - 1);

        for (int l = 0; l < L; ++l) {
            const double lam_avg =
                (k >= 2) ? 0.5 * (lam_prev_cell(l) + lam_cell(l)) : 0.5 * lam_cell(l);
            g[static_cast<std::size_t>(k - 1) * L + l] = dt * lam_avg * Ups_prev(l);
        }

        D_base.setZero();
        E2_base.setZero();
        for (int j = 0; j < k; ++j) {
            const Eigen::MatrixXd& PGm = table.PG(k - j);
            const Eigen::MatrixXd& Phim = table.Phi(k - j);
            for (int l = 0; l < L; ++l) {
                const double w = g[static_cast<std::size_t>(j) * L + l];
                if (w == 0.0) continue;
                for (int i = 0; i < L; ++i) {
                    D_base(i) += PGm(l, i) * w;
                    E2_base(i) += Phim(l, i) * w;
                }
            }
        }

        // deterministic initial-fluctuation completion terms
        const Eigen::VectorXd c_E0 = table.PG0(k).transpose() * Ehat0;
        const Eigen::VectorXd c_I0 = table.QF0(k).transpose() * Ihat0;
        Eigen::VectorXd adv_in(L), rec_in0(L);
        if (opts.strict_paper_indices) {
            for (int i = 0; i < L; ++i) {
                double sum_pg = 0.0, sum_phi = 0.0;
                for (int l = 0; l < L; ++l) {
                    sum_pg += table.PG0(k)(l, i);
                    sum_phi += table.Phi0(k)(l, i);
                }
                adv_in(i) = Ehat0(i) * (sum_pg - sum_phi);
                rec_in0(i) = Ehat0(i) * sum_phi;
            }
        } else {
            adv_in = (table.PG0(k) - table.Phi0(k)).transpose() * Ehat0;
            rec_in0 = table.Phi0(k).transpose() * Ehat0;
        }

        if (k >= 2) {
            const Eigen::VectorXd Ups_pp = path.Upsilon.row(k - 2);
            intU_prefix +=
                (lam_prev_cell.array() * 0.5 * dt * (Ups_pp.array() + Ups_prev.array()))
                    .matrix();
            cumS += 0.5 * dt * (path.S.row(k - 2).transpose() + S_prev);
            cumE += 0.5 * dt * (path.E.row(k - 2).transpose() + E_prev);
            cumI += 0.5 * dt * (path.I.row(k - 2).transpose() + I_prev);
            cumR += 0.5 * dt * (path.R.row(k - 2).transpose() + R_prev);
        }
        const Eigen::VectorXd intU_base =
            intU_prefix + (0.5 * dt) * (lam_cell.array() * Ups_prev.array()).matrix();

        // assemble (I - M) x_k = rhs
        const Eigen::MatrixXd& C = lin.coeff[k];
        const Eigen::MatrixXd edge = (0.5 * dt) * lam_cell.asDiagonal() * C;  // L x 4L
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(4 * L, 4 * L);
        M.block(kS * L, 0, L, 4 * L) -= edge;
        M.block(kE * L, 0, L, 4 * L) += edge - PG0T * edge;
        M.block(kI * L, 0, L, 4 * L) += PG0T * edge - Phi0T * edge;
        if (rts)
            M.block(kS * L, 0, L, 4 * L) += Phi0T * edge;
        else
            M.block(kR * L, 0, L, 4 * L) += Phi0T * edge;
        M.block(kS * L, kS * L, L, L) += 0.5 * dt * QS;
        M.block(kE * L, kE * L, L, L) += 0.5 * dt * QE;
        M.block(kI * L, kI * L, L, L) += 0.5 * dt * QI;
        M.block(kR * L, kR * L, L, L) += 0.5 * dt * QR;

        Eigen::VectorXd rhs(4 * L);
        const Eigen::VectorXd migS = QS * (cumS + 0.5 * dt * S_prev);
        const Eigen::VectorXd migE = QE * (cumE + 0.5 * dt * E_prev);
        const Eigen::VectorXd migI = QI * (cumI + 0.5 * dt * I_prev);
        const Eigen::VectorXd migR = QR * (cumR + 0.5 * dt * R_prev);
        const Eigen::VectorXd rec_in_base = c_I0 + rec_in0 + E2_base;
        rhs.segment(kS * L, L) =
            Shat0 - intU_base + migS + drivers.WS.row(k).transpose();
        rhs.segment(kE * L, L) =
            Ehat0 - c_E0 + intU_base - D_base + migE + drivers.WE.row(k).transpose();
        rhs.segment(kI * L, L) = Ihat0 - c_I0 + adv_in + D_base - E2_base + migI +
                                 drivers.WI.row(k).transpose();
        rhs.segment(kR * L, L) = Rhat0 + migR + drivers.WR.row(k).transpose();
        if (rts)
            rhs.segment(kS * L, L) += rec_in_base;
        else
            rhs.segment(kR * L, L) += rec_in_base;

        const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(4 * L, 4 * L) - M;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (!lu.isInvertible())
            throw Error(ErrorCode::SINGULAR_STEP,
                        "implicit step matrix is singular at t=" + std::to_string(k * dt));
        x = lu.solve(rhs);
        path.S.row(k) = x.segment(kS * L, L);
        path.E.row(k) = x.segment(kE * L, L);
        path.I.row(k) = x.segment(kI * L, L);
        path.R.row(k) = x.segment(kR * L, L);
        path.Upsilon.row(k) = C * x;
    }
    return path;
}

} // namespace epi
