// Acceptance gate: every release criterion with its pinned tolerance, one
// PASS/FAIL line each. Exit code 0 only when all criteria hold.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "epi/config.hpp"
#include "epi/errors.hpp"
#include "epi/fclt.hpp"
#include "epi/fluid.hpp"
#include "epi/kernels.hpp"
#include "epi/markov.hpp"
#include "epi/rng.hpp"
#include "epi/simulator.hpp"
#include "epi/stats.hpp"
#include "epi/verify.hpp"

using namespace epi;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Criterion {
    std::string name;
    bool pass = false;
    std::string detail;
};

std::vector<Criterion> results;

void record(const std::string& name, bool pass, const std::string& detail) {
    results.push_back({name, pass, detail});
    std::printf("criterion %s: %s  (%s)\n", name.c_str(), pass ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
}

LawSet product_laws(const DurationLaw& G, const DurationLaw& F) {
    return LawSet{JointDurationLaw(JointMode::Product, G, F),
                  JointDurationLaw(JointMode::Product, G, F), F};
}

// ---------------------------------------------------------------- criterion 1
// Markovian one-patch SEIR fluid vs an RK4 oracle of the equivalent ODE.
void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    const double lam = 1.4, alpha = 0.7, beta = 0.5, dt = 1e-3, T = 20.0;
    ModelSpec spec;
    spec.L = 1;
    spec.lambda = RateSchedule::constant(Eigen::VectorXd::Constant(1, lam));
    spec.kappa = Eigen::MatrixXd::Ones(1, 1);
    spec.gamma = 0.0;
    spec.nu_S = spec.nu_E = spec.nu_I = spec.nu_R = Eigen::MatrixXd::Zero(1, 1);
    spec.variant = Variant::SEIR;
    const LawSet laws = product_laws(DurationLaw::exponential(alpha),
                                     DurationLaw::exponential(beta));
    const auto table = build_kernel_table(spec, laws, dt, T);
    FluidInit init;
    init.S0 = Eigen::VectorXd::Constant(1, 0.92);
    init.E0 = Eigen::VectorXd::Constant(1, 0.04);
    init.I0 = Eigen::VectorXd::Constant(1, 0.04);
    init.R0 = Eigen::VectorXd::Constant(1, 0.0);
    const FluidTrajectory fluid = solve_fluid(spec, laws, init, table);
    const double elapsed = seconds_since(t0);

    double y[4] = {0.92, 0.04, 0.04, 0.0};
    auto deriv = [&](const double* v, double* d) {
        const double inf = lam * v[0] * v[2];
        d[0] = -inf;
        d[1] = inf - alpha * v[1];
        d[2] = alpha * v[1] - beta * v[2];
        d[3] = beta * v[2];
    };
    double sup = 0.0;
    const int K = fluid.points();
    for (int k = 0; k < K; ++k) {
        sup = std::max({sup, std::abs(fluid.S(k, 0) - y[0]), std::abs(fluid.E(k, 0) - y[1]),
                        std::abs(fluid.I(k, 0) - y[2]), std::abs(fluid.R(k, 0) - y[3])});
        if (k + 1 == K) break;
        double k1[4], k2[4], k3[4], k4[4], tmp[4];
        deriv(y, k1);
        for (int j = 0; j < 4; ++j) tmp[j] = y[j] + 0.5 * dt * k1[j];
        deriv(tmp, k2);
        for (int j = 0; j < 4; ++j) tmp[j] = y[j] + 0.5 * dt * k2[j];
        deriv(tmp, k3);
        for (int j = 0; j < 4; ++j) tmp[j] = y[j] + dt * k3[j];
        deriv(tmp, k4);
        for (int j = 0; j < 4; ++j) y[j] += dt / 6.0 * (k1[j] + 2 * k2[j] + 2 * k3[j] + k4[j]);
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "sup error %.3g (tol 1e-6), solver %.2fs (limit 5s)", sup,
                  elapsed);
    record("1 markovian fluid vs ODE oracle", sup <= 1e-6 && elapsed < 5.0, buf);
}

// ---------------------------------------------------------------- criterion 2
// Two-patch Markovian final-size distribution vs an independent Gillespie
// oracle, total variation at 1e5 replicates.
void criterion_2() {
    const auto t0 = std::chrono::steady_clock::now();
    const int Npop = 30, M = 100000;
    const double lam0 = 1.6, lam1 = 1.1, alpha = 1.0, beta = 0.8, horizon = 200.0;
    ModelSpec spec;
    spec.L = 2;
    spec.lambda = RateSchedule::constant(Eigen::Vector2d(lam0, lam1));
    spec.kappa = Eigen::Matrix2d{{1.0, 0.3}, {0.2, 1.0}};
    spec.gamma = 0.0;
    spec.nu_S = Eigen::Matrix2d::Zero();
    spec.nu_E = Eigen::Matrix2d{{0.0, 0.3}, {0.2, 0.0}};
    spec.nu_I = Eigen::Matrix2d{{0.0, 0.2}, {0.4, 0.0}};
    spec.nu_R = Eigen::Matrix2d::Zero();
    spec.variant = Variant::SEIR;
    const LawSet laws = product_laws(DurationLaw::exponential(alpha),
                                     DurationLaw::exponential(beta));
    PopulationState init;
    init.S = Eigen::Vector2i(18, 9);
    init.E = Eigen::Vector2i(0, 0);
    init.I = Eigen::Vector2i(2, 1);
    init.R = Eigen::Vector2i(0, 0);
    init.N = Npop;

    SimOptions opts;
    opts.horizon = horizon;
    opts.record_times = {horizon};
    const auto runs = run_replicates(spec, laws, init, opts, M, 20240601, 0);
    std::vector<double> hist_sim(Npop + 1, 0.0);
    for (const auto& r : runs)
        hist_sim[static_cast<std::size_t>(r.panel.R.row(0).sum())] += 1.0 / M;

    // independent Gillespie oracle for the full two-patch chain
    std::vector<double> hist_orc(Npop + 1, 0.0);
    Rng rng(20240602);
    for (int m = 0; m < M; ++m) {
        int S[2] = {18, 9}, E[2] = {0, 0}, I[2] = {2, 1}, R[2] = {0, 0};
        double t = 0.0;
        for (;;) {
            double rates[12];
            const double lamv[2] = {lam0, lam1};
            for (int i = 0; i < 2; ++i) {
                const double contact = spec.kappa(i, 0) * I[0] + spec.kappa(i, 1) * I[1];
                rates[i] = lamv[i] * S[i] * contact / Npop;   // infection
                rates[2 + i] = alpha * E[i];                  // stage advance
                rates[4 + i] = beta * I[i];                   // recovery
                rates[6 + i] = spec.nu_E(i, 1 - i) * E[i];    // E migration
                rates[8 + i] = spec.nu_I(i, 1 - i) * I[i];    // I migration
                rates[10 + i] = 0.0;
            }
            double total = 0.0;
            for (double r : rates) total += r;
            if (total <= 0.0) break;
            t += rng.exponential(total);
            if (t > horizon) break;
            double u = rng.uniform() * total;
            int e = 0;
            while (u >= rates[e]) {
                u -= rates[e];
                ++e;
            }
            const int i = e % 2;
            switch (e / 2) {
                case 0: --S[i]; ++E[i]; break;
                case 1: --E[i]; ++I[i]; break;
                case 2: --I[i]; ++R[i]; break;
                case 3: --E[i]; ++E[1 - i]; break;
                default: --I[i]; ++I[1 - i]; break;
            }
        }
        hist_orc[static_cast<std::size_t>(R[0] + R[1])] += 1.0 / M;
    }
    const double tv = total_variation(hist_sim, hist_orc);
    const double elapsed = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf, "TV %.4f (tol 0.02), %.1fs (limit 120s)", tv, elapsed);
    record("2 final size vs gillespie oracle", tv <= 0.02 && elapsed < 120.0, buf);
}

// ---------------------------------------------------------------- criterion 3
// Closed-form and exact-grid values of the double completion kernel.
void criterion_3() {
    ModelSpec one;
    one.L = 1;
    one.lambda = RateSchedule::constant(Eigen::VectorXd::Ones(1));
    one.kappa = Eigen::MatrixXd::Ones(1, 1);
    one.gamma = 0.0;
    one.nu_S = one.nu_E = one.nu_I = one.nu_R = Eigen::MatrixXd::Zero(1, 1);
    one.variant = Variant::SEIR;
    const LawSet expexp = product_laws(DurationLaw::exponential(1.0),
                                       DurationLaw::exponential(1.0));
    const auto t1 = build_kernel_table(one, expexp, 1e-4, 1.0);
    const double err_cf =
        std::abs(t1.Phi(t1.points() - 1)(0, 0) - (1.0 - 2.0 / std::exp(1.0)));

    ModelSpec two = one;
    two.L = 2;
    two.lambda = RateSchedule::constant(Eigen::VectorXd::Ones(2));
    two.kappa = Eigen::Matrix2d::Identity();
    two.nu_S = two.nu_R = Eigen::Matrix2d::Zero();
    two.nu_E = Eigen::Matrix2d{{0.0, 0.5}, {0.3, 0.0}};
    two.nu_I = Eigen::Matrix2d{{0.0, 0.2}, {0.6, 0.0}};
    const double te = 0.6, to = 0.8, dt = 0.02;
    const LawSet det = product_laws(DurationLaw::deterministic(te),
                                    DurationLaw::deterministic(to));
    const auto t2 = build_kernel_table(two, det, dt, 3.0);
    const int ke = t2.grid_index(te), ko = t2.grid_index(to);
    const Eigen::MatrixXd prod = t2.p(ke) * t2.q(ko);
    double err_grid = 0.0;
    for (int k = 0; k < t2.points(); ++k) {
        const Eigen::MatrixXd expect =
            (k >= ke + ko) ? prod : Eigen::MatrixXd::Zero(2, 2);
        err_grid = std::max(err_grid, (t2.Phi(k) - expect).cwiseAbs().maxCoeff());
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "exp-exp error %.3g (tol 1e-8), grid error %.3g (tol 1e-12)",
                  err_cf, err_grid);
    record("3 kernel closed forms", err_cf <= 1e-8 && err_grid <= 1e-12, buf);
}

// ---------------------------------------------------------------- criterion 4
// Chapman-Kolmogorov and stochasticity over random generators.
void criterion_4() {
    Rng rng(4444);
    double max_ck = 0.0, max_row = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int L = 2 + static_cast<int>(rng.uniform_index(4));
        Eigen::MatrixXd nu = Eigen::MatrixXd::Zero(L, L);
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                if (i != j) nu(i, j) = 3.0 * rng.uniform();
        GeneratorMatrix gen(nu);
        const double s = 0.2 + rng.uniform(), t = 0.2 + 2.0 * rng.uniform();
        const Eigen::MatrixXd Ps = transition_matrix(gen, s);
        const Eigen::MatrixXd Pt = transition_matrix(gen, t);
        const Eigen::MatrixXd Pst = transition_matrix(gen, s + t);
        max_ck = std::max(max_ck, (Ps * Pt - Pst).cwiseAbs().maxCoeff());
        max_row = std::max(
            max_row,
            (Pst.rowwise().sum() - Eigen::VectorXd::Ones(L)).cwiseAbs().maxCoeff());
        max_row = std::max(max_row, std::max(0.0, -Pst.minCoeff()));
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "CK %.3g (tol 1e-8), rows %.3g (tol 1e-10), 100 generators",
                  max_ck, max_row);
    record("4 transition semigroup", max_ck <= 1e-8 && max_row <= 1e-10, buf);
}

ExperimentSpec flln_campaign_spec() {
    ExperimentSpec exp;
    exp.model.L = 2;
    exp.model.lambda = RateSchedule::constant(Eigen::Vector2d(1.2, 0.9));
    exp.model.kappa = Eigen::Matrix2d{{1.0, 0.2}, {0.3, 1.0}};
    exp.model.gamma = 0.5;
    exp.model.nu_S = Eigen::Matrix2d{{0.0, 0.15}, {0.1, 0.0}};
    exp.model.nu_E = Eigen::Matrix2d{{0.0, 0.2}, {0.15, 0.0}};
    exp.model.nu_I = Eigen::Matrix2d{{0.0, 0.1}, {0.15, 0.0}};
    exp.model.nu_R = Eigen::Matrix2d{{0.0, 0.1}, {0.1, 0.0}};
    exp.model.variant = Variant::SEIR;
    const DurationLaw G = DurationLaw::gamma(2.0, 0.5);
    const DurationLaw F = DurationLaw::lognormal(-0.3, 0.5);
    exp.laws = product_laws(G, F);
    exp.init.S0 = Eigen::Vector2d(0.52, 0.36);
    exp.init.E0 = Eigen::Vector2d(0.03, 0.02);
    exp.init.I0 = Eigen::Vector2d(0.04, 0.03);
    exp.init.R0 = Eigen::Vector2d(0.0, 0.0);
    exp.dt = 0.02;
    exp.T = 8.0;
    for (int c = 1; c <= 10; ++c) exp.checkpoints.push_back(0.8 * c);
    exp.base_seed = 555111;
    exp.config_hash = "acceptance";
    return exp;
}

// ---------------------------------------------------------------- criterion 5
void criterion_5() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentSpec exp = flln_campaign_spec();
    exp.mode = RunMode::VerifyFlln;
    exp.N = {100, 1000, 10000};
    exp.M = 200;
    const VerificationReport rep = verify_flln(exp, 0);
    const double elapsed = seconds_since(t0);
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "verdict %s, slope %.3f (window [-0.65,-0.35]), eps_grid %.2g, %.0fs "
                  "(limit 900s)",
                  rep.pass ? "PASS" : "FAIL", rep.slope, rep.eps_grid, elapsed);
    record("5 FLLN campaign", rep.pass && elapsed < 900.0, buf);
}

// ---------------------------------------------------------------- criterion 6
void criterion_6() {
    ModelSpec spec;
    spec.L = 2;
    spec.lambda = RateSchedule::constant(Eigen::Vector2d(1.4, 0.9));
    spec.kappa = Eigen::Matrix2d{{1.0, 0.15}, {0.25, 1.0}};
    spec.gamma = 0.0;
    spec.nu_S = Eigen::Matrix2d{{0.0, 0.2}, {0.1, 0.0}};
    spec.nu_E = spec.nu_I = spec.nu_R = Eigen::Matrix2d::Zero();
    spec.variant = Variant::SEIR;
    const double te = 0.5, to = 1.0, dt = 1e-3, T = 6.0;
    const DurationLaw G = DurationLaw::deterministic(te);
    const DurationLaw F = DurationLaw::deterministic(to);
    const LawSet laws{JointDurationLaw(JointMode::Product, G, F),
                      JointDurationLaw(JointMode::Product, DurationLaw::uniform(0.0, te), F),
                      DurationLaw::uniform(0.0, to)};
    const auto table = build_kernel_table(spec, laws, dt, T);
    FluidInit init;
    init.S0 = Eigen::Vector2d(0.55, 0.3);
    init.E0 = Eigen::Vector2d(0.03, 0.02);
    init.I0 = Eigen::Vector2d(0.06, 0.04);
    init.R0 = Eigen::Vector2d(0.0, 0.0);
    const FluidTrajectory volterra = solve_fluid(spec, laws, init, table);
    const FluidTrajectory delay = solve_fluid_delay(spec, te, to, init, dt, T);
    double sup = 0.0;
    for (int k = 0; k < volterra.points(); ++k)
        sup = std::max({sup, (volterra.S.row(k) - delay.S.row(k)).cwiseAbs().maxCoeff(),
                        (volterra.E.row(k) - delay.E.row(k)).cwiseAbs().maxCoeff(),
                        (volterra.I.row(k) - delay.I.row(k)).cwiseAbs().maxCoeff(),
                        (volterra.R.row(k) - delay.R.row(k)).cwiseAbs().maxCoeff()});
    char buf[160];
    std::snprintf(buf, sizeof buf, "sup difference %.3g (tol 1e-4)", sup);
    record("6 delay reduction vs volterra", sup <= 1e-4, buf);
}

// ---------------------------------------------------------------- criterion 7
// Every analytic driver covariance cell against P=1e4 sampled paths.
void criterion_7() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentSpec exp = flln_campaign_spec();
    exp.dt = 0.2;
    exp.T = 2.0;
    exp.checkpoints = {0.4, 0.8, 1.2, 1.6, 2.0};
    const auto table = build_kernel_table(exp.model, exp.laws, exp.dt, exp.T, exp.kernel_opts);
    const FluidTrajectory fluid = solve_fluid(exp.model, exp.laws, exp.init, table);
    const DriverSampler sampler(exp.model, exp.laws, table, fluid);

    const int P = 10000, L = 2;
    std::vector<DriverComponents> comps(P);
    Rng rng(777001);
    for (int p = 0; p < P; ++p) sampler.sample(rng, &comps[p]);

    int cells = 0, failed = 0;
    double worst = 0.0;
    auto check = [&](const std::function<double(const DriverComponents&)>& a,
                     const std::function<double(const DriverComponents&)>& b,
                     double analytic) {
        double ma = 0, mb = 0;
        for (const auto& c : comps) {
            ma += a(c);
            mb += b(c);
        }
        ma /= P;
        mb /= P;
        double cab = 0, va = 0, vb = 0;
        for (const auto& c : comps) {
            const double da = a(c) - ma, db = b(c) - mb;
            cab += da * db;
            va += da * da;
            vb += db * db;
        }
        cab /= P - 1;
        va /= P - 1;
        vb /= P - 1;
        const double se = std::sqrt(std::max(va * vb + cab * cab, 0.0) / P);
        // ~2000 simultaneous cells: 4 sampling SEs keeps the familywise false
        // positive rate near 1e-4 per cell
        const double tol = std::max(0.05 * std::abs(analytic), 4.0 * se) + 1e-15;
        ++cells;
        const double excess = std::abs(cab - analytic) / tol;
        worst = std::max(worst, excess);
        if (excess > 1.0) ++failed;
    };

    const std::vector<double>& cps = exp.checkpoints;
    for (std::size_t a = 0; a < cps.size(); ++a)
        for (std::size_t b = a; b < cps.size(); ++b) {
            const double t = cps[a], t2 = cps[b];
            const int k = table.grid_index(t), k2 = table.grid_index(t2);
            for (int i = 0; i < L; ++i)
                for (int i2 = 0; i2 < L; ++i2) {
                    check([&](const DriverComponents& c) { return c.MA(k, i); },
                          [&](const DriverComponents& c) { return c.MA(k2, i2); },
                          sampler.driver_covariance("MA", -1, i, -1, i2, t, t2));
                    for (int cmp = 0; cmp < 4; ++cmp) {
                        static const char* fam[4] = {"MS", "ME", "MI", "MR"};
                        for (int l = 0; l < L; ++l)
                            for (int l2 = 0; l2 < L; ++l2) {
                                if (l == i || l2 == i2) continue;
                                check(
                                    [&, cmp, l, i, k](const DriverComponents& c) {
                                        return c.Mmig[cmp](k, l * L + i);
                                    },
                                    [&, cmp, l2, i2, k2](const DriverComponents& c) {
                                        return c.Mmig[cmp](k2, l2 * L + i2);
                                    },
                                    sampler.driver_covariance(fam[cmp], l, i, l2, i2, t, t2));
                            }
                    }
                    for (int l = 0; l < L; ++l)
                        for (int l2 = 0; l2 < L; ++l2) {
                            auto part = [&](int which, int ll, int kk,
                                            int ii) -> std::function<double(
                                            const DriverComponents&)> {
                                switch (which) {
                                    case 0:
                                        return [ll, kk, ii](const DriverComponents& c) {
                                            return c.E0hat[ll](kk, ii);
                                        };
                                    case 1:
                                        return [ll, kk, ii](const DriverComponents& c) {
                                            return c.I01hat[ll](kk, ii);
                                        };
                                    case 2:
                                        return [ll, kk, ii](const DriverComponents& c) {
                                            return c.I02hat[ll](kk, ii);
                                        };
                                    case 3:
                                        return [ll, kk, ii](const DriverComponents& c) {
                                            return c.Ehat[ll](kk, ii);
                                        };
                                    default:
                                        return [ll, kk, ii](const DriverComponents& c) {
                                            return c.Ihat[ll](kk, ii);
                                        };
                                }
                            };
                            static const char* fam[5] = {"E0", "I01", "I02", "E", "I"};
                            for (int w = 0; w < 5; ++w)
                                check(part(w, l, k, i), part(w, l2, k2, i2),
                                      l == l2 ? sampler.driver_covariance(fam[w], l, i, l2,
                                                                          i2, t, t2)
                                              : 0.0);
                            // infection-count noise against the same origin's
                            // flows, both time orders
                            check([&, l, k](const DriverComponents& c) { return c.MA(k, l); },
                                  part(3, l2, k2, i2),
                                  sampler.driver_covariance("AxE", l, -1, l2, i2, t, t2));
                            check([&, l, k](const DriverComponents& c) { return c.MA(k, l); },
                                  part(4, l2, k2, i2),
                                  sampler.driver_covariance("AxI", l, -1, l2, i2, t, t2));
                            check([&, l2, k2](const DriverComponents& c) {
                                      return c.MA(k2, l2);
                                  },
                                  part(3, l, k, i2),
                                  sampler.driver_covariance("AxE", l2, -1, l, i2, t2, t));
                            // cross terms between the latency flow and the
                            // full completion flow (the E-I coupling)
                            check(part(0, l, k, i), part(2, l2, k2, i2),
                                  l == l2 ? sampler.driver_covariance("E0xI02", l, i, l2, i2,
                                                                      t, t2)
                                          : 0.0);
                            check(part(3, l, k, i), part(4, l2, k2, i2),
                                  l == l2 ? sampler.driver_covariance("ExI", l, i, l2, i2, t,
                                                                      t2)
                                          : 0.0);
                        }
                }
            // migration jump counts against every cohort's completion flows;
            // the aggregate pair path sees one cohort per flow component
            for (int pa = 0; pa < L; ++pa)
                for (int pb = 0; pb < L; ++pb) {
                    if (pa == pb) continue;
                    const auto mE = [pa, pb, k, L](const DriverComponents& c) {
                        return c.Mmig[1](k, pa * L + pb);
                    };
                    const auto mI = [pa, pb, k, L](const DriverComponents& c) {
                        return c.Mmig[2](k, pa * L + pb);
                    };
                    for (int l2 = 0; l2 < L; ++l2)
                        for (int i2 = 0; i2 < L; ++i2) {
                            const auto dc = [&](const char* f) {
                                return sampler.driver_covariance(f, pa, pb, l2, i2, t, t2);
                            };
                            check(mE, [l2, k2, i2](const DriverComponents& c) {
                                      return c.Ehat[l2](k2, i2);
                                  },
                                  dc("MExE"));
                            check(mE, [l2, k2, i2](const DriverComponents& c) {
                                      return c.Ihat[l2](k2, i2);
                                  },
                                  dc("MExI"));
                            check(mI, [l2, k2, i2](const DriverComponents& c) {
                                      return c.Ihat[l2](k2, i2);
                                  },
                                  dc("MIxI"));
                            check(mE, [l2, k2, i2](const DriverComponents& c) {
                                      return c.E0hat[l2](k2, i2);
                                  },
                                  dc("ME0xE0"));
                            check(mE, [l2, k2, i2](const DriverComponents& c) {
                                      return c.I02hat[l2](k2, i2);
                                  },
                                  dc("ME0xI02"));
                            check(mI, [l2, k2, i2](const DriverComponents& c) {
                                      return c.I02hat[l2](k2, i2);
                                  },
                                  dc("MI0xI02"));
                            check(mI, [l2, k2, i2](const DriverComponents& c) {
                                      return c.I01hat[l2](k2, i2);
                                  },
                                  dc("MI01xI01"));
                            // infectious-stage jumps cannot tilt the latency
                            // completion flow
                            check(mI, [l2, k2, i2](const DriverComponents& c) {
                                      return c.Ehat[l2](k2, i2);
                                  },
                                  0.0);
                        }
                    // distinct ordered pairs and the two stages of one pair
                    // share no jumps
                    check(mE, [pa, pb, k2, L](const DriverComponents& c) {
                              return c.Mmig[2](k2, pa * L + pb);
                          },
                          0.0);
                    check(mE, [pa, pb, k2, L](const DriverComponents& c) {
                              return c.Mmig[1](k2, pb * L + pa);
                          },
                          0.0);
                }
        }
    const double elapsed = seconds_since(t0);
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "%d cells, %d outside max(5%%, 4 SE), worst ratio %.2f, %.0fs", cells,
                  failed, worst, elapsed);
    record("7 driver covariance self-check", failed == 0, buf);
}

// ---------------------------------------------------------------- criterion 8
void criterion_8() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentSpec exp = flln_campaign_spec();
    exp.mode = RunMode::VerifyFclt;
    exp.dt = 0.1;
    exp.T = 4.0;
    exp.checkpoints = {0.8, 1.6, 2.4, 3.2, 4.0};
    exp.N = {10000};
    exp.M = 500;
    exp.P = 10000;
    const VerificationReport rep = verify_fclt(exp, 0);
    const double elapsed = seconds_since(t0);
    int failed = 0;
    for (const auto& c : rep.cells)
        if (!c.pass) ++failed;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "%zu variance cells, %d without CI overlap, adjusted level %.4f, %.0fs "
                  "(limit 1800s)",
                  rep.cells.size(), failed, rep.adjusted_level, elapsed);
    record("8 end-to-end FCLT variances", rep.pass && elapsed < 1800.0, buf);
}

// ---------------------------------------------------------------- criterion 9
void criterion_9() {
    bool pass = true;
    std::string why;

    // (a) exact balance after every event
    {
        ExperimentSpec exp = flln_campaign_spec();
        SimOptions opts;
        opts.horizon = 4.0;
        opts.seed = 31;
        opts.record_events = true;
        const PopulationState init = initial_counts(exp, 400);
        const SimResult res = simulate(exp.model, exp.laws, init, opts);
        Eigen::VectorXi S = init.S, E = init.E, I = init.I, R = init.R;
        for (const SimEvent& ev : res.events) {
            switch (ev.type) {
                case EventType::Infection:
                    --S(ev.patch_from);
                    if (ev.compartment == 1)
                        ++E(ev.patch_to);
                    else
                        ++I(ev.patch_to);
                    break;
                case EventType::StageAdvance:
                    --E(ev.patch_from);
                    ++I(ev.patch_to);
                    break;
                case EventType::Recovery:
                    --I(ev.patch_from);
                    if (exp.model.recovered_to_susceptible())
                        ++S(ev.patch_to);
                    else
                        ++R(ev.patch_to);
                    break;
                case EventType::Migration: {
                    Eigen::VectorXi* comp[4] = {&S, &E, &I, &R};
                    --(*comp[ev.compartment])(ev.patch_from);
                    ++(*comp[ev.compartment])(ev.patch_to);
                    break;
                }
            }
            if (S.sum() + E.sum() + I.sum() + R.sum() != 400 || S.minCoeff() < 0 ||
                E.minCoeff() < 0 || I.minCoeff() < 0 || R.minCoeff() < 0) {
                pass = false;
                why += "balance broken; ";
                break;
            }
        }
        if ((S - res.final_state.S).cwiseAbs().maxCoeff() != 0 ||
            (R - res.final_state.R).cwiseAbs().maxCoeff() != 0) {
            pass = false;
            why += "event log does not reach the final state; ";
        }
    }

    // (b,c) fluid mass conservation and exponential lower bound
    {
        ExperimentSpec exp = flln_campaign_spec();
        const auto table =
            build_kernel_table(exp.model, exp.laws, exp.dt, exp.T, exp.kernel_opts);
        const FluidTrajectory fluid = solve_fluid(exp.model, exp.laws, exp.init, table);
        for (int k = 0; k < fluid.points(); ++k) {
            const double total = fluid.S.row(k).sum() + fluid.E.row(k).sum() +
                                 fluid.I.row(k).sum() + fluid.R.row(k).sum();
            if (std::abs(total - 1.0) > 1e-9) {
                pass = false;
                why += "fluid mass drift; ";
                break;
            }
        }
        if (fluid.min_lower_bound_gap < -1e-9) {
            pass = false;
            why += "patch mass lower bound violated; ";
        }
    }

    // (d) linearization against central finite differences
    {
        ExperimentSpec exp = flln_campaign_spec();
        FluidTrajectory f;
        f.dt = 0.1;
        f.S.resize(1, 2);
        f.E.resize(1, 2);
        f.I.resize(1, 2);
        f.R.resize(1, 2);
        f.Upsilon.resize(1, 2);
        f.S.row(0) = Eigen::Vector2d(0.45, 0.3);
        f.E.row(0) = Eigen::Vector2d(0.06, 0.04);
        f.I.row(0) = Eigen::Vector2d(0.07, 0.02);
        f.R.row(0) = Eigen::Vector2d(0.03, 0.03);
        f.Upsilon.row(0) =
            upsilon_fluid(f.S.row(0), f.E.row(0), f.I.row(0), f.R.row(0), exp.model);
        const LinearizationField lin = linearize_infection(exp.model, f);
        const double h = 1e-6;
        double worst = 0.0;
        for (int comp = 0; comp < 4; ++comp)
            for (int j = 0; j < 2; ++j) {
                Eigen::VectorXd v[4] = {f.S.row(0), f.E.row(0), f.I.row(0), f.R.row(0)};
                Eigen::VectorXd w[4] = {f.S.row(0), f.E.row(0), f.I.row(0), f.R.row(0)};
                v[comp](j) += h;
                w[comp](j) -= h;
                const Eigen::VectorXd up = upsilon_fluid(v[0], v[1], v[2], v[3], exp.model);
                const Eigen::VectorXd um = upsilon_fluid(w[0], w[1], w[2], w[3], exp.model);
                for (int i = 0; i < 2; ++i) {
                    const double fd = (up(i) - um(i)) / (2.0 * h);
                    const double rel = std::abs(lin.coeff[0](i, comp * 2 + j) - fd) /
                                       std::max(std::abs(fd), 1e-3);
                    worst = std::max(worst, rel);
                }
            }
        if (worst > 1e-6) {
            pass = false;
            why += "linearization mismatch; ";
        }
    }

    // (e) the inadmissible regime is refused, not silently accepted
    {
        ExperimentSpec exp = flln_campaign_spec();
        exp.model.gamma = 1.0;
        FluidTrajectory f;
        f.dt = 0.1;
        f.S = Eigen::MatrixXd::Constant(1, 2, 0.4);
        f.E = Eigen::MatrixXd::Constant(1, 2, 0.05);
        f.I = Eigen::MatrixXd::Constant(1, 2, 0.05);
        f.R = Eigen::MatrixXd::Constant(1, 2, 0.0);
        f.Upsilon = Eigen::MatrixXd::Zero(1, 2);
        bool threw = false;
        try {
            linearize_infection(exp.model, f);
        } catch (const Error& e) {
            threw = e.code() == ErrorCode::FCLT_INADMISSIBLE;
        }
        if (!threw) {
            pass = false;
            why += "gamma=1 cross-patch not refused; ";
        }
    }
    record("9 structural invariants", pass, pass ? "balance, mass, bound, gradient, refusal"
                                                 : why);
}

// --------------------------------------------------------------- criterion 10
// Byte-identical artifacts across thread counts, via the installed CLI.
void criterion_10(const std::string& cli) {
    namespace fs = std::filesystem;
    const fs::path work = fs::temp_directory_path() / "epi_accept_c10";
    fs::remove_all(work);
    fs::create_directories(work);
    const fs::path cfg = work / "cfg.json";
    {
        std::ofstream out(cfg);
        out << R"({
  "model": {
    "L": 2,
    "lambda": [1.2, 0.9],
    "kappa": [[1.0, 0.2], [0.3, 1.0]],
    "gamma": 0.5,
    "nu_S": [[0.0, 0.15], [0.1, 0.0]],
    "nu_E": [[0.0, 0.2], [0.15, 0.0]],
    "nu_I": [[0.0, 0.1], [0.15, 0.0]],
    "nu_R": [[0.0, 0.1], [0.1, 0.0]],
    "variant": "SEIR"
  },
  "laws": {
    "G": {"family": "gamma", "shape": 2.0, "scale": 0.5},
    "F": {"family": "lognormal", "mu": -0.3, "sigma": 0.5}
  },
  "init": {"fractions": {"S": [0.52, 0.36], "E": [0.03, 0.02], "I": [0.04, 0.03]}},
  "run": {"mode": "simulate", "N": [500], "M": 8, "P": 300, "dt": 0.1, "T": 2.0,
          "checkpoints": [1.0, 2.0], "base_seed": 97}
})";
    }
    bool pass = true;
    std::string why;
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    for (const std::string sub : {"simulate", "fluid", "fclt", "kernels"}) {
        const fs::path a = work / (sub + "_t1"), b = work / (sub + "_t4");
        for (const auto& [dir, thr] : {std::pair{a, "1"}, {b, "4"}}) {
            const std::string cmd = cli + " " + sub + " --config " + cfg.string() +
                                    " --threads " + thr + " --out " + dir.string() +
                                    " > /dev/null 2>&1";
            if (std::system(cmd.c_str()) != 0) {
                pass = false;
                why += sub + " exited nonzero; ";
            }
        }
        if (!pass) break;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(a)) files.push_back(e.path().filename());
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            pass = false;
            why += sub + " produced no artifacts; ";
        }
        for (const auto& f : files)
            if (slurp(a / f) != slurp(b / f)) {
                pass = false;
                why += sub + "/" + f.string() + " differs across thread counts; ";
            }
    }
    record("10 artifact determinism", pass,
           pass ? "simulate/fluid/fclt/kernels byte-identical at 1 and 4 threads" : why);
}

} // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    try {
        criterion_1();
        criterion_3();
        criterion_4();
        criterion_6();
        criterion_9();
        criterion_2();
        criterion_7();
        if (!cli.empty())
            criterion_10(cli);
        else
            record("10 artifact determinism", false, "CLI path not provided");
        criterion_5();
        criterion_8();
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 1;
    }
    int failed = 0;
    for (const auto& r : results)
        if (!r.pass) ++failed;
    std::printf("acceptance: %zu criteria, %d failed\n", results.size(), failed);
    return failed == 0 ? 0 : 1;
}
