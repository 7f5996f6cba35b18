#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "epi/config.hpp"
#include "epi/csv.hpp"
#include "epi/errors.hpp"
#include "epi/fclt.hpp"
#include "epi/fluid.hpp"
#include "epi/kernels.hpp"
#include "epi/simulator.hpp"
#include "epi/stats.hpp"
#include "epi/verify.hpp"

namespace {

using namespace epi;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::NO_CONVERGENCE:
        case ErrorCode::NOT_PSD:
        case ErrorCode::SINGULAR_STEP:
        case ErrorCode::SCHEDULE_OVERFLOW:
            return 3;  // numerical
        default:
            return 2;  // input
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void require_mode_fields(const ExperimentSpec& exp) {
    const bool needs_N = exp.mode == RunMode::Simulate || exp.mode == RunMode::VerifyFlln ||
                         exp.mode == RunMode::VerifyFclt;
    if (needs_N && exp.N.empty())
        throw Error(ErrorCode::SCHEMA_VIOLATION, "run.N: required for mode");
    const bool needs_M = exp.mode == RunMode::VerifyFlln || exp.mode == RunMode::VerifyFclt;
    if (needs_M && exp.M < 1)
        throw Error(ErrorCode::SCHEMA_VIOLATION, "run.M: required for mode");
    const bool needs_P = exp.mode == RunMode::Fclt || exp.mode == RunMode::VerifyFclt;
    if (needs_P && exp.P < 1)
        throw Error(ErrorCode::SCHEMA_VIOLATION, "run.P: required for mode");
}

std::vector<double> grid_times(double dt, double T) {
    const int K = static_cast<int>(std::lround(T / dt)) + 1;
    std::vector<double> times(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) times[static_cast<std::size_t>(k)] = k * dt;
    return times;
}

// Cumulative lambda * Upsilon integral on the solver's own quadrature.
Eigen::MatrixXd cumulative_infections(const ModelSpec& spec, const FluidTrajectory& fluid) {
    const int K = fluid.points(), L = fluid.patches();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(K, L);
    for (int k = 1; k < K; ++k) {
        const Eigen::VectorXd lam = spec.lambda.at((k - 1) * fluid.dt + 0.5 * fluid.dt);
        for (int i = 0; i < L; ++i)
            A(k, i) = A(k - 1, i) + 0.5 * fluid.dt * lam(i) *
                                        (fluid.Upsilon(k - 1, i) + fluid.Upsilon(k, i));
    }
    return A;
}

int run_kernels(const ExperimentSpec& exp) {
    const TransitionKernelTable table =
        build_kernel_table(exp.model, exp.laws, exp.dt, exp.T, exp.kernel_opts);
    CsvWriter csv(join_path(exp.out_dir, "kernels.csv"),
                  {"t", "l", "i", "p", "q", "PG0", "PG", "QF0", "Phi0", "Phi"});
    for (int k = 0; k < table.points(); ++k)
        for (int l = 0; l < table.patches(); ++l)
            for (int i = 0; i < table.patches(); ++i) {
                csv.field(k * table.dt())
                    .field(l)
                    .field(i)
                    .field(table.p(k)(l, i))
                    .field(table.q(k)(l, i))
                    .field(table.PG0(k)(l, i))
                    .field(table.PG(k)(l, i))
                    .field(table.QF0(k)(l, i))
                    .field(table.Phi0(k)(l, i))
                    .field(table.Phi(k)(l, i));
                csv.end_row();
            }
    return 0;
}

int run_fluid(const ExperimentSpec& exp) {
    const TransitionKernelTable table =
        build_kernel_table(exp.model, exp.laws, exp.dt, exp.T, exp.kernel_opts);
    const FluidTrajectory fluid = solve_fluid(exp.model, exp.laws, exp.init, table);
    const Eigen::MatrixXd A = cumulative_infections(exp.model, fluid);
    CsvWriter csv(join_path(exp.out_dir, "fluid.csv"),
                  {"time", "patch", "Sbar", "Ebar", "Ibar", "Rbar", "Upsbar", "Abar"});
    for (int k = 0; k < fluid.points(); ++k)
        for (int i = 0; i < fluid.patches(); ++i) {
            csv.field(k * fluid.dt)
                .field(i)
                .field(fluid.S(k, i))
                .field(fluid.E(k, i))
                .field(fluid.I(k, i))
                .field(fluid.R(k, i))
                .field(fluid.Upsilon(k, i))
                .field(A(k, i));
            csv.end_row();
        }
    return 0;
}

int run_simulate(const ExperimentSpec& exp) {
    const std::int64_t N = exp.N.front();
    const int reps = std::max(1, exp.M);
    SimOptions opts;
    opts.horizon = exp.T;
    opts.record_times = exp.checkpoints.empty() ? grid_times(exp.dt, exp.T) : exp.checkpoints;
    const PopulationState init = initial_counts(exp, N);
    const auto runs =
        run_replicates(exp.model, exp.laws, init, opts, reps, exp.base_seed, exp.threads);
    for (int r = 0; r < reps; ++r) {
        const SimResult& res = runs[static_cast<std::size_t>(r)];
        CsvWriter csv(join_path(exp.out_dir, "sim_rep" + std::to_string(r) + ".csv"),
                      {"time", "patch", "S", "E", "I", "R", "A"});
        const int L = exp.model.L;
        for (std::size_t row = 0; row < res.panel.times.size(); ++row) {
            const double t = res.panel.times[row];
            for (int i = 0; i < L; ++i) {
                const auto& inf = res.infection_times[static_cast<std::size_t>(i)];
                const std::int64_t a = std::upper_bound(inf.begin(), inf.end(), t) -
                                       inf.begin();
                csv.field(t)
                    .field(i)
                    .field(res.panel.S(static_cast<int>(row), i))
                    .field(res.panel.E(static_cast<int>(row), i))
                    .field(res.panel.I(static_cast<int>(row), i))
                    .field(res.panel.R(static_cast<int>(row), i))
                    .field(a);
                csv.end_row();
            }
        }
    }
    return 0;
}

int run_fclt(const ExperimentSpec& exp) {
    if (exp.checkpoints.empty())
        throw Error(ErrorCode::VALIDATION, "fclt requires run.checkpoints");
    const TransitionKernelTable table =
        build_kernel_table(exp.model, exp.laws, exp.dt, exp.T, exp.kernel_opts);
    const FluidTrajectory fluid = solve_fluid(exp.model, exp.laws, exp.init, table);
    const LinearizationField lin = linearize_infection(exp.model, fluid);
    const DriverSampler sampler(exp.model, exp.laws, table, fluid);
    const int L = exp.model.L;
    const int K = fluid.points();
    const int C = static_cast<int>(exp.checkpoints.size());

    // analytic driver covariance cells at all checkpoint pairs
    {
        CsvWriter csv(join_path(exp.out_dir, "fclt_driver_cov.csv"),
                      {"family", "l", "i", "l2", "i2", "t", "t2", "cov"});
        static const char* pair_families[4] = {"MS", "ME", "MI", "MR"};
        static const char* origin_families[7] = {"E0", "I01", "I02", "E0xI02", "E", "I", "ExI"};
        for (int a = 0; a < C; ++a)
            for (int b = a; b < C; ++b) {
                const double t = exp.checkpoints[static_cast<std::size_t>(a)];
                const double t2 = exp.checkpoints[static_cast<std::size_t>(b)];
                for (int i = 0; i < L; ++i)
                    for (int i2 = 0; i2 < L; ++i2) {
                        csv.field("MA").field(-1).field(i).field(-1).field(i2).field(t).field(
                            t2);
                        csv.field(sampler.driver_covariance("MA", -1, i, -1, i2, t, t2));
                        csv.end_row();
                    }
                for (const char* fam : pair_families)
                    for (int l = 0; l < L; ++l)
                        for (int i = 0; i < L; ++i)
                            for (int l2 = 0; l2 < L; ++l2)
                                for (int i2 = 0; i2 < L; ++i2) {
                                    if (l == i || l2 == i2) continue;
                                    csv.field(fam).field(l).field(i).field(l2).field(i2);
                                    csv.field(t).field(t2);
                                    csv.field(sampler.driver_covariance(fam, l, i, l2, i2, t,
                                                                        t2));
                                    csv.end_row();
                                }
                for (const char* fam : origin_families)
                    for (int l = 0; l < L; ++l)
                        for (int i = 0; i < L; ++i)
                            for (int l2 = 0; l2 < L; ++l2)
                                for (int i2 = 0; i2 < L; ++i2) {
                                    csv.field(fam).field(l).field(i).field(l2).field(i2);
                                    csv.field(t).field(t2);
                                    csv.field(sampler.driver_covariance(fam, l, i, l2, i2, t,
                                                                        t2));
                                    csv.end_row();
                                }
            }
    }

    // Gaussian fluctuation ensemble. Paths are solved in fixed-size chunks:
    // workers fill a per-path buffer and one pass folds the chunk into the
    // accumulators in path order, so the artifacts are byte-identical for
    // every thread count.
    const int P = exp.P;
    std::vector<int> grid_idx;
    for (double t : exp.checkpoints) grid_idx.push_back(fluid.grid_index(t));
    const bool gauss0 = exp.fluct0_std_S.size() > 0;
    std::vector<std::vector<double>> cp_vals(
        static_cast<std::size_t>(P), std::vector<double>(static_cast<std::size_t>(4) * C * L));
    std::vector<RunningStats> grid_stats(static_cast<std::size_t>(K) * L * 4);
    int nthreads = exp.threads > 0 ? exp.threads
                                   : static_cast<int>(std::thread::hardware_concurrency());
    if (nthreads < 1) nthreads = 1;

    const int chunk = 256;
    std::vector<Eigen::MatrixXd> buf(static_cast<std::size_t>(chunk));  // (4K) x L per path
    auto solve_one = [&](int p, Eigen::MatrixXd& out) {
        Rng rng(mix_seed(exp.base_seed ^ 0x66636c74ULL, static_cast<std::uint64_t>(p)));
        FcltOptions fo;
        fo.strict_paper_indices = exp.strict_paper_indices;
        if (gauss0) {
            fo.Shat0.resize(L);
            fo.Ehat0.resize(L);
            fo.Ihat0.resize(L);
            fo.Rhat0.resize(L);
            for (int i = 0; i < L; ++i) {
                fo.Shat0[i] = exp.fluct0_std_S[i] * rng.normal();
                fo.Ehat0[i] = exp.fluct0_std_E[i] * rng.normal();
                fo.Ihat0[i] = exp.fluct0_std_I[i] * rng.normal();
                fo.Rhat0[i] = exp.fluct0_std_R[i] * rng.normal();
            }
        }
        const DriverPaths drivers = sampler.sample(rng);
        const FluctuationPath path =
            solve_fluctuations(exp.model, table, fluid, lin, drivers, fo);
        out.resize(4 * K, L);
        out.block(0 * K, 0, K, L) = path.S;
        out.block(1 * K, 0, K, L) = path.E;
        out.block(2 * K, 0, K, L) = path.I;
        out.block(3 * K, 0, K, L) = path.R;
    };
    for (int base = 0; base < P; base += chunk) {
        const int count = std::min(chunk, P - base);
        std::atomic<int> next{0};
        auto worker = [&] {
            for (;;) {
                const int j = next.fetch_add(1);
                if (j >= count) return;
                solve_one(base + j, buf[static_cast<std::size_t>(j)]);
            }
        };
        std::vector<std::thread> pool;
        for (int t = 1; t < std::min(nthreads, count); ++t) pool.emplace_back(worker);
        worker();
        for (auto& th : pool) th.join();
        for (int j = 0; j < count; ++j) {
            const Eigen::MatrixXd& v = buf[static_cast<std::size_t>(j)];
            for (int comp = 0; comp < 4; ++comp)
                for (int k = 0; k < K; ++k)
                    for (int i = 0; i < L; ++i)
                        grid_stats[(static_cast<std::size_t>(k) * L + i) * 4 + comp].add(
                            v(comp * K + k, i));
            auto& out = cp_vals[static_cast<std::size_t>(base + j)];
            for (int comp = 0; comp < 4; ++comp)
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < L; ++i)
                        out[(static_cast<std::size_t>(comp) * C + c) * L + i] =
                            v(comp * K + grid_idx[static_cast<std::size_t>(c)], i);
        }
    }

    {
        CsvWriter csv(join_path(exp.out_dir, "fclt_paths.csv"),
                      {"time", "patch", "Shat_mean", "Shat_sd", "Ehat_mean", "Ehat_sd",
                       "Ihat_mean", "Ihat_sd", "Rhat_mean", "Rhat_sd"});
        for (int k = 0; k < K; ++k)
            for (int i = 0; i < L; ++i) {
                csv.field(k * fluid.dt).field(i);
                for (int comp = 0; comp < 4; ++comp) {
                    const RunningStats& st =
                        grid_stats[(static_cast<std::size_t>(k) * L + i) * 4 + comp];
                    csv.field(st.mean()).field(st.stddev());
                }
                csv.end_row();
            }
    }
    {
        static const char* comp_names[4] = {"S", "E", "I", "R"};
        CsvWriter csv(join_path(exp.out_dir, "fclt_checkpoint_cov.csv"),
                      {"comp", "patch", "patch2", "t", "t2", "cov"});
        const auto cell = [&](int comp, int c, int i, int p) {
            return cp_vals[static_cast<std::size_t>(p)]
                          [(static_cast<std::size_t>(comp) * C + c) * L + i];
        };
        for (int comp = 0; comp < 4; ++comp)
            for (int a = 0; a < C; ++a)
                for (int b = a; b < C; ++b)
                    for (int i = 0; i < L; ++i)
                        for (int i2 = 0; i2 < L; ++i2) {
                            double m1 = 0.0, m2 = 0.0;
                            for (int p = 0; p < P; ++p) {
                                m1 += cell(comp, a, i, p);
                                m2 += cell(comp, b, i2, p);
                            }
                            m1 /= P;
                            m2 /= P;
                            double cov = 0.0;
                            for (int p = 0; p < P; ++p)
                                cov += (cell(comp, a, i, p) - m1) *
                                       (cell(comp, b, i2, p) - m2);
                            cov /= std::max(1, P - 1);
                            csv.field(comp_names[comp])
                                .field(i)
                                .field(i2)
                                .field(exp.checkpoints[static_cast<std::size_t>(a)])
                                .field(exp.checkpoints[static_cast<std::size_t>(b)])
                                .field(cov);
                            csv.end_row();
                        }
    }
    return 0;
}

void write_report(const VerificationReport& rep, const std::string& out_dir,
                  const std::string& stem) {
    std::ofstream txt(join_path(out_dir, stem + "_report.txt"), std::ios::binary);
    txt << rep.to_text();
    CsvWriter csv(join_path(out_dir, stem + "_cells.csv"),
                  {"name", "value", "reference", "band", "lo", "hi", "ref_lo", "ref_hi",
                   "degenerate", "pass"});
    for (const CellCheck& c : rep.cells) {
        csv.field(c.name)
            .field(c.value)
            .field(c.reference)
            .field(c.band)
            .field(c.lo)
            .field(c.hi)
            .field(c.ref_lo)
            .field(c.ref_hi)
            .field(c.degenerate ? 1 : 0)
            .field(c.pass ? 1 : 0);
        csv.end_row();
    }
}

int run_verify(const ExperimentSpec& exp) {
    const bool flln = exp.mode == RunMode::VerifyFlln;
    const VerificationReport rep =
        flln ? verify_flln(exp, exp.threads) : verify_fclt(exp, exp.threads);
    write_report(rep, exp.out_dir, flln ? "flln" : "fclt");
    std::cout << rep.to_text();
    return rep.pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-patch epidemic engine: exact simulation and its limits"};
    app.require_subcommand(1);

    std::string config_path, out_override;
    std::uint64_t seed_override = 0;
    bool have_seed = false;
    int threads = -1;
    int replicates = -1;
    double grid_dt = 0.0;

    const char* names[6] = {"simulate", "fluid", "fclt", "verify-flln", "verify-fclt",
                            "kernels"};
    for (const char* name : names) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config file")->required();
        sub->add_option("--seed", seed_override, "override run.base_seed")
            ->each([&](const std::string&) { have_seed = true; });
        sub->add_option("--out", out_override, "override run.out_dir");
        sub->add_option("--threads", threads, "worker thread count (0 = hardware)");
        if (std::string(name) == "simulate") {
            sub->add_option("--replicates", replicates, "override replicate count");
            sub->add_option("--grid-dt", grid_dt, "override run.dt");
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        ExperimentSpec exp = load_config(config_path);
        exp.mode = run_mode_from_string(app.get_subcommands().front()->get_name());
        if (have_seed) exp.base_seed = seed_override;
        if (!out_override.empty()) exp.out_dir = out_override;
        if (threads >= 0) exp.threads = threads;
        if (replicates >= 0) exp.M = replicates;
        if (grid_dt > 0.0) exp.dt = grid_dt;
        require_mode_fields(exp);
        std::filesystem::create_directories(exp.out_dir);
        switch (exp.mode) {
            case RunMode::Kernels: return run_kernels(exp);
            case RunMode::Fluid: return run_fluid(exp);
            case RunMode::Simulate: return run_simulate(exp);
            case RunMode::Fclt: return run_fclt(exp);
            case RunMode::VerifyFlln:
            case RunMode::VerifyFclt: return run_verify(exp);
        }
        return 2;
    } catch (const epi::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
