#include "epi/verify.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "epi/errors.hpp"
#include "epi/kernels.hpp"
#include "epi/rng.hpp"
#include "epi/simulator.hpp"
#include "epi/stats.hpp"

namespace epi {

namespace {

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

std::string cell_name(const char* comp, int patch, double t) {
    return std::string(comp) + " patch=" + std::to_string(patch) + " t=" + fmt(t);
}

FluidTrajectory fluid_at(const ExperimentSpec& exp, double dt) {
    TransitionKernelTable table =
        build_kernel_table(exp.model, exp.laws, dt, exp.T, exp.kernel_opts);
    return solve_fluid(exp.model, exp.laws, exp.init, table);
}

double fraction_of(const TrajectoryPanel& panel, int row, int comp, int patch, double N) {
    switch (comp) {
        case 0: return panel.S(row, patch) / N;
        case 1: return panel.E(row, patch) / N;
        case 2: return panel.I(row, patch) / N;
        default: return panel.R(row, patch) / N;
    }
}

double fluid_of(const FluidTrajectory& f, int k, int comp, int patch) {
    switch (comp) {
        case 0: return f.S(k, patch);
        case 1: return f.E(k, patch);
        case 2: return f.I(k, patch);
        default: return f.R(k, patch);
    }
}

} // namespace

VerificationReport verify_flln(const ExperimentSpec& exp, int threads) {
    if (exp.M < 10)
        throw Error(ErrorCode::INSUFFICIENT_REPLICATES,
                    "M = " + std::to_string(exp.M) + " < 10");
    if (exp.checkpoints.empty())
        throw Error(ErrorCode::VALIDATION, "verify-flln requires run.checkpoints");

    VerificationReport rep;
    rep.mode = "verify-flln";
    rep.config_hash = exp.config_hash;
    rep.base_seed = exp.base_seed;
    rep.dt = exp.dt;
    rep.T = exp.T;
    rep.checkpoints = exp.checkpoints;
    rep.thresholds = exp.thresholds;
    rep.N_list = exp.N;

    const int L = exp.model.L;
    const int C = static_cast<int>(exp.checkpoints.size());
    static const char* comp_names[4] = {"S", "E", "I", "R"};

    const FluidTrajectory fluid = fluid_at(exp, exp.dt);
    const FluidTrajectory fine = fluid_at(exp, exp.dt / 2.0);
    double eps = 0.0;
    for (double t : exp.checkpoints) {
        const int k = fluid.grid_index(t), k2 = fine.grid_index(t);
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < L; ++i)
                eps = std::max(eps, std::abs(fluid_of(fluid, k, c, i) -
                                             fluid_of(fine, k2, c, i)));
    }
    rep.eps_grid = eps;

    const std::int64_t N_max = *std::max_element(exp.N.begin(), exp.N.end());
    SimOptions opts;
    opts.horizon = exp.T;
    opts.record_times = exp.checkpoints;

    bool all_pass = true;
    for (std::size_t ni = 0; ni < exp.N.size(); ++ni) {
        const std::int64_t N = exp.N[ni];
        const PopulationState init = initial_counts(exp, N);
        // Separate seed stream per population size.
        const std::uint64_t seed_n = mix_seed(exp.base_seed, 1000003ULL + ni);
        const auto runs = run_replicates(exp.model, exp.laws, init, opts, exp.M, seed_n,
                                         threads);
        std::vector<RunningStats> stats(static_cast<std::size_t>(C) * 4 * L);
        for (const SimResult& r : runs)
            for (int k = 0; k < C; ++k)
                for (int c = 0; c < 4; ++c)
                    for (int i = 0; i < L; ++i)
                        stats[(static_cast<std::size_t>(k) * 4 + c) * L + i].add(
                            fraction_of(r.panel, k, c, i, static_cast<double>(N)));
        double max_err = 0.0;
        for (int k = 0; k < C; ++k) {
            const int gk = fluid.grid_index(exp.checkpoints[k]);
            for (int c = 0; c < 4; ++c)
                for (int i = 0; i < L; ++i) {
                    const RunningStats& st = stats[(static_cast<std::size_t>(k) * 4 + c) * L + i];
                    const double ref = fluid_of(fluid, gk, c, i);
                    const double err = std::abs(st.mean() - ref);
                    max_err = std::max(max_err, err);
                    if (N != N_max) continue;
                    CellCheck cell;
                    cell.name = cell_name(comp_names[c], i, exp.checkpoints[k]);
                    cell.value = st.mean();
                    cell.reference = ref;
                    const double se = st.stddev() / std::sqrt(static_cast<double>(exp.M));
                    cell.band = std::max(exp.thresholds.z_mult * se, eps);
                    cell.pass = err <= cell.band;
                    all_pass = all_pass && cell.pass;
                    rep.cells.push_back(std::move(cell));
                }
        }
        rep.max_error_by_N.push_back(max_err);
    }

    if (exp.N.size() >= 2) {
        std::vector<double> xs;
        for (std::int64_t n : exp.N) xs.push_back(static_cast<double>(n));
        rep.slope = loglog_slope(xs, rep.max_error_by_N);
        rep.slope_checked = true;
        all_pass = all_pass && rep.slope >= exp.thresholds.slope_lo &&
                   rep.slope <= exp.thresholds.slope_hi;
    }
    rep.pass = all_pass;
    return rep;
}

VerificationReport verify_fclt(const ExperimentSpec& exp, int threads) {
    if (exp.M < 10)
        throw Error(ErrorCode::INSUFFICIENT_REPLICATES,
                    "M = " + std::to_string(exp.M) + " < 10");
    if (exp.checkpoints.empty())
        throw Error(ErrorCode::VALIDATION, "verify-fclt requires run.checkpoints");

    VerificationReport rep;
    rep.mode = "verify-fclt";
    rep.config_hash = exp.config_hash;
    rep.base_seed = exp.base_seed;
    rep.dt = exp.dt;
    rep.T = exp.T;
    rep.checkpoints = exp.checkpoints;
    rep.thresholds = exp.thresholds;

    const int L = exp.model.L;
    const int C = static_cast<int>(exp.checkpoints.size());
    const std::int64_t N = *std::max_element(exp.N.begin(), exp.N.end());

    TransitionKernelTable table =
        build_kernel_table(exp.model, exp.laws, exp.dt, exp.T, exp.kernel_opts);
    const FluidTrajectory fluid = solve_fluid(exp.model, exp.laws, exp.init, table);
    const LinearizationField lin = linearize_infection(exp.model, fluid);
    const DriverSampler sampler(exp.model, exp.laws, table, fluid);

    std::vector<int> grid_idx;
    for (double t : exp.checkpoints) grid_idx.push_back(fluid.grid_index(t));

    // Simulation side: variance of sqrt(N) * (fraction - fluid) for I.
    SimOptions opts;
    opts.horizon = exp.T;
    opts.record_times = exp.checkpoints;
    const PopulationState init = initial_counts(exp, N);
    const auto runs = run_replicates(exp.model, exp.laws, init, opts, exp.M, exp.base_seed,
                                     threads);
    std::vector<RunningStats> sim_stats(static_cast<std::size_t>(C) * L);
    for (const SimResult& r : runs)
        for (int k = 0; k < C; ++k)
            for (int i = 0; i < L; ++i)
                sim_stats[static_cast<std::size_t>(k) * L + i].add(
                    std::sqrt(static_cast<double>(N)) *
                    (r.panel.I(k, i) / static_cast<double>(N) -
                     fluid.I(grid_idx[static_cast<std::size_t>(k)], i)));

    // Limit side: the Gaussian fluctuation ensemble.
    const int P = exp.P;
    std::vector<std::vector<double>> path_vals(static_cast<std::size_t>(P),
                                               std::vector<double>(static_cast<std::size_t>(C) *
                                                                   L));
    const bool gauss0 = exp.fluct0_std_S.size() > 0;
    int nthreads = threads > 0 ? threads
                               : static_cast<int>(std::thread::hardware_concurrency());
    if (nthreads < 1) nthreads = 1;
    std::atomic<int> next{0};
    auto worker = [&] {
        for (;;) {
            const int p = next.fetch_add(1);
            if (p >= P) return;
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
            auto& out = path_vals[static_cast<std::size_t>(p)];
            for (int k = 0; k < C; ++k)
                for (int i = 0; i < L; ++i)
                    out[static_cast<std::size_t>(k) * L + i] =
                        path.I(grid_idx[static_cast<std::size_t>(k)], i);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::vector<RunningStats> lim_stats(static_cast<std::size_t>(C) * L);
    for (const auto& pv : path_vals)
        for (std::size_t c = 0; c < pv.size(); ++c) lim_stats[c].add(pv[c]);

    rep.family_cells = C * L;
    const double alpha = (1.0 - exp.thresholds.ci_level) / rep.family_cells;
    rep.adjusted_level = 1.0 - alpha;

    bool all_pass = true;
    for (int k = 0; k < C; ++k)
        for (int i = 0; i < L; ++i) {
            const std::size_t c = static_cast<std::size_t>(k) * L + i;
            CellCheck cell;
            cell.name = cell_name("var(Ihat)", i, exp.checkpoints[k]);
            cell.interval = true;
            cell.value = sim_stats[c].variance();
            cell.reference = lim_stats[c].variance();
            if (cell.value < 1e-12 && cell.reference < 1e-12) {
                cell.degenerate = true;
                cell.pass = true;
            } else {
                auto ci_s = chi_square_variance_ci(cell.value, exp.M, alpha);
                auto ci_l = chi_square_variance_ci(cell.reference, P, alpha);
                cell.lo = ci_s.first;
                cell.hi = ci_s.second;
                cell.ref_lo = ci_l.first;
                cell.ref_hi = ci_l.second;
                cell.pass = cell.lo <= cell.ref_hi && cell.ref_lo <= cell.hi;
            }
            all_pass = all_pass && cell.pass;
            rep.cells.push_back(std::move(cell));
        }
    rep.pass = all_pass;
    return rep;
}

std::string VerificationReport::to_text() const {
    std::ostringstream os;
    os << "mode: " << mode << "\n";
    os << "config_hash: " << config_hash << "\n";
    os << "base_seed: " << base_seed << "\n";
    os << "grid: dt=" << fmt(dt) << " T=" << fmt(T) << "\n";
    os << "checkpoints:";
    for (double t : checkpoints) os << " " << fmt(t);
    os << "\n";
    os << "thresholds: z_mult=" << fmt(thresholds.z_mult) << " slope=["
       << fmt(thresholds.slope_lo) << "," << fmt(thresholds.slope_hi)
       << "] ci_level=" << fmt(thresholds.ci_level)
       << " cov_rel_tol=" << fmt(thresholds.cov_rel_tol) << "\n";
    if (mode == "verify-flln") {
        os << "eps_grid: " << fmt(eps_grid) << "\n";
        for (std::size_t i = 0; i < N_list.size(); ++i)
            os << "N=" << N_list[i] << " max_error=" << fmt(max_error_by_N[i]) << "\n";
        if (slope_checked) os << "slope: " << fmt(slope) << "\n";
    } else {
        os << "family_cells: " << family_cells << "\n";
        os << "adjusted_level: " << fmt(adjusted_level) << "\n";
    }
    for (const CellCheck& c : cells) {
        os << "cell " << c.name << ": value=" << fmt(c.value)
           << " reference=" << fmt(c.reference);
        if (c.interval)
            os << " ci=[" << fmt(c.lo) << "," << fmt(c.hi) << "] ref_ci=[" << fmt(c.ref_lo)
               << "," << fmt(c.ref_hi) << "]";
        else
            os << " band=" << fmt(c.band);
        if (c.degenerate) os << " degenerate";
        os << (c.pass ? " PASS" : " FAIL") << "\n";
    }
    os << "verdict: " << (pass ? "PASS" : "FAIL") << "\n";
    return os.str();
}

} // namespace epi
