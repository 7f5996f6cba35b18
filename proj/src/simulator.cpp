#include "epi/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <queue>
#include <string>
#include <thread>

#include "epi/errors.hpp"

namespace epi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Scheduled {
    double t;
    std::int64_t id;
    std::uint8_t kind;  // 0 = stage advance, 1 = recovery; advance wins ties
};

struct ScheduledLater {
    bool operator()(const Scheduled& a, const Scheduled& b) const {
        if (a.t != b.t) return a.t > b.t;
        if (a.id != b.id) return a.id > b.id;
        return a.kind > b.kind;
    }
};

struct Individual {
    int patch;
    int pos;  // index within its current patch bucket
};

// swap-remove bucket membership so migration picks are O(1)
void bucket_remove(std::vector<std::vector<std::int64_t>>& buckets,
                   std::vector<Individual>& people, std::int64_t id) {
    auto& bucket = buckets[people[id].patch];
    const int pos = people[id].pos;
    const std::int64_t moved = bucket.back();
    bucket[pos] = moved;
    people[moved].pos = pos;
    bucket.pop_back();
}

void bucket_add(std::vector<std::vector<std::int64_t>>& buckets,
                std::vector<Individual>& people, std::int64_t id, int patch) {
    people[id].patch = patch;
    people[id].pos = static_cast<int>(buckets[patch].size());
    buckets[patch].push_back(id);
}

void check_duration(double d) {
    if (!(d >= 0.0) || !std::isfinite(d))
        throw Error(ErrorCode::SCHEDULE_OVERFLOW, "sampled duration is not a finite nonnegative number");
}

Eigen::VectorXd patch_exit_rates(const Eigen::MatrixXd& nu, int L) {
    Eigen::VectorXd rates = Eigen::VectorXd::Zero(L);
    if (nu.size() == 0) return rates;
    for (int i = 0; i < L; ++i)
        for (int l = 0; l < L; ++l)
            if (l != i) rates(i) += nu(i, l);
    return rates;
}

void validate_sim_inputs(const ModelSpec& spec, const PopulationState& init,
                         const SimOptions& opts) {
    require_valid(spec);
    if (init.S.size() != spec.L || init.E.size() != spec.L || init.I.size() != spec.L ||
        init.R.size() != spec.L)
        throw Error(ErrorCode::DIM_MISMATCH, "initial counts must have L entries");
    if (init.N <= 0 || !init.balanced())
        throw Error(ErrorCode::EMPTY_POPULATION, "initial counts must be positive and sum to N");
    if (init.S.minCoeff() < 0 || init.E.minCoeff() < 0 || init.I.minCoeff() < 0 ||
        init.R.minCoeff() < 0)
        throw Error(ErrorCode::BAD_INIT, "initial counts must be nonnegative");
    if (!spec.uses_exposed_stage() && init.E.cwiseAbs().maxCoeff() != 0)
        throw Error(ErrorCode::BAD_INIT, "variant has no latent stage; E must start at zero");
    if (opts.horizon <= 0.0)
        throw Error(ErrorCode::NEGATIVE_TIME, "horizon must be positive");
    double prev = -1.0;
    for (double t : opts.record_times) {
        if (t < 0.0 || t > opts.horizon || t <= prev)
            throw Error(ErrorCode::VALIDATION,
                        "record times must be strictly increasing within [0, horizon]");
        prev = t;
    }
}

} // namespace

SimResult simulate(const ModelSpec& spec, const LawSet& laws, const PopulationState& init,
                   const SimOptions& opts) {
    validate_sim_inputs(spec, init, opts);
    const int L = spec.L;
    Rng rng(opts.seed);

    Eigen::VectorXd S = init.S.cast<double>(), E = init.E.cast<double>(),
                    I = init.I.cast<double>(), R = init.R.cast<double>();
    const double Npow = std::pow(static_cast<double>(init.N), 1.0 - spec.gamma);

    std::vector<Individual> people;
    std::vector<std::vector<std::int64_t>> bucketE(L), bucketI(L);
    std::priority_queue<Scheduled, std::vector<Scheduled>, ScheduledLater> queue;

    SimResult result;
    result.infection_times.resize(L);
    const std::size_t n_rec = opts.record_times.size();
    result.panel.times = opts.record_times;
    result.panel.S.resize(n_rec, L);
    result.panel.E.resize(n_rec, L);
    result.panel.I.resize(n_rec, L);
    result.panel.R.resize(n_rec, L);

    // initial members, patch-major then id order, fixing the draw sequence
    for (int i = 0; i < L; ++i)
        for (int c = 0; c < init.E(i); ++c) {
            const auto [eta, zeta] = laws.H0.sample(rng);
            check_duration(eta);
            check_duration(zeta);
            const auto id = static_cast<std::int64_t>(people.size());
            people.push_back({i, 0});
            bucket_add(bucketE, people, id, i);
            queue.push({eta, id, 0});
            queue.push({eta + zeta, id, 1});
        }
    for (int i = 0; i < L; ++i)
        for (int c = 0; c < init.I(i); ++c) {
            const double zeta0 = laws.F0.sample(rng);
            check_duration(zeta0);
            const auto id = static_cast<std::int64_t>(people.size());
            people.push_back({i, 0});
            bucket_add(bucketI, people, id, i);
            queue.push({zeta0, id, 1});
        }

    const Eigen::VectorXd exitS = patch_exit_rates(spec.nu_S, L);
    const Eigen::VectorXd exitE = spec.uses_exposed_stage() ? patch_exit_rates(spec.nu_E, L)
                                                            : Eigen::VectorXd::Zero(L);
    const Eigen::VectorXd exitI = patch_exit_rates(spec.nu_I, L);
    const Eigen::VectorXd exitR = patch_exit_rates(spec.nu_R, L);
    const Eigen::MatrixXd* nus[4] = {&spec.nu_S, &spec.nu_E, &spec.nu_I, &spec.nu_R};
    const Eigen::VectorXd* exits[4] = {&exitS, &exitE, &exitI, &exitR};

    std::size_t rec_ptr = 0;
    const auto flush_records = [&](double up_to_exclusive) {
        while (rec_ptr < n_rec && opts.record_times[rec_ptr] < up_to_exclusive) {
            for (int i = 0; i < L; ++i) {
                result.panel.S(rec_ptr, i) = static_cast<int>(S(i));
                result.panel.E(rec_ptr, i) = static_cast<int>(E(i));
                result.panel.I(rec_ptr, i) = static_cast<int>(I(i));
                result.panel.R(rec_ptr, i) = static_cast<int>(R(i));
            }
            ++rec_ptr;
        }
    };
    const auto log_event = [&](double t, EventType type, int comp, int from, int to,
                               std::int64_t id) {
        ++result.event_count;
        if (opts.record_events) result.events.push_back({t, type, static_cast<std::int8_t>(comp), from, to, id});
    };

    double t = 0.0;
    std::size_t bp_idx = 1;  // next lambda breakpoint to cross
    Eigen::VectorXd inf_rate(L);
    std::vector<double> mig_rate(4 * static_cast<std::size_t>(L));

    while (t < opts.horizon) {
        // infection rates lambda_i * S_i * sum_l kappa_il driver_l / (N^{1-g} U_i^g)
        const Eigen::VectorXd& driver = spec.driver_is_exposed_slot() ? E : I;
        const Eigen::VectorXd& lam = spec.lambda.at(t);
        double total_rate = 0.0;
        for (int i = 0; i < L; ++i) {
            const double U = S(i) + E(i) + I(i) + R(i);
            double pressure = 0.0;
            for (int l = 0; l < L; ++l) pressure += spec.kappa(i, l) * driver(l);
            inf_rate(i) = (U <= 0.0) ? 0.0
                                     : lam(i) * S(i) * pressure /
                                           (Npow * std::pow(U, spec.gamma));
            total_rate += inf_rate(i);
        }
        const Eigen::VectorXd* comps[4] = {&S, &E, &I, &R};
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < L; ++i) {
                mig_rate[c * L + i] = (*comps[c])(i) * (*exits[c])(i);
                total_rate += mig_rate[c * L + i];
            }

        const double t_exp = total_rate > 0.0 ? t + rng.exponential(total_rate) : kInf;
        const double t_sched = queue.empty() ? kInf : queue.top().t;
        const double t_bp = bp_idx < spec.lambda.breakpoints.size()
                                ? spec.lambda.breakpoints[bp_idx]
                                : kInf;

        if (t_sched <= std::min(t_exp, t_bp) && t_sched <= opts.horizon) {
            const Scheduled ev = queue.top();
            queue.pop();
            flush_records(ev.t);
            t = ev.t;
            const int patch = people[ev.id].patch;
            if (ev.kind == 0) {
                bucket_remove(bucketE, people, ev.id);
                bucket_add(bucketI, people, ev.id, patch);
                E(patch) -= 1;
                I(patch) += 1;
                log_event(t, EventType::StageAdvance, 1, patch, patch, ev.id);
            } else {
                bucket_remove(bucketI, people, ev.id);
                I(patch) -= 1;
                if (spec.recovered_to_susceptible())
                    S(patch) += 1;
                else
                    R(patch) += 1;
                log_event(t, EventType::Recovery, 2, patch, patch, ev.id);
            }
            continue;
        }
        if (t_bp < t_exp && t_bp <= opts.horizon) {
            flush_records(t_bp);
            t = t_bp;
            ++bp_idx;
            continue;
        }
        if (t_exp > opts.horizon) break;

        flush_records(t_exp);
        t = t_exp;
        double u = rng.uniform() * total_rate;
        int chosen_patch = -1;
        for (int i = 0; i < L; ++i) {
            if (u < inf_rate(i)) {
                chosen_patch = i;
                break;
            }
            u -= inf_rate(i);
        }
        if (chosen_patch >= 0) {
            // infection at chosen_patch
            const auto [eta, zeta] = laws.H.sample(rng);
            check_duration(eta);
            check_duration(zeta);
            const auto id = static_cast<std::int64_t>(people.size());
            people.push_back({chosen_patch, 0});
            S(chosen_patch) -= 1;
            result.infection_times[chosen_patch].push_back(t);
            if (eta > 0.0) {
                E(chosen_patch) += 1;
                bucket_add(bucketE, people, id, chosen_patch);
                queue.push({t + eta, id, 0});
                log_event(t, EventType::Infection, 1, chosen_patch, chosen_patch, id);
            } else {
                I(chosen_patch) += 1;
                bucket_add(bucketI, people, id, chosen_patch);
                log_event(t, EventType::Infection, 2, chosen_patch, chosen_patch, id);
            }
            queue.push({t + eta + zeta, id, 1});
            continue;
        }
        // migration: locate the (compartment, patch) cell, then the target
        int comp = -1, from = -1;
        for (int c = 0; c < 4 && comp < 0; ++c)
            for (int i = 0; i < L; ++i) {
                if (u < mig_rate[c * L + i]) {
                    comp = c;
                    from = i;
                    break;
                }
                u -= mig_rate[c * L + i];
            }
        if (comp < 0) continue;  // roundoff tail; treat as a null event
        const Eigen::MatrixXd& nu = *nus[comp];
        double v = rng.uniform() * (*exits[comp])(from);
        int to = -1;
        for (int l = 0; l < L; ++l) {
            if (l == from) continue;
            if (v < nu(from, l)) {
                to = l;
                break;
            }
            v -= nu(from, l);
        }
        if (to < 0) {
            for (int l = L - 1; l >= 0; --l)
                if (l != from && nu(from, l) > 0.0) {
                    to = l;
                    break;
                }
        }
        if (to < 0) continue;
        std::int64_t moved_id = -1;
        if (comp == 1 || comp == 2) {
            auto& buckets = comp == 1 ? bucketE : bucketI;
            const auto n_bucket = static_cast<std::uint64_t>(buckets[from].size());
            moved_id = buckets[from][rng.uniform_index(n_bucket)];
            bucket_remove(buckets, people, moved_id);
            bucket_add(buckets, people, moved_id, to);
        }
        Eigen::VectorXd* comp_vec = comp == 0 ? &S : comp == 1 ? &E : comp == 2 ? &I : &R;
        (*comp_vec)(from) -= 1;
        (*comp_vec)(to) += 1;
        log_event(t, EventType::Migration, comp, from, to, moved_id);
    }
    flush_records(opts.horizon + 1.0);

    result.final_state.S = S.cast<int>();
    result.final_state.E = E.cast<int>();
    result.final_state.I = I.cast<int>();
    result.final_state.R = R.cast<int>();
    result.final_state.N = init.N;
    result.final_state.t = opts.horizon;
    return result;
}

TrajectoryPanel replay_panel(const ModelSpec& spec, const PopulationState& init,
                             const std::vector<SimEvent>& events,
                             const std::vector<double>& record_times) {
    const int L = spec.L;
    Eigen::VectorXi S = init.S, E = init.E, I = init.I, R = init.R;
    TrajectoryPanel panel;
    panel.times = record_times;
    panel.S.resize(record_times.size(), L);
    panel.E.resize(record_times.size(), L);
    panel.I.resize(record_times.size(), L);
    panel.R.resize(record_times.size(), L);
    std::size_t rec = 0;
    const auto flush = [&](double up_to) {
        while (rec < record_times.size() && record_times[rec] < up_to) {
            panel.S.row(rec) = S;
            panel.E.row(rec) = E;
            panel.I.row(rec) = I;
            panel.R.row(rec) = R;
            ++rec;
        }
    };
    for (const SimEvent& ev : events) {
        flush(ev.t);
        switch (ev.type) {
            case EventType::Infection:
                S(ev.patch_from) -= 1;
                if (ev.compartment == 1)
                    E(ev.patch_to) += 1;
                else
                    I(ev.patch_to) += 1;
                break;
            case EventType::StageAdvance:
                E(ev.patch_from) -= 1;
                I(ev.patch_to) += 1;
                break;
            case EventType::Recovery:
                I(ev.patch_from) -= 1;
                if (spec.recovered_to_susceptible())
                    S(ev.patch_to) += 1;
                else
                    R(ev.patch_to) += 1;
                break;
            case EventType::Migration: {
                Eigen::VectorXi* v = ev.compartment == 0   ? &S
                                     : ev.compartment == 1 ? &E
                                     : ev.compartment == 2 ? &I
                                                           : &R;
                (*v)(ev.patch_from) -= 1;
                (*v)(ev.patch_to) += 1;
                break;
            }
        }
    }
    flush(std::numeric_limits<double>::infinity());
    return panel;
}

std::vector<SimResult> run_replicates(const ModelSpec& spec, const LawSet& laws,
                                      const PopulationState& init, const SimOptions& opts,
                                      int replicates, std::uint64_t base_seed, int threads) {
    if (replicates < 1)
        throw Error(ErrorCode::INSUFFICIENT_REPLICATES, "need at least one replicate");
    std::vector<SimResult> results(replicates);
    if (threads <= 0)
        threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, replicates));

    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mutex;
    const auto worker = [&] {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= replicates || failed.load()) return;
            SimOptions rep_opts = opts;
            rep_opts.seed = mix_seed(base_seed, static_cast<std::uint64_t>(r));
            try {
                results[r] = simulate(spec, laws, init, rep_opts);
            } catch (const std::exception& e) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                if (!failed.exchange(true)) first_error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failed.load()) throw Error(ErrorCode::VALIDATION, "replicate failed: " + first_error);
    return results;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> conditional_flow_estimate(
    const SimResult& result, const TransitionKernelTable& table, double t) {
    const int L = table.patches();
    Eigen::MatrixXd Eflow = Eigen::MatrixXd::Zero(L, L);
    Eigen::MatrixXd Iflow = Eigen::MatrixXd::Zero(L, L);
    const double N = static_cast<double>(result.final_state.N);
    for (int l = 0; l < L; ++l)
        for (double tau : result.infection_times[l]) {
            if (tau > t) break;  // infection times are recorded in order
            for (int i = 0; i < L; ++i) {
                Eflow(l, i) += table.interp_PG(l, i, t - tau);
                Iflow(l, i) += table.interp_Phi(l, i, t - tau);
            }
        }
    return {Eflow / N, Iflow / N};
}

} // namespace epi
