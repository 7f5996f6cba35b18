#ifndef EPI_SIMULATOR_HPP
#define EPI_SIMULATOR_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "epi/kernels.hpp"
#include "epi/model.hpp"
#include "epi/rng.hpp"

namespace epi {

enum class EventType : std::uint8_t {
    Infection,     // S -> E slot (or straight to I when the latent draw is 0)
    StageAdvance,  // E -> I at the scheduled latency completion
    Recovery,      // I -> R (or back to S for the returning variants)
    Migration,
};

struct SimEvent {
    double t;
    EventType type;
    std::int8_t compartment;  // 0=S 1=E 2=I 3=R; meaningful for migrations
    int patch_from;
    int patch_to;
    std::int64_t id;  // individual id; -1 for aggregate-only moves (S/R migration)
};

/// Compartment counts sampled at fixed times (rows) per patch (columns),
/// right-continuous: a snapshot at t includes every event with time <= t.
struct TrajectoryPanel {
    std::vector<double> times;
    Eigen::MatrixXi S, E, I, R;
};

struct SimOptions {
    double horizon = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> record_times;  // strictly increasing, within [0, horizon]
    bool record_events = false;
};

struct SimResult {
    TrajectoryPanel panel;
    PopulationState final_state;
    /// Post-time-zero infection times grouped by the patch of infection.
    std::vector<std::vector<double>> infection_times;
    std::vector<SimEvent> events;  // populated when record_events is set
    std::int64_t event_count = 0;
};

/// Exact event-driven simulation of the N-individual model: scheduled stage
/// completions interleave with competing exponential clocks for infections
/// and migrations; rates are constant between events so the embedded chain
/// is sampled without discretization error. Equal-time ties execute
/// scheduled completions first, in individual-id order.
SimResult simulate(const ModelSpec& spec, const LawSet& laws, const PopulationState& init,
                   const SimOptions& opts);

/// Recomputes the count panel from a recorded event stream; must reproduce
/// the panel of the generating run exactly.
TrajectoryPanel replay_panel(const ModelSpec& spec, const PopulationState& init,
                             const std::vector<SimEvent>& events,
                             const std::vector<double>& record_times);

/// Runs replicate r with seed mix_seed(base_seed, r). Replicates may execute
/// on any number of threads; results are indexed by replicate so downstream
/// aggregation is schedule-independent.
std::vector<SimResult> run_replicates(const ModelSpec& spec, const LawSet& laws,
                                      const PopulationState& init, const SimOptions& opts,
                                      int replicates, std::uint64_t base_seed,
                                      int threads = 0);

/// Estimators of the conditional means of the post-zero exposed/infectious
/// flows given the infection times: averages of the latency/progression
/// kernels over the observed infection epochs. Kernels are linearly
/// interpolated at off-grid lags. Returns (E_flow, I_flow), both L x L
/// (origin x current patch).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> conditional_flow_estimate(
    const SimResult& result, const TransitionKernelTable& table, double t);

} // namespace epi

#endif
