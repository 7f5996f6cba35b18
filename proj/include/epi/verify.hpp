#ifndef EPI_VERIFY_HPP
#define EPI_VERIFY_HPP

#include <string>
#include <vector>

#include "epi/config.hpp"
#include "epi/fclt.hpp"
#include "epi/fluid.hpp"

namespace epi {

/// One verdict cell. Band checks test |value - reference| <= band; interval
/// checks test overlap of [lo,hi] with [ref_lo,ref_hi] (band is 0 there).
struct CellCheck {
    std::string name;
    double value = 0.0, reference = 0.0, band = 0.0;
    double lo = 0.0, hi = 0.0, ref_lo = 0.0, ref_hi = 0.0;
    bool interval = false;
    bool degenerate = false;  // both sides indistinguishable from zero
    bool pass = false;
};

struct VerificationReport {
    bool pass = false;
    std::string mode;
    std::string config_hash;
    std::uint64_t base_seed = 0;
    double dt = 0.0, T = 0.0;
    std::vector<double> checkpoints;
    VerifyThresholds thresholds;
    std::vector<CellCheck> cells;

    // FLLN extras
    double eps_grid = 0.0;               // half-grid Richardson allowance
    std::vector<std::int64_t> N_list;
    std::vector<double> max_error_by_N;  // sup |mean - fluid| per N
    double slope = 0.0;                  // log-log decay of max error
    bool slope_checked = false;

    // FCLT extras
    int family_cells = 0;                // multiplicity for the adjusted level
    double adjusted_level = 0.0;         // per-cell CI level after adjustment

    /// Deterministic plain-text report embedding hash, seeds, grid and the
    /// tolerance constants actually used.
    std::string to_text() const;
};

/// FLLN campaign: replicate ensembles at each N versus the fluid solution at
/// the checkpoints. Band rule |mean - fluid| <= max(z_mult*SE, eps_grid) is
/// applied at the largest N; the error decay slope across the N list must
/// fall inside [slope_lo, slope_hi] when the list has at least two sizes.
/// Throws INSUFFICIENT_REPLICATES when M < 10.
VerificationReport verify_flln(const ExperimentSpec& exp, int threads = 0);

/// FCLT campaign: empirical variances of sqrt(N)(fraction - fluid) for the
/// infectious compartment versus the Gaussian-limit ensemble, tested by
/// overlap of chi-square variance confidence intervals at a Bonferroni
/// adjusted level across all (checkpoint, patch) cells.
VerificationReport verify_fclt(const ExperimentSpec& exp, int threads = 0);

} // namespace epi

#endif
