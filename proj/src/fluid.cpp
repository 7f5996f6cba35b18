#include "epi/fluid.hpp"

#include <cmath>
#include <string>

#include "epi/errors.hpp"
#include "epi/markov.hpp"

namespace epi {

namespace {

void validate_init(const ModelSpec& spec, const FluidInit& init) {
    const int L = spec.L;
    if (init.S0.size() != L || init.E0.size() != L || init.I0.size() != L ||
        init.R0.size() != L)
        throw Error(ErrorCode::BAD_INIT, "initial fractions must have L entries each");
    if (init.S0.minCoeff() < 0 || init.E0.minCoeff() < 0 || init.I0.minCoeff() < 0 ||
        init.R0.minCoeff() < 0)
        throw Error(ErrorCode::BAD_INIT, "initial fractions must be nonnegative");
    const double total = init.S0.sum() + init.E0.sum() + init.I0.sum() + init.R0.sum();
    if (std::abs(total - 1.0) > 1e-9)
        throw Error(ErrorCode::BAD_INIT, "initial fractions must sum to 1, got " +
                                             std::to_string(total));
    if (!spec.uses_exposed_stage() && init.E0.cwiseAbs().maxCoeff() != 0.0)
        throw Error(ErrorCode::BAD_INIT, "variant has no latent stage; E0 must be zero");
}

void require_aligned_schedule(const RateSchedule& lambda, double dt) {
    for (double b : lambda.breakpoints) {
        const long k = std::lround(b / dt);
        if (std::abs(b - k * dt) > 1e-9 * std::max(1.0, b))
            throw Error(ErrorCode::GRID_MISMATCH,
                        "rate schedule breakpoint " + std::to_string(b) +
                            " is not a grid multiple");
    }
}

// Kernels flattened to contiguous [time][from][to] doubles so the step
// convolutions run as plain fused loops.
std::vector<double> flatten(const std::vector<Eigen::MatrixXd>& M) {
    const int K = static_cast<int>(M.size());
    const int L = static_cast<int>(M[0].rows());
    std::vector<double> flat(static_cast<std::size_t>(K) * L * L);
    for (int k = 0; k < K; ++k)
        for (int l = 0; l < L; ++l)
            for (int i = 0; i < L; ++i) flat[(static_cast<std::size_t>(k) * L + l) * L + i] = M[k](l, i);
    return flat;
}

// out_i = sum_{j<k} sum_l kernel[k-j](l,i) * g[j](l); g holds the finalized
// trapezoid node coefficients of lambda * Upsilon.
void convolve_into(const std::vector<double>& kernel_flat, const std::vector<double>& g,
                   int k, int L, Eigen::VectorXd& out) {
    out.setZero();
    for (int j = 0; j < k; ++j) {
        const double* kern = kernel_flat.data() + static_cast<std::size_t>(k - j) * L * L;
        const double* gj = g.data() + static_cast<std::size_t>(j) * L;
        for (int l = 0; l < L; ++l) {
            const double w = gj[l];
            if (w == 0.0) continue;
            const double* row = kern + static_cast<std::size_t>(l) * L;
            for (int i = 0; i < L; ++i) out[i] += row[i] * w;
        }
    }
}

Eigen::VectorXd exit_rates_upper(const ModelSpec& spec) {
    const int L = spec.L;
    Eigen::MatrixXd nu_bar = spec.nu_S.cwiseMax(spec.nu_I).cwiseMax(spec.nu_R);
    if (spec.nu_E.size() == spec.nu_S.size()) nu_bar = nu_bar.cwiseMax(spec.nu_E);
    Eigen::VectorXd rate(L);
    for (int i = 0; i < L; ++i) {
        double s = 0.0;
        for (int l = 0; l < L; ++l)
            if (l != i) s += nu_bar(i, l);
        rate(i) = s;
    }
    return rate;
}

struct Diagnostics {
    double max_clamped = 0.0;
    double min_gap = 0.0;
};

void update_diagnostics(Diagnostics& diag, Eigen::VectorXd& S, Eigen::VectorXd& E,
                        Eigen::VectorXd& I, Eigen::VectorXd& R,
                        const Eigen::VectorXd& total0, const Eigen::VectorXd& exit_rates,
                        double t) {
    for (Eigen::VectorXd* v : {&S, &E, &I, &R})
        for (int i = 0; i < v->size(); ++i)
            if ((*v)(i) < 0.0) {
                diag.max_clamped = std::max(diag.max_clamped, -(*v)(i));
                (*v)(i) = 0.0;
            }
    for (int i = 0; i < S.size(); ++i) {
        const double total = S(i) + E(i) + I(i) + R(i);
        const double bound = total0(i) * std::exp(-exit_rates(i) * t);
        diag.min_gap = std::min(diag.min_gap, total - bound);
    }
}

} // namespace

int FluidTrajectory::grid_index(double t) const {
    const long k = std::lround(t / dt);
    if (std::abs(t - k * dt) > 1e-9 * std::max(1.0, t) || k < 0 || k >= points())
        throw Error(ErrorCode::OFF_GRID,
                    "time " + std::to_string(t) + " is off the trajectory grid");
    return static_cast<int>(k);
}

FluidTrajectory solve_fluid(const ModelSpec& spec, const LawSet& laws, const FluidInit& init,
                            const TransitionKernelTable& table, const FluidOptions& opts) {
    require_valid(spec);
    validate_init(spec, init);
    if (table.patches() != spec.L)
        throw Error(ErrorCode::DIM_MISMATCH, "kernel table patch count mismatch");
    const double dt = table.dt();
    const int K = table.points();
    const int L = spec.L;
    require_aligned_schedule(spec.lambda, dt);
    (void)laws;  // the law content already lives in the kernel table

    // flattened convolution kernels
    std::vector<Eigen::MatrixXd> PG_mats(K), Phi_mats(K);
    for (int k = 0; k < K; ++k) {
        PG_mats[k] = table.PG(k);
        Phi_mats[k] = table.Phi(k);
    }
    const std::vector<double> PG_flat = flatten(PG_mats);
    const std::vector<double> Phi_flat = flatten(Phi_mats);

    FluidTrajectory traj;
    traj.dt = dt;
    traj.S.resize(K, L);
    traj.E.resize(K, L);
    traj.I.resize(K, L);
    traj.R.resize(K, L);
    traj.Upsilon.resize(K, L);

    const Eigen::MatrixXd QS = GeneratorMatrix(spec.nu_S).Q();
    const Eigen::MatrixXd QE = spec.uses_exposed_stage()
                                   ? GeneratorMatrix(spec.nu_E).Q()
                                   : Eigen::MatrixXd::Zero(L, L);
    const Eigen::MatrixXd QI = GeneratorMatrix(spec.nu_I).Q();
    const Eigen::MatrixXd QR = GeneratorMatrix(spec.nu_R).Q();

    Eigen::VectorXd S = init.S0, E = init.E0, I = init.I0, R = init.R0;
    traj.S.row(0) = S;
    traj.E.row(0) = E;
    traj.I.row(0) = I;
    traj.R.row(0) = R;
    Eigen::VectorXd Ups = upsilon_fluid(S, E, I, R, spec);
    traj.Upsilon.row(0) = Ups;

    const Eigen::VectorXd total0 = init.S0 + init.E0 + init.I0 + init.R0;
    const Eigen::VectorXd exit_rates = exit_rates_upper(spec);
    Diagnostics diag;

    // finalized trapezoid node coefficients of lambda(s)Upsilon(s); node j
    // is finalized once both adjacent cells are known
    std::vector<double> g(static_cast<std::size_t>(K) * L, 0.0);
    // prefix integrals through node k-1 (trapezoid cells 1..k-1)
    Eigen::VectorXd intU_prefix = Eigen::VectorXd::Zero(L);   // int lambda*Ups
    Eigen::VectorXd cumS = Eigen::VectorXd::Zero(L), cumE = cumS, cumI = cumS, cumR = cumS;

    Eigen::VectorXd D(L), E2(L), conv_base_D(L), conv_base_E2(L);

    for (int k = 1; k < K; ++k) {
        const double t = k * dt;
        const Eigen::VectorXd lam_cell = spec.lambda.at((k - 1) * dt + 0.5 * dt);
        const Eigen::VectorXd lam_prev_cell =
            k >= 2 ? spec.lambda.at((k - 2) * dt + 0.5 * dt) : lam_cell;

        // finalize node k-1 of the convolution weight array
        {
            const Eigen::VectorXd up_prev = traj.Upsilon.row(k - 1);
            for (int l = 0; l < L; ++l) {
                const double lam_avg =
                    (k >= 2) ? 0.5 * (lam_prev_cell(l) + lam_cell(l)) : 0.5 * lam_cell(l);
                g[static_cast<std::size_t>(k - 1) * L + l] = dt * lam_avg * up_prev(l);
            }
            if (k == 1)
                for (int l = 0; l < L; ++l)
                    g[l] = 0.5 * dt * lam_cell(l) * traj.Upsilon(0, l);
        }

        convolve_into(PG_flat, g, k, L, conv_base_D);
        convolve_into(Phi_flat, g, k, L, conv_base_E2);

        // initial-condition completion terms at t_k
        const Eigen::VectorXd c_E0 = table.PG0(k).transpose() * init.E0;
        const Eigen::VectorXd c_I0 = table.QF0(k).transpose() * init.I0;
        const Eigen::VectorXd c_Phi0 = table.Phi0(k).transpose() * init.E0;

        const Eigen::VectorXd S_prev = traj.S.row(k - 1), E_prev = traj.E.row(k - 1),
                              I_prev = traj.I.row(k - 1), R_prev = traj.R.row(k - 1);
        const Eigen::VectorXd Ups_prev = traj.Upsilon.row(k - 1);

        // base of int lambda*Ups: cells 1..k-1 plus the known half of cell k
        if (k >= 2)
            intU_prefix += (lam_prev_cell.array() * 0.5 * dt *
                            (traj.Upsilon.row(k - 2).transpose().array() + Ups_prev.array()))
                               .matrix();
        const Eigen::VectorXd intU_base =
            intU_prefix + (0.5 * dt) * (lam_cell.array() * Ups_prev.array()).matrix();

        // migration prefix integrals through cell k-1
        if (k >= 2) {
            cumS += 0.5 * dt * (traj.S.row(k - 2).transpose() + S_prev);
            cumE += 0.5 * dt * (traj.E.row(k - 2).transpose() + E_prev);
            cumI += 0.5 * dt * (traj.I.row(k - 2).transpose() + I_prev);
            cumR += 0.5 * dt * (traj.R.row(k - 2).transpose() + R_prev);
        }

        // fixed-point iteration for the time-t_k values
        Eigen::VectorXd S_new = S_prev, E_new = E_prev, I_new = I_prev, R_new = R_prev;
        bool converged = false;
        for (int iter = 0; iter < opts.max_picard; ++iter) {
            const Eigen::VectorXd Ups_new = upsilon_fluid(S_new, E_new, I_new, R_new, spec);
            const Eigen::VectorXd edge =
                (0.5 * dt) * (lam_cell.array() * Ups_new.array()).matrix();
            const Eigen::VectorXd intU = intU_base + edge;
            D = conv_base_D + table.PG(0).transpose() * edge;
            E2 = conv_base_E2 + table.Phi(0).transpose() * edge;

            const Eigen::VectorXd migS =
                QS.transpose() * (cumS + 0.5 * dt * (S_prev + S_new));
            const Eigen::VectorXd migE =
                QE.transpose() * (cumE + 0.5 * dt * (E_prev + E_new));
            const Eigen::VectorXd migI =
                QI.transpose() * (cumI + 0.5 * dt * (I_prev + I_new));
            const Eigen::VectorXd migR =
                QR.transpose() * (cumR + 0.5 * dt * (R_prev + R_new));

            const Eigen::VectorXd recovered_inflow = c_I0 + c_Phi0 + E2;
            Eigen::VectorXd S_next = init.S0 - intU + migS;
            Eigen::VectorXd E_next = init.E0 - c_E0 + intU - D + migE;
            Eigen::VectorXd I_next = init.I0 - c_I0 + (c_E0 - c_Phi0) + (D - E2) + migI;
            Eigen::VectorXd R_next = init.R0 + migR;
            if (spec.recovered_to_susceptible())
                S_next += recovered_inflow;
            else
                R_next += recovered_inflow;

            const double delta = std::max({(S_next - S_new).cwiseAbs().maxCoeff(),
                                           (E_next - E_new).cwiseAbs().maxCoeff(),
                                           (I_next - I_new).cwiseAbs().maxCoeff(),
                                           (R_next - R_new).cwiseAbs().maxCoeff()});
            S_new = S_next;
            E_new = E_next;
            I_new = I_next;
            R_new = R_next;
            if (delta < opts.picard_tol) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw Error(ErrorCode::NO_CONVERGENCE,
                        "fixed-point iteration did not converge at t=" + std::to_string(t));

        update_diagnostics(diag, S_new, E_new, I_new, R_new, total0, exit_rates, t);
        traj.S.row(k) = S_new;
        traj.E.row(k) = E_new;
        traj.I.row(k) = I_new;
        traj.R.row(k) = R_new;
        traj.Upsilon.row(k) = upsilon_fluid(S_new, E_new, I_new, R_new, spec);
    }
    traj.max_clamped = diag.max_clamped;
    traj.min_lower_bound_gap = diag.min_gap;
    return traj;
}

FluidTrajectory solve_fluid_delay(const ModelSpec& spec, double t_e, double t_o,
                                  const FluidInit& init, double dt, double horizon,
                                  const FluidOptions& opts) {
    require_valid(spec);
    validate_init(spec, init);
    require_aligned_schedule(spec.lambda, dt);
    const int L = spec.L;
    const long d_e = std::lround(t_e / dt);
    const long d_o = std::lround(t_o / dt);
    if (t_e <= 0 || t_o <= 0 || std::abs(t_e - d_e * dt) > 1e-9 ||
        std::abs(t_o - d_o * dt) > 1e-9)
        throw Error(ErrorCode::DELAY_OFF_GRID,
                    "stage durations must be positive grid multiples");
    const long K_steps = std::lround(horizon / dt);
    if (K_steps < 1 || std::abs(horizon - K_steps * dt) > 1e-9)
        throw Error(ErrorCode::GRID_MISMATCH, "horizon must be an integer multiple of dt");
    const int K = static_cast<int>(K_steps) + 1;

    const GeneratorMatrix genE(spec.uses_exposed_stage() ? spec.nu_E
                                                         : Eigen::MatrixXd::Zero(L, L));
    const GeneratorMatrix genI(spec.nu_I);
    const Eigen::MatrixXd QS = GeneratorMatrix(spec.nu_S).Q();
    const Eigen::MatrixXd QE = genE.Q();
    const Eigen::MatrixXd QI = GeneratorMatrix(spec.nu_I).Q();
    const Eigen::MatrixXd QR = GeneratorMatrix(spec.nu_R).Q();

    // chain transition matrices on [0, t_e] and [0, t_o]
    const Eigen::MatrixXd p1 = transition_matrix(genE, dt);
    const Eigen::MatrixXd q1 = transition_matrix(genI, dt);
    std::vector<Eigen::MatrixXd> p(d_e + 1), q(d_o + 1);
    p[0] = Eigen::MatrixXd::Identity(L, L);
    for (long k = 1; k <= d_e; ++k) p[k] = p[k - 1] * p1;
    q[0] = Eigen::MatrixXd::Identity(L, L);
    for (long k = 1; k <= d_o; ++k) q[k] = q[k - 1] * q1;
    const Eigen::MatrixXd& pe = p[d_e];
    const Eigen::MatrixXd q_to = q[d_o];
    const Eigen::MatrixXd peq = pe * q_to;

    // Aint[k] = (1/t_e) int_0^{t_k ^ t_e} p(u) du, Bint likewise for q,
    // Cint[k] = (1/t_e) int_0^{(t_k - t_o) ^ t_e} p(s) q(t_o) ds
    std::vector<Eigen::MatrixXd> Aint(K), Bint(K), Cint(K);
    Aint[0] = Eigen::MatrixXd::Zero(L, L);
    Bint[0] = Eigen::MatrixXd::Zero(L, L);
    for (int k = 1; k < K; ++k) {
        Aint[k] = (k <= d_e) ? (Aint[k - 1] + (0.5 * dt / t_e) * (p[k - 1] + p[k])).eval()
                             : Aint[k - 1];
        Bint[k] = (k <= d_o) ? (Bint[k - 1] + (0.5 * dt / t_o) * (q[k - 1] + q[k])).eval()
                             : Bint[k - 1];
    }
    for (int k = 0; k < K; ++k) {
        const long m = std::min<long>(std::max<long>(k - d_o, 0), d_e);
        if (k == 0 || m == 0) {
            Cint[k] = Eigen::MatrixXd::Zero(L, L);
            continue;
        }
        const long m_prev = std::min<long>(std::max<long>(k - 1 - d_o, 0), d_e);
        Cint[k] = Cint[k - 1];
        if (m > m_prev) Cint[k] += (0.5 * dt / t_e) * ((p[m - 1] + p[m]) * q_to);
    }

    FluidTrajectory traj;
    traj.dt = dt;
    traj.S.resize(K, L);
    traj.E.resize(K, L);
    traj.I.resize(K, L);
    traj.R.resize(K, L);
    traj.Upsilon.resize(K, L);
    traj.S.row(0) = init.S0;
    traj.E.row(0) = init.E0;
    traj.I.row(0) = init.I0;
    traj.R.row(0) = init.R0;
    traj.Upsilon.row(0) = upsilon_fluid(init.S0, init.E0, init.I0, init.R0, spec);

    const Eigen::VectorXd total0 = init.S0 + init.E0 + init.I0 + init.R0;
    const Eigen::VectorXd exit_rates = exit_rates_upper(spec);
    Diagnostics diag;

    // cumU[k] = int_0^{t_k} lambda(s) Upsilon(s) ds
    std::vector<Eigen::VectorXd> cumU(K, Eigen::VectorXd::Zero(L));
    Eigen::VectorXd cumS = Eigen::VectorXd::Zero(L), cumE = cumS, cumI = cumS, cumR = cumS;

    for (int k = 1; k < K; ++k) {
        const double t = k * dt;
        const Eigen::VectorXd lam_cell = spec.lambda.at((k - 1) * dt + 0.5 * dt);
        const Eigen::VectorXd S_prev = traj.S.row(k - 1), E_prev = traj.E.row(k - 1),
                              I_prev = traj.I.row(k - 1), R_prev = traj.R.row(k - 1);
        const Eigen::VectorXd Ups_prev = traj.Upsilon.row(k - 1);

        if (k >= 2) {
            cumS += 0.5 * dt * (traj.S.row(k - 2).transpose() + S_prev);
            cumE += 0.5 * dt * (traj.E.row(k - 2).transpose() + E_prev);
            cumI += 0.5 * dt * (traj.I.row(k - 2).transpose() + I_prev);
            cumR += 0.5 * dt * (traj.R.row(k - 2).transpose() + R_prev);
        }

        const Eigen::VectorXd c_E0 = Aint[k].transpose() * init.E0;
        const Eigen::VectorXd c_I0 = Bint[k].transpose() * init.I0;
        const Eigen::VectorXd c_Phi0 = Cint[k].transpose() * init.E0;
        // delayed infection integrals only involve settled history (t_e > 0)
        const Eigen::VectorXd D =
            (k >= d_e) ? (pe.transpose() * cumU[k - d_e]).eval() : Eigen::VectorXd::Zero(L);
        const Eigen::VectorXd E2 = (k >= d_e + d_o)
                                       ? (peq.transpose() * cumU[k - d_e - d_o]).eval()
                                       : Eigen::VectorXd::Zero(L);

        Eigen::VectorXd S_new = S_prev, E_new = E_prev, I_new = I_prev, R_new = R_prev;
        bool converged = false;
        for (int iter = 0; iter < opts.max_picard; ++iter) {
            const Eigen::VectorXd Ups_new = upsilon_fluid(S_new, E_new, I_new, R_new, spec);
            const Eigen::VectorXd intU =
                cumU[k - 1] +
                (0.5 * dt) * (lam_cell.array() * (Ups_prev + Ups_new).array()).matrix();
            const Eigen::VectorXd migS =
                QS.transpose() * (cumS + 0.5 * dt * (S_prev + S_new));
            const Eigen::VectorXd migE =
                QE.transpose() * (cumE + 0.5 * dt * (E_prev + E_new));
            const Eigen::VectorXd migI =
                QI.transpose() * (cumI + 0.5 * dt * (I_prev + I_new));
            const Eigen::VectorXd migR =
                QR.transpose() * (cumR + 0.5 * dt * (R_prev + R_new));

            const Eigen::VectorXd recovered_inflow = c_I0 + c_Phi0 + E2;
            Eigen::VectorXd S_next = init.S0 - intU + migS;
            Eigen::VectorXd E_next = init.E0 - c_E0 + intU - D + migE;
            Eigen::VectorXd I_next = init.I0 - c_I0 + (c_E0 - c_Phi0) + (D - E2) + migI;
            Eigen::VectorXd R_next = init.R0 + migR;
            if (spec.recovered_to_susceptible())
                S_next += recovered_inflow;
            else
                R_next += recovered_inflow;

            const double delta = std::max({(S_next - S_new).cwiseAbs().maxCoeff(),
                                           (E_next - E_new).cwiseAbs().maxCoeff(),
                                           (I_next - I_new).cwiseAbs().maxCoeff(),
                                           (R_next - R_new).cwiseAbs().maxCoeff()});
            S_new = S_next;
            E_new = E_next;
            I_new = I_next;
            R_new = R_next;
            if (delta < opts.picard_tol) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw Error(ErrorCode::NO_CONVERGENCE,
                        "fixed-point iteration did not converge at t=" + std::to_string(t));

        update_diagnostics(diag, S_new, E_new, I_new, R_new, total0, exit_rates, t);
        traj.S.row(k) = S_new;
        traj.E.row(k) = E_new;
        traj.I.row(k) = I_new;
        traj.R.row(k) = R_new;
        const Eigen::VectorXd Ups_k = upsilon_fluid(S_new, E_new, I_new, R_new, spec);
        traj.Upsilon.row(k) = Ups_k;
        cumU[k] = cumU[k - 1] +
                  (0.5 * dt) * (lam_cell.array() * (Ups_prev + Ups_k).array()).matrix();
    }
    traj.max_clamped = diag.max_clamped;
    traj.min_lower_bound_gap = diag.min_gap;
    return traj;
}

} // namespace epi
