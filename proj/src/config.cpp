#include "epi/config.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <json.hpp>

#include "epi/errors.hpp"

namespace epi {

using nlohmann::json;

RunMode run_mode_from_string(const std::string& name) {
    if (name == "simulate") return RunMode::Simulate;
    if (name == "fluid") return RunMode::Fluid;
    if (name == "fclt") return RunMode::Fclt;
    if (name == "verify-flln") return RunMode::VerifyFlln;
    if (name == "verify-fclt") return RunMode::VerifyFclt;
    if (name == "kernels") return RunMode::Kernels;
    throw Error(ErrorCode::SCHEMA_VIOLATION, "run.mode: unknown mode \"" + name + "\"");
}

const char* to_string(RunMode m) {
    switch (m) {
        case RunMode::Simulate: return "simulate";
        case RunMode::Fluid: return "fluid";
        case RunMode::Fclt: return "fclt";
        case RunMode::VerifyFlln: return "verify-flln";
        case RunMode::VerifyFclt: return "verify-fclt";
        case RunMode::Kernels: return "kernels";
    }
    return "?";
}

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
    throw Error(ErrorCode::SCHEMA_VIOLATION, path + ": " + what);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) schema_error(path, "expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) schema_error(path + "." + it.key(), "unknown key");
    }
}

const json& get(const json& obj, const std::string& path, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) schema_error(path + "." + key, "missing required key");
    return *it;
}

double as_number(const json& j, const std::string& path) {
    if (!j.is_number()) schema_error(path, "expected a number");
    return j.get<double>();
}

std::int64_t as_integer(const json& j, const std::string& path) {
    if (!j.is_number_integer()) schema_error(path, "expected an integer");
    return j.get<std::int64_t>();
}

std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) schema_error(path, "expected a string");
    return j.get<std::string>();
}

bool as_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) schema_error(path, "expected a boolean");
    return j.get<bool>();
}

Eigen::VectorXd as_vector(const json& j, const std::string& path, int L) {
    if (!j.is_array() || static_cast<int>(j.size()) != L)
        schema_error(path, "expected an array of " + std::to_string(L) + " numbers");
    Eigen::VectorXd v(L);
    for (int i = 0; i < L; ++i) v[i] = as_number(j[i], path + "[" + std::to_string(i) + "]");
    return v;
}

Eigen::MatrixXd as_matrix(const json& j, const std::string& path, int L) {
    if (!j.is_array() || static_cast<int>(j.size()) != L)
        schema_error(path, "expected " + std::to_string(L) + " rows");
    Eigen::MatrixXd m(L, L);
    for (int i = 0; i < L; ++i)
        m.row(i) = as_vector(j[i], path + "[" + std::to_string(i) + "]", L).transpose();
    return m;
}

DurationLaw parse_law(const json& j, const std::string& path) {
    if (!j.is_object()) schema_error(path, "expected a law object");
    const std::string fam = as_string(get(j, path, "family"), path + ".family");
    if (fam == "exponential") {
        check_keys(j, path, {"family", "rate"});
        return DurationLaw::exponential(as_number(get(j, path, "rate"), path + ".rate"));
    }
    if (fam == "gamma") {
        check_keys(j, path, {"family", "shape", "scale"});
        return DurationLaw::gamma(as_number(get(j, path, "shape"), path + ".shape"),
                                  as_number(get(j, path, "scale"), path + ".scale"));
    }
    if (fam == "lognormal") {
        check_keys(j, path, {"family", "mu", "sigma"});
        return DurationLaw::lognormal(as_number(get(j, path, "mu"), path + ".mu"),
                                      as_number(get(j, path, "sigma"), path + ".sigma"));
    }
    if (fam == "uniform") {
        check_keys(j, path, {"family", "lo", "hi"});
        return DurationLaw::uniform(as_number(get(j, path, "lo"), path + ".lo"),
                                    as_number(get(j, path, "hi"), path + ".hi"));
    }
    if (fam == "deterministic") {
        check_keys(j, path, {"family", "value"});
        return DurationLaw::deterministic(as_number(get(j, path, "value"), path + ".value"));
    }
    if (fam == "empirical") {
        check_keys(j, path, {"family", "atoms"});
        const json& a = get(j, path, "atoms");
        if (!a.is_array() || a.empty()) schema_error(path + ".atoms", "expected a nonempty array");
        std::vector<double> atoms;
        for (std::size_t i = 0; i < a.size(); ++i)
            atoms.push_back(as_number(a[i], path + ".atoms[" + std::to_string(i) + "]"));
        return DurationLaw::empirical(std::move(atoms));
    }
    if (fam == "equilibrium") {
        check_keys(j, path, {"family", "base"});
        return DurationLaw::equilibrium(parse_law(get(j, path, "base"), path + ".base"));
    }
    throw Error(ErrorCode::UNKNOWN_FAMILY, path + ".family: \"" + fam + "\"");
}

JointMode parse_joint_mode(const std::string& s, const std::string& path) {
    if (s == "product") return JointMode::Product;
    if (s == "comonotone") return JointMode::Comonotone;
    if (s == "gaussian_copula") return JointMode::GaussianCopula;
    schema_error(path, "unknown joint_mode \"" + s + "\"");
}

RateSchedule parse_lambda(const json& j, const std::string& path, int L) {
    if (!j.is_array() || j.empty()) schema_error(path, "expected a nonempty array");
    if (j[0].is_number()) {
        return RateSchedule::constant(as_vector(j, path, L));
    }
    RateSchedule sched;
    for (std::size_t p = 0; p < j.size(); ++p) {
        const std::string pp = path + "[" + std::to_string(p) + "]";
        check_keys(j[p], pp, {"t", "values"});
        const double t = as_number(get(j[p], pp, "t"), pp + ".t");
        if (p == 0 && t != 0.0) schema_error(pp + ".t", "first piece must start at 0");
        if (p > 0 && t <= sched.breakpoints.back())
            schema_error(pp + ".t", "breakpoints must be strictly increasing");
        sched.breakpoints.push_back(t);
        sched.values.push_back(as_vector(get(j[p], pp, "values"), pp + ".values", L));
    }
    return sched;
}

} // namespace

ExperimentSpec parse_config(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::PARSE_ERROR, origin + ": " + e.what());
    }
    check_keys(root, origin, {"model", "laws", "init", "run"});

    ExperimentSpec exp;
    exp.config_hash = [&] {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a64(text)));
        return std::string(buf);
    }();

    // ---- model ----
    const json& jm = get(root, origin, "model");
    if (!jm.is_object()) schema_error("model", "expected an object");
    const Variant var = variant_from_string(
        as_string(get(jm, "model", "variant"), "model.variant"));
    exp.user_variant = var;

    // Observed-compartment key sets per variant; nu_E only exists when the
    // observed model has a latent stage, nu_R only when it has an R stage.
    const bool has_E = (var == Variant::SEIR);
    const bool has_R = (var != Variant::SIS);
    {
        std::vector<const char*> allowed = {"L", "lambda", "kappa", "gamma", "variant", "nu_S",
                                            "nu_I"};
        if (has_E) allowed.push_back("nu_E");
        if (has_R) allowed.push_back("nu_R");
        for (auto it = jm.begin(); it != jm.end(); ++it) {
            bool ok = false;
            for (const char* k : allowed)
                if (it.key() == k) { ok = true; break; }
            if (!ok) schema_error(std::string("model.") + it.key(), "unknown key");
        }
    }
    const int L = static_cast<int>(as_integer(get(jm, "model", "L"), "model.L"));
    if (L < 1) schema_error("model.L", "must be >= 1");

    ModelSpec& m = exp.model;
    m.L = L;
    m.variant = var;
    m.lambda = parse_lambda(get(jm, "model", "lambda"), "model.lambda", L);
    m.kappa = as_matrix(get(jm, "model", "kappa"), "model.kappa", L);
    m.gamma = as_number(get(jm, "model", "gamma"), "model.gamma");
    auto nu_or_zero = [&](const char* key) {
        auto it = jm.find(key);
        if (it == jm.end()) return Eigen::MatrixXd::Zero(L, L).eval();
        return as_matrix(*it, std::string("model.") + key, L);
    };
    // Internal slots: for SIRS the infectious stage occupies the E slot and
    // the immune stage the I slot, so the user matrices are relabeled.
    m.nu_S = nu_or_zero("nu_S");
    if (var == Variant::SIRS) {
        m.nu_E = nu_or_zero("nu_I");
        m.nu_I = nu_or_zero("nu_R");
        m.nu_R = Eigen::MatrixXd::Zero(L, L);
    } else {
        m.nu_E = has_E ? nu_or_zero("nu_E") : Eigen::MatrixXd::Zero(L, L);
        m.nu_I = nu_or_zero("nu_I");
        m.nu_R = has_R ? nu_or_zero("nu_R") : Eigen::MatrixXd::Zero(L, L);
    }
    require_valid(m);

    // ---- laws ----
    const json& jl = get(root, origin, "laws");
    const bool two_stage = (var == Variant::SEIR || var == Variant::SIRS);
    if (two_stage)
        check_keys(jl, "laws", {"G", "F", "G0", "F0", "joint_mode", "joint_params"});
    else
        check_keys(jl, "laws", {"F", "F0"});

    DurationLaw F = parse_law(get(jl, "laws", "F"), "laws.F");
    DurationLaw F0 = jl.contains("F0") ? parse_law(jl["F0"], "laws.F0") : F;
    DurationLaw G = two_stage ? parse_law(get(jl, "laws", "G"), "laws.G")
                              : DurationLaw::deterministic(0.0);
    DurationLaw G0 = (two_stage && jl.contains("G0")) ? parse_law(jl["G0"], "laws.G0") : G;
    JointMode jmode = JointMode::Product;
    double rho = 0.0;
    if (two_stage && jl.contains("joint_mode")) {
        jmode = parse_joint_mode(as_string(jl["joint_mode"], "laws.joint_mode"),
                                 "laws.joint_mode");
        if (jmode == JointMode::GaussianCopula) {
            const json& jp = get(jl, "laws", "joint_params");
            check_keys(jp, "laws.joint_params", {"rho"});
            rho = as_number(get(jp, "laws.joint_params", "rho"), "laws.joint_params.rho");
        } else if (jl.contains("joint_params")) {
            schema_error("laws.joint_params", "only valid with joint_mode gaussian_copula");
        }
    } else if (two_stage && jl.contains("joint_params")) {
        schema_error("laws.joint_params", "requires joint_mode");
    }
    exp.laws = LawSet{JointDurationLaw(jmode, G, F, rho), JointDurationLaw(jmode, G0, F, rho),
                      F0};

    // ---- init ----
    const json& ji = get(root, origin, "init");
    check_keys(ji, "init", {"fractions", "counts"});
    if (ji.contains("fractions") == ji.contains("counts"))
        schema_error("init", "exactly one of fractions/counts required");
    auto comp_keys = [&](const std::string& path, const json& jc) {
        std::vector<const char*> allowed = {"S", "I"};
        if (has_E) allowed.push_back("E");
        if (has_R) allowed.push_back("R");
        for (auto it = jc.begin(); it != jc.end(); ++it) {
            bool ok = false;
            for (const char* k : allowed)
                if (it.key() == k) { ok = true; break; }
            if (!ok) schema_error(path + "." + it.key(), "unknown key");
        }
    };
    // Reads one observed compartment block into the four internal slots.
    auto read_blocks = [&](const json& jc, const std::string& path, auto read_one) {
        auto one = [&](const char* key) {
            auto it = jc.find(key);
            return it == jc.end() ? read_one(json(), path, true)
                                  : read_one(*it, path + "." + key, false);
        };
        auto S = one("S"), E = one("E"), I = one("I"), R = one("R");
        if (var == Variant::SIRS) return std::array{S, I, R, E};  // E slot <- observed I
        return std::array{S, E, I, R};
    };
    if (ji.contains("fractions")) {
        const json& jf = ji["fractions"];
        if (!jf.is_object()) schema_error("init.fractions", "expected an object");
        comp_keys("init.fractions", jf);
        auto blocks = read_blocks(jf, "init.fractions",
                                  [&](const json& j, const std::string& p, bool absent) {
                                      return absent ? Eigen::VectorXd::Zero(L).eval()
                                                    : as_vector(j, p, L);
                                  });
        exp.init = FluidInit{blocks[0], blocks[1], blocks[2], blocks[3]};
    } else {
        const json& jc = ji["counts"];
        if (!jc.is_object()) schema_error("init.counts", "expected an object");
        comp_keys("init.counts", jc);
        auto blocks = read_blocks(jc, "init.counts",
                                  [&](const json& j, const std::string& p, bool absent) {
                                      if (absent) return Eigen::VectorXi::Zero(L).eval();
                                      if (!j.is_array() || static_cast<int>(j.size()) != L)
                                          schema_error(p, "expected an array of " +
                                                              std::to_string(L) + " integers");
                                      Eigen::VectorXi v(L);
                                      for (int i = 0; i < L; ++i) {
                                          const std::int64_t c = as_integer(
                                              j[i], p + "[" + std::to_string(i) + "]");
                                          if (c < 0) schema_error(p, "counts must be >= 0");
                                          v[i] = static_cast<int>(c);
                                      }
                                      return v;
                                  });
        exp.init_is_counts = true;
        exp.S0c = blocks[0];
        exp.E0c = blocks[1];
        exp.I0c = blocks[2];
        exp.R0c = blocks[3];
        const double tot = static_cast<double>(exp.S0c.sum() + exp.E0c.sum() + exp.I0c.sum() +
                                               exp.R0c.sum());
        if (tot <= 0) throw Error(ErrorCode::BAD_INIT, "init.counts: total population is zero");
        exp.init = FluidInit{exp.S0c.cast<double>() / tot, exp.E0c.cast<double>() / tot,
                             exp.I0c.cast<double>() / tot, exp.R0c.cast<double>() / tot};
    }

    // ---- run ----
    const json& jr = get(root, origin, "run");
    check_keys(jr, "run",
               {"mode", "N", "M", "P", "dt", "T", "checkpoints", "base_seed", "out_dir",
                "threads", "strict_paper_indices", "kernel_method", "mc_samples", "thresholds",
                "init_fluct_std"});
    exp.mode = run_mode_from_string(as_string(get(jr, "run", "mode"), "run.mode"));
    exp.dt = as_number(get(jr, "run", "dt"), "run.dt");
    exp.T = as_number(get(jr, "run", "T"), "run.T");
    if (!(exp.dt > 0.0)) schema_error("run.dt", "must be > 0");
    if (!(exp.T > 0.0)) schema_error("run.T", "must be > 0");
    if (jr.contains("N")) {
        const json& jn = jr["N"];
        if (jn.is_array()) {
            for (std::size_t i = 0; i < jn.size(); ++i)
                exp.N.push_back(as_integer(jn[i], "run.N[" + std::to_string(i) + "]"));
        } else {
            exp.N.push_back(as_integer(jn, "run.N"));
        }
        for (std::int64_t n : exp.N)
            if (n < 1) schema_error("run.N", "population sizes must be >= 1");
    }
    if (jr.contains("M")) exp.M = static_cast<int>(as_integer(jr["M"], "run.M"));
    if (jr.contains("P")) exp.P = static_cast<int>(as_integer(jr["P"], "run.P"));
    if (jr.contains("base_seed")) {
        const json& js = jr["base_seed"];
        if (!js.is_number_integer()) schema_error("run.base_seed", "expected an integer");
        exp.base_seed = js.get<std::uint64_t>();
    }
    if (jr.contains("out_dir")) exp.out_dir = as_string(jr["out_dir"], "run.out_dir");
    if (jr.contains("threads"))
        exp.threads = static_cast<int>(as_integer(jr["threads"], "run.threads"));
    if (jr.contains("strict_paper_indices"))
        exp.strict_paper_indices = as_bool(jr["strict_paper_indices"],
                                           "run.strict_paper_indices");
    if (jr.contains("kernel_method")) {
        const std::string km = as_string(jr["kernel_method"], "run.kernel_method");
        if (km == "quadrature")
            exp.kernel_opts.method = KernelBuildMethod::Quadrature;
        else if (km == "monte_carlo")
            exp.kernel_opts.method = KernelBuildMethod::MonteCarlo;
        else
            schema_error("run.kernel_method", "expected quadrature or monte_carlo");
    }
    if (jr.contains("mc_samples"))
        exp.kernel_opts.mc_samples = as_integer(jr["mc_samples"], "run.mc_samples");
    if (jr.contains("thresholds")) {
        const json& jt = jr["thresholds"];
        check_keys(jt, "run.thresholds",
                   {"z_mult", "slope_lo", "slope_hi", "ci_level", "cov_rel_tol"});
        if (jt.contains("z_mult"))
            exp.thresholds.z_mult = as_number(jt["z_mult"], "run.thresholds.z_mult");
        if (jt.contains("slope_lo"))
            exp.thresholds.slope_lo = as_number(jt["slope_lo"], "run.thresholds.slope_lo");
        if (jt.contains("slope_hi"))
            exp.thresholds.slope_hi = as_number(jt["slope_hi"], "run.thresholds.slope_hi");
        if (jt.contains("ci_level"))
            exp.thresholds.ci_level = as_number(jt["ci_level"], "run.thresholds.ci_level");
        if (jt.contains("cov_rel_tol"))
            exp.thresholds.cov_rel_tol = as_number(jt["cov_rel_tol"],
                                                   "run.thresholds.cov_rel_tol");
    }
    if (jr.contains("init_fluct_std")) {
        const json& jf = jr["init_fluct_std"];
        if (!jf.is_object()) schema_error("run.init_fluct_std", "expected an object");
        comp_keys("run.init_fluct_std", jf);
        auto blocks = read_blocks(jf, "run.init_fluct_std",
                                  [&](const json& j, const std::string& p, bool absent) {
                                      return absent ? Eigen::VectorXd::Zero(L).eval()
                                                    : as_vector(j, p, L);
                                  });
        exp.fluct0_std_S = blocks[0];
        exp.fluct0_std_E = blocks[1];
        exp.fluct0_std_I = blocks[2];
        exp.fluct0_std_R = blocks[3];
    }
    if (jr.contains("checkpoints")) {
        const json& jc = jr["checkpoints"];
        if (!jc.is_array()) schema_error("run.checkpoints", "expected an array");
        for (std::size_t i = 0; i < jc.size(); ++i) {
            const double t = as_number(jc[i], "run.checkpoints[" + std::to_string(i) + "]");
            const double k = t / exp.dt;
            if (t < 0.0 || t > exp.T + 1e-9 * exp.T ||
                std::abs(k - std::round(k)) > 1e-9 * std::max(1.0, k))
                throw Error(ErrorCode::VALIDATION,
                            "run.checkpoints[" + std::to_string(i) +
                                "]: checkpoint not on the grid within [0,T]");
            exp.checkpoints.push_back(t);
        }
    }

    // Mode-specific requirements.
    const bool needs_N = exp.mode == RunMode::Simulate || exp.mode == RunMode::VerifyFlln ||
                         exp.mode == RunMode::VerifyFclt;
    if (needs_N && exp.N.empty()) schema_error("run.N", "required for mode");
    const bool needs_M = exp.mode == RunMode::VerifyFlln || exp.mode == RunMode::VerifyFclt;
    if (needs_M && exp.M < 1) schema_error("run.M", "required for mode");
    const bool needs_P = exp.mode == RunMode::Fclt || exp.mode == RunMode::VerifyFclt;
    if (needs_P && exp.P < 1) schema_error("run.P", "required for mode");

    // The Gaussian limit is not available at gamma = 1 with cross-patch
    // contact; refuse at parse time for the modes that need it.
    if (needs_P && exp.model.gamma == 1.0) {
        for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
                if (i != j && exp.model.kappa(i, j) != 0.0)
                    throw Error(ErrorCode::FCLT_INADMISSIBLE,
                                "gamma = 1 with kappa(" + std::to_string(i) + "," +
                                    std::to_string(j) + ") > 0");
    }
    return exp;
}

ExperimentSpec load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::PARSE_ERROR, path + ": cannot open file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

PopulationState initial_counts(const ExperimentSpec& exp, std::int64_t N) {
    const int L = exp.model.L;
    PopulationState st;
    st.N = N;
    if (exp.init_is_counts) {
        st.S = exp.S0c;
        st.E = exp.E0c;
        st.I = exp.I0c;
        st.R = exp.R0c;
        if (st.total() != N)
            throw Error(ErrorCode::BAD_INIT, "configured counts total " +
                                                 std::to_string(st.total()) +
                                                 " but N = " + std::to_string(N));
        return st;
    }
    // Largest-remainder rounding over the 4L cells so counts sum exactly to N.
    std::vector<double> frac(4 * L);
    for (int i = 0; i < L; ++i) {
        frac[0 * L + i] = exp.init.S0[i];
        frac[1 * L + i] = exp.init.E0[i];
        frac[2 * L + i] = exp.init.I0[i];
        frac[3 * L + i] = exp.init.R0[i];
    }
    std::vector<std::int64_t> cnt(4 * L);
    std::vector<std::pair<double, int>> rem;
    std::int64_t assigned = 0;
    for (int c = 0; c < 4 * L; ++c) {
        const double x = frac[c] * static_cast<double>(N);
        cnt[c] = static_cast<std::int64_t>(std::floor(x + 1e-12));
        assigned += cnt[c];
        rem.emplace_back(-(x - static_cast<double>(cnt[c])), c);  // negative: sort ascending
    }
    std::sort(rem.begin(), rem.end());
    for (std::int64_t k = 0; k < N - assigned; ++k) ++cnt[rem[static_cast<std::size_t>(k)].second];
    st.S.resize(L);
    st.E.resize(L);
    st.I.resize(L);
    st.R.resize(L);
    for (int i = 0; i < L; ++i) {
        st.S[i] = static_cast<int>(cnt[0 * L + i]);
        st.E[i] = static_cast<int>(cnt[1 * L + i]);
        st.I[i] = static_cast<int>(cnt[2 * L + i]);
        st.R[i] = static_cast<int>(cnt[3 * L + i]);
    }
    return st;
}

} // namespace epi
