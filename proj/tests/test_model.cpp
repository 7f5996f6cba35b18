#include <doctest.h>

#include <cmath>

#include "epi/errors.hpp"
#include "epi/model.hpp"

using namespace epi;

namespace {

ModelSpec two_patch_spec() {
    ModelSpec spec;
    spec.L = 2;
    spec.lambda = RateSchedule::constant(Eigen::Vector2d(1.2, 0.8));
    spec.kappa = Eigen::Matrix2d{{1.0, 0.3}, {0.2, 1.0}};
    spec.gamma = 0.5;
    spec.nu_S = Eigen::Matrix2d{{0.0, 0.1}, {0.2, 0.0}};
    spec.nu_E = Eigen::Matrix2d{{0.0, 0.05}, {0.05, 0.0}};
    spec.nu_I = Eigen::Matrix2d::Zero();
    spec.nu_R = Eigen::Matrix2d{{0.0, 0.3}, {0.1, 0.0}};
    spec.variant = Variant::SEIR;
    return spec;
}

} // namespace

TEST_CASE("spec validation catches each invariant") {
    CHECK(validate_spec(two_patch_spec()).empty());

    ModelSpec bad = two_patch_spec();
    bad.gamma = 1.5;
    auto issues = validate_spec(bad);
    REQUIRE(issues.size() == 1);
    CHECK(std::string(issues[0].code) == "GAMMA_RANGE");

    bad = two_patch_spec();
    bad.kappa(0, 0) = 2.0;
    CHECK(std::string(validate_spec(bad)[0].code) == "KAPPA_DIAGONAL");

    bad = two_patch_spec();
    bad.nu_S(0, 1) = -0.1;
    CHECK(std::string(validate_spec(bad)[0].code) == "NEGATIVE_RATE");

    bad = two_patch_spec();
    bad.lambda.values[0](1) = -1.0;
    CHECK(!validate_spec(bad).empty());
    CHECK_THROWS_AS(require_valid(bad), Error);
}

TEST_CASE("rate schedule lookup") {
    RateSchedule s;
    s.breakpoints = {0.0, 2.0, 5.0};
    s.values = {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 3.0),
                Eigen::VectorXd::Constant(1, 0.5)};
    CHECK(s.at(0, 0.0) == 1.0);
    CHECK(s.at(0, 1.999) == 1.0);
    CHECK(s.at(0, 2.0) == 3.0);
    CHECK(s.at(0, 10.0) == 0.5);
    CHECK(s.max_values()(0) == 3.0);
    CHECK(!s.is_constant());
}

TEST_CASE("infection functional definition and conventions") {
    const ModelSpec spec = two_patch_spec();
    PopulationState st;
    st.S = Eigen::Vector2i(50, 10);
    st.E = Eigen::Vector2i(5, 0);
    st.I = Eigen::Vector2i(10, 4);
    st.R = Eigen::Vector2i(15, 6);
    st.N = 100;
    REQUIRE(st.balanced());

    const Eigen::VectorXd ups = upsilon(st, spec);
    // patch 0: S=50, contact = I0 + 0.3 I1 = 11.2, U0 = 80
    const double expected0 = 50.0 * 11.2 / (std::pow(100.0, 0.5) * std::pow(80.0, 0.5));
    CHECK(ups(0) == doctest::Approx(expected0).epsilon(1e-12));
    const double expected1 = 10.0 * (4.0 + 0.2 * 10.0) / (std::pow(100.0, 0.5) * std::pow(20.0, 0.5));
    CHECK(ups(1) == doctest::Approx(expected1).epsilon(1e-12));

    SUBCASE("empty patch contributes zero, not NaN") {
        st.S = Eigen::Vector2i(0, 60);
        st.E = Eigen::Vector2i(0, 5);
        st.I = Eigen::Vector2i(0, 14);
        st.R = Eigen::Vector2i(0, 21);
        const Eigen::VectorXd u = upsilon(st, spec);
        CHECK(u(0) == 0.0);
        CHECK(std::isfinite(u(1)));
    }

    SUBCASE("gamma zero removes the patch-size denominator") {
        ModelSpec s0 = spec;
        s0.gamma = 0.0;
        const Eigen::VectorXd u = upsilon(st, s0);
        CHECK(u(0) == doctest::Approx(50.0 * 11.2 / 100.0).epsilon(1e-12));
    }

    SUBCASE("fluid functional agrees with rescaled counts") {
        const Eigen::VectorXd uf = upsilon_fluid(st.S.cast<double>() / 100.0,
                                                 st.E.cast<double>() / 100.0,
                                                 st.I.cast<double>() / 100.0,
                                                 st.R.cast<double>() / 100.0, spec);
        CHECK(uf(0) == doctest::Approx(ups(0) / 100.0).epsilon(1e-12));
        CHECK(uf(1) == doctest::Approx(ups(1) / 100.0).epsilon(1e-12));
    }
}

TEST_CASE("rate ceiling bounds the per-patch functional") {
    const ModelSpec spec = two_patch_spec();
    const double bound = upsilon_bound(spec);
    CHECK(bound == doctest::Approx(1.2 * 1.3));  // patch 0: lambda * row sum
    PopulationState st;
    st.S = Eigen::Vector2i(100, 0);
    st.E = Eigen::Vector2i(0, 0);
    st.I = Eigen::Vector2i(0, 100);
    st.R = Eigen::Vector2i(0, 0);
    st.N = 200;
    const Eigen::VectorXd ups = upsilon(st, spec);
    for (int i = 0; i < 2; ++i)
        CHECK(spec.lambda.at(i, 0.0) * ups(i) <= bound * st.N + 1e-9);
}

TEST_CASE("variant slot conventions") {
    ModelSpec spec = two_patch_spec();
    spec.variant = Variant::SIRS;
    CHECK(spec.driver_is_exposed_slot());
    CHECK(spec.recovered_to_susceptible());
    CHECK(spec.uses_exposed_stage());
    spec.variant = Variant::SIR;
    CHECK(!spec.driver_is_exposed_slot());
    CHECK(!spec.recovered_to_susceptible());
    CHECK(!spec.uses_exposed_stage());
    spec.variant = Variant::SIS;
    CHECK(spec.recovered_to_susceptible());
    CHECK(variant_from_string("SEIR") == Variant::SEIR);
    CHECK_THROWS_AS(variant_from_string("nope"), Error);
}
