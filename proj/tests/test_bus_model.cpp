#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "pnscan/bus_model.hpp"
#include "pnscan/rng.hpp"
#include "test_util.hpp"

using namespace pnscan;

TEST_CASE("wired-AND oracle") {
    std::vector<TransceiverState> s{TransceiverState::Dominant, TransceiverState::Recessive};
    CHECK(logical_bus_value(s) == 0);
    s = {TransceiverState::Recessive, TransceiverState::Recessive, TransceiverState::Recessive};
    CHECK(logical_bus_value(s) == 1);
    s = {TransceiverState::Dominant, TransceiverState::Dominant, TransceiverState::Dominant};
    CHECK(logical_bus_value(s) == 0);
    s = {TransceiverState::Isolated};
    CHECK(logical_bus_value(s) == 1);  // isolated reads as recessive
    CHECK_THROWS_AS(logical_bus_value({}), InvalidInputError);
}

TEST_CASE("wired-AND matches exhaustive enumeration up to 6 nodes") {
    for (int n = 1; n <= 6; ++n) {
        const int combos = static_cast<int>(std::pow(3.0, n));
        for (int c = 0; c < combos; ++c) {
            std::vector<TransceiverState> s(n);
            int acc = c;
            int expected = 1;
            for (int i = 0; i < n; ++i) {
                s[i] = static_cast<TransceiverState>(acc % 3);
                acc /= 3;
                if (s[i] == TransceiverState::Dominant) expected = 0;
            }
            REQUIRE(logical_bus_value(s) == expected);
        }
    }
}

namespace {

Topology three_node_topology() {
    Topology t;
    t.node_positions_m = {0.0, 10.0, 20.0};
    t.observer_position_m = 5.0;
    t.bus_length_m = 20.0;
    t.cable_resistance_ohm_per_m = 0.1;
    t.termination_ohms = {120.0, 120.0};
    return t;
}

}  // namespace

TEST_CASE("steady state: all recessive is 0 V") {
    const auto topo = three_node_topology();
    std::vector<TransceiverProfile> profs{testutil::profile_a(), testutil::profile_b(),
                                          testutil::profile_a()};
    std::vector<TransceiverState> s(3, TransceiverState::Recessive);
    CHECK(resolve_steady_state(s, profs, topo) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("steady state: lone driver with no other load sees its full EMF") {
    Topology t;
    t.node_positions_m = {0.0};
    t.observer_position_m = 0.0;
    t.cable_resistance_ohm_per_m = 0.0;
    t.termination_ohms = {-1.0, -1.0};  // no terminations
    auto p = testutil::profile_a();
    std::vector<TransceiverState> s{TransceiverState::Dominant};
    const double v = resolve_steady_state(s, {&p, 1}, t);
    CHECK(v == doctest::Approx(p.dominant_emf_v()).epsilon(1e-12));
}

TEST_CASE("steady state: 3-node chain matches the hand-solved nodal system") {
    // nodes at 0/10/20 m, observer at 5 m, outer nodes driving: the four
    // unknowns are the voltages at 0, 5, 10 and 20 m
    const auto topo = three_node_topology();
    auto p1 = testutil::profile_a();
    auto p2 = testutil::profile_b();
    auto p3 = testutil::profile_a();
    p3.drive_conductance_s = 0.04;
    p3.canh_dominant_v = 3.3;
    p3.canl_dominant_v = 1.5;
    std::vector<TransceiverProfile> profs{p1, p2, p3};
    std::vector<TransceiverState> states{TransceiverState::Dominant, TransceiverState::Recessive,
                                         TransceiverState::Dominant};

    const double g_ao = 1.0 / (0.1 * 5.0);   // 0 -> 5 m segment
    const double g_ob = 1.0 / (0.1 * 5.0);   // 5 -> 10 m
    const double g_bc = 1.0 / (0.1 * 10.0);  // 10 -> 20 m
    const double gt = 1.0 / 120.0;
    const double g1 = p1.drive_conductance_s, e1 = p1.dominant_emf_v();
    const double l2 = p2.load_conductance_s;
    const double g3 = p3.drive_conductance_s, e3 = p3.dominant_emf_v();

    // KCL at {0, 5, 10, 20} m written out by hand
    const std::vector<double> a = {
        g1 + gt + g_ao, -g_ao,        0.0,                 0.0,
        -g_ao,          g_ao + g_ob,  -g_ob,               0.0,
        0.0,            -g_ob,        g_ob + l2 + g_bc,    -g_bc,
        0.0,            0.0,          -g_bc,               g_bc + g3 + gt};
    const std::vector<double> b = {g1 * e1, 0.0, 0.0, g3 * e3};
    const auto x = oracles::cramer_solve(a, b, 4);

    const double v = resolve_steady_state(states, profs, topo);
    CHECK(v == doctest::Approx(x[1]).epsilon(1e-9));
}

TEST_CASE("steady state: switching a node recessive->dominant moves the observer voltage") {
    const auto topo = three_node_topology();
    std::vector<TransceiverProfile> profs{testutil::profile_a(), testutil::profile_b(),
                                          testutil::profile_a()};
    std::vector<TransceiverState> s{TransceiverState::Dominant, TransceiverState::Recessive,
                                    TransceiverState::Recessive};
    const double before = resolve_steady_state(s, profs, topo);
    s[2] = TransceiverState::Dominant;
    const double after = resolve_steady_state(s, profs, topo);
    CHECK(after - before > 1e-6);  // an extra driver raises the differential level
}

TEST_CASE("steady state: superset of drivers never lowers the level") {
    const auto topo = three_node_topology();
    std::vector<TransceiverProfile> profs{testutil::profile_a(), testutil::profile_b(),
                                          testutil::profile_a()};
    for (int c = 0; c < 8; ++c) {
        for (int i = 0; i < 3; ++i) {
            if (c & (1 << i)) continue;
            std::vector<TransceiverState> lo(3), hi(3);
            for (int k = 0; k < 3; ++k)
                lo[k] = (c & (1 << k)) ? TransceiverState::Dominant : TransceiverState::Recessive;
            hi = lo;
            hi[i] = TransceiverState::Dominant;
            CHECK(resolve_steady_state(hi, profs, topo) >=
                  resolve_steady_state(lo, profs, topo) - 1e-12);
        }
    }
}

TEST_CASE("steady state: floating network is rejected") {
    Topology t;
    t.node_positions_m = {0.0};
    t.observer_position_m = 0.0;
    t.termination_ohms = {-1.0, -1.0};
    auto p = testutil::profile_a();
    std::vector<TransceiverState> s{TransceiverState::Isolated};
    CHECK_THROWS_AS(resolve_steady_state(s, {&p, 1}, t), DegenerateNetworkError);
}

TEST_CASE("steady state: distinct levels reach 3^N - 2^N with generic conductances") {
    // one node equipped with N co-located transceivers plus a fixed
    // recessive partner; enumerate every state vector with >= 1 driver
    for (int N = 1; N <= 4; ++N) {
        Topology t;
        t.node_positions_m.assign(N, 5.0);
        t.node_positions_m.push_back(25.0);  // partner
        t.observer_position_m = 0.0;
        t.bus_length_m = 30.0;
        t.cable_resistance_ohm_per_m = 0.05;
        std::vector<TransceiverProfile> profs;
        Rng rng(42);
        for (int i = 0; i < N; ++i) {
            auto p = testutil::profile_a();
            p.drive_conductance_s *= 1.0 + 0.2 * rng.uniform01();
            p.load_conductance_s *= 1.0 + 0.3 * rng.uniform01();
            p.canh_dominant_v += 0.05 * rng.uniform01();
            profs.push_back(p);
        }
        profs.push_back(testutil::profile_b());

        std::set<long long> levels;
        const int combos = static_cast<int>(std::pow(3.0, N));
        int eligible = 0;
        for (int c = 0; c < combos; ++c) {
            std::vector<TransceiverState> s(N + 1, TransceiverState::Recessive);
            int acc = c;
            bool any_dom = false;
            for (int i = 0; i < N; ++i) {
                s[i] = static_cast<TransceiverState>(acc % 3);
                acc /= 3;
                any_dom |= s[i] == TransceiverState::Dominant;
            }
            if (!any_dom) continue;
            ++eligible;
            const double v = resolve_steady_state(s, profs, t);
            levels.insert(std::llround(v * 1e9));  // quantize to nV
        }
        const int expected = static_cast<int>(std::pow(3.0, N) - std::pow(2.0, N));
        CHECK(eligible == expected);
        CHECK(static_cast<int>(levels.size()) == expected);
    }
}

TEST_CASE("dense solver flags singular systems") {
    std::vector<double> x;
    CHECK_FALSE(solve_dense_linear({0.0, 0.0, 0.0, 0.0}, {1.0, 1.0}, 2, x));
    CHECK(solve_dense_linear({2.0, 0.0, 0.0, 4.0}, {2.0, 8.0}, 2, x));
    CHECK(x[0] == doctest::Approx(1.0));
    CHECK(x[1] == doctest::Approx(2.0));
}

TEST_CASE("profile and topology invariants are enforced") {
    auto p = testutil::profile_a();
    p.canl_dominant_v = p.canh_dominant_v + 1.0;
    CHECK_THROWS_AS(p.validate(), InvalidInputError);
    Topology t;
    t.node_positions_m = {50.0};
    t.bus_length_m = 20.0;
    CHECK_THROWS_AS(t.validate(), InvalidInputError);
}
