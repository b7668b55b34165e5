#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "pnscan/can_frame.hpp"
#include "pnscan/prf.hpp"
#include "pnscan/protocol.hpp"
#include "pnscan/rng.hpp"
#include "test_util.hpp"

using namespace pnscan;

TEST_CASE("expand_seed: deterministic with a prefix property") {
    const std::vector<uint8_t> seed{0xde, 0xad, 0xbe, 0xef};
    const auto a = expand_seed(seed, 64);
    const auto b = expand_seed(seed, 64);
    CHECK(a == b);
    const auto longer = expand_seed(seed, 128);
    CHECK(std::equal(a.begin(), a.end(), longer.begin()));
    const std::vector<uint8_t> seed2{0xde, 0xad, 0xbe, 0xee};
    const auto other = expand_seed(seed2, 64);
    CHECK(other != a);
}

TEST_CASE("expand_seed: ones fraction near one half") {
    const std::vector<uint8_t> seed{0x01, 0x02, 0x03};
    const auto bits = expand_seed(seed, 100000);
    std::size_t ones = 0;
    for (uint8_t b : bits) ones += b;
    const double frac = static_cast<double>(ones) / 100000.0;
    CHECK(std::abs(frac - 0.5) < 0.01);
}

TEST_CASE("interleave: each bit followed by its complement") {
    const auto p = interleave_with_complement(testutil::bits_of("0110"));
    CHECK(p == testutil::bits_of("01101001"));
    CHECK(interleave_with_complement(testutil::bits_of("0")) == testutil::bits_of("01"));
    CHECK_THROWS_AS(interleave_with_complement({}), InvalidInputError);
}

TEST_CASE("interleave round-trips through deinterleave") {
    Rng rng(99);
    for (int t = 0; t < 200; ++t) {
        std::vector<uint8_t> chunk(32);
        for (auto& b : chunk) b = rng.bernoulli(0.5) ? 1 : 0;
        CHECK(deinterleave(interleave_with_complement(chunk)) == chunk);
    }
}

TEST_CASE("bit stuffing inserts complements after runs of five") {
    CHECK(bit_stuff(testutil::bits_of("00000")) == testutil::bits_of("000001"));
    CHECK(bit_stuff(testutil::bits_of("0101010101")) == testutil::bits_of("0101010101"));
    // the inserted 0 counts toward the next run, so five payload zeros
    // after it trigger a second stuff bit
    CHECK(bit_stuff(testutil::bits_of("111110000")) == testutil::bits_of("11111000001"));
}

TEST_CASE("bit stuffing round-trips and the oracle agrees") {
    Rng rng(7);
    for (int t = 0; t < 10000; ++t) {
        std::vector<uint8_t> bits(20 + rng.uniform_below(60));
        for (auto& b : bits) b = rng.bernoulli(0.5) ? 1 : 0;
        const auto stuffed = bit_stuff(bits);
        REQUIRE(bit_unstuff(stuffed) == bits);
        const auto oracle = oracles::reference_destuff(stuffed);
        REQUIRE(oracle.has_value());
        REQUIRE(*oracle == bits);
        // no run of six inside the stuffed stream
        int run = 1;
        for (std::size_t i = 1; i < stuffed.size(); ++i) {
            run = stuffed[i] == stuffed[i - 1] ? run + 1 : 1;
            REQUIRE(run <= 5);
        }
    }
}

TEST_CASE("bit unstuff rejects a run of six") {
    CHECK_THROWS_AS(bit_unstuff(testutil::bits_of("000000")), FramingError);
}

TEST_CASE("crc15 matches the polynomial-division oracle") {
    Rng rng(21);
    for (int t = 0; t < 500; ++t) {
        std::vector<uint8_t> bits(10 + rng.uniform_below(100));
        for (auto& b : bits) b = rng.bernoulli(0.5) ? 1 : 0;
        CHECK(crc15_bits(crc15(bits)) == oracles::reference_crc_bits(bits));
    }
}

TEST_CASE("pns header is 19 bits of SOF, id, rtr, control") {
    const auto h = pns_header_bits(0x7AA, 8);
    REQUIRE(h.size() == kHeaderBits);
    CHECK(h[0] == 0);  // SOF dominant
    uint16_t id = 0;
    for (int i = 1; i <= 11; ++i) id = static_cast<uint16_t>(id * 2 + h[i]);
    CHECK(id == 0x7AA);
    unsigned dlc = 0;
    for (int i = 15; i < 19; ++i) dlc = dlc * 2 + h[i];
    CHECK(dlc == 8);
    CHECK_THROWS_AS(pns_header_bits(0x800, 8), InvalidInputError);
}

TEST_CASE("worked example: chunks 0110 and 1001 agree on key 0110") {
    auto bus = testutil::baseline_bus();
    auto cfg = testutil::session_with_bits("0110", "1001", 4, 4);
    const auto r = run_pns_two_party(bus, cfg, 1);
    CHECK(r.key_primary == testutil::bits_of("0110"));
    CHECK(r.key_secondary == testutil::bits_of("0110"));
    REQUIRE(r.frames.size() == 1);
    // every interleaved bus bit of the frame is dominant
    REQUIRE(r.frames[0].payload_bus_bits.size() == 8);
    for (uint8_t b : r.frames[0].payload_bus_bits) CHECK(b == 0);
}

TEST_CASE("identical streams harvest nothing and exhaust the session") {
    auto bus = testutil::baseline_bus();
    SessionConfig cfg;
    cfg.primary_id = "ecu1";
    cfg.secondary_id = "ecu2";
    cfg.primary_stream = StreamSource::from_seed({1, 2, 3});
    cfg.secondary_stream = StreamSource::from_seed({1, 2, 3});
    cfg.params.target_key_bits = 8;
    cfg.params.frame_cap = 4;
    CHECK_THROWS_AS(run_pns_two_party(bus, cfg, 5), ExhaustionError);
}

TEST_CASE("complement structure: bus pair (0,0) exactly when the bits differ") {
    auto bus = testutil::baseline_bus();
    for (int x = 0; x <= 1; ++x) {
        for (int y = 0; y <= 1; ++y) {
            auto cfg = testutil::session_with_bits(x ? "1111" : "0000", y ? "1111" : "0000", 4, 1);
            cfg.params.frame_cap = 1;
            if (x == y) {
                CHECK_THROWS_AS(run_pns_two_party(bus, cfg, 3), ExhaustionError);
                continue;
            }
            const auto r = run_pns_two_party(bus, cfg, 3);
            const auto& pb = r.frames[0].payload_bus_bits;
            for (std::size_t pair = 0; pair < 4; ++pair) {
                CHECK(pb[2 * pair] == 0);
                CHECK(pb[2 * pair + 1] == 0);
            }
        }
    }
}

TEST_CASE("agreement and harvest rate over randomized sessions") {
    auto bus = testutil::baseline_bus();
    Rng rng(1001);
    std::size_t harvested = 0, chunk_bits_seen = 0;
    for (int t = 0; t < 100; ++t) {
        SessionConfig cfg = testutil::session_with_seeds(rng.next_u64());
        cfg.params.chunk_bits = 32;
        cfg.params.target_key_bits = 32;
        const auto r = run_pns_two_party(bus, cfg, rng.next_u64());
        REQUIRE(r.key_primary == r.key_secondary);
        REQUIRE(r.key_primary.size() == 32);
        for (const auto& f : r.frames) {
            for (std::size_t pair = 0; 2 * pair + 1 < f.payload_bus_bits.size(); ++pair) {
                ++chunk_bits_seen;
                if (f.payload_bus_bits[2 * pair] == 0 && f.payload_bus_bits[2 * pair + 1] == 0)
                    ++harvested;
            }
        }
    }
    const double frac = static_cast<double>(harvested) / static_cast<double>(chunk_bits_seen);
    CHECK(std::abs(frac - 0.5) < 0.1);
}

TEST_CASE("logical trace is invariant under swapping chunk bits at secret positions") {
    auto bus = testutil::baseline_bus();
    const std::string c1 = "01101100", c2 = "10011010";
    auto cfg = testutil::session_with_bits(c1, c2, 8, 1);
    const auto base = run_pns_two_party(bus, cfg, 11);

    std::string s1 = c1, s2 = c2;
    for (std::size_t i = 0; i < s1.size(); ++i)
        if (s1[i] != s2[i]) std::swap(s1[i], s2[i]);
    auto cfg2 = testutil::session_with_bits(s1, s2, 8, 1);
    const auto swapped = run_pns_two_party(bus, cfg2, 11);

    REQUIRE(base.frames[0].bits.size() == swapped.frames[0].bits.size());
    for (std::size_t i = 0; i < base.frames[0].bits.size(); ++i)
        REQUIRE(base.frames[0].bits[i].bus == swapped.frames[0].bits[i].bus);
}

TEST_CASE("every emitted frame passes the reference CAN decoder") {
    auto bus = testutil::baseline_bus();
    Rng rng(77);
    for (int t = 0; t < 25; ++t) {
        SessionConfig cfg = testutil::session_with_seeds(rng.next_u64());
        cfg.params.target_key_bits = 48;
        const auto r = run_pns_two_party(bus, cfg, rng.next_u64());
        for (const auto& f : r.frames) {
            // stuffed SOF..CRC stream as transmitted
            std::vector<uint8_t> stuffed;
            for (const auto& bit : f.bits) {
                if (bit.phase == FramePhase::CrcDelim) break;
                stuffed.push_back(bit.bus);
            }
            REQUIRE(oracles::reference_frame_ok(stuffed));
        }
    }
}

TEST_CASE("stuff bits are transmitted identically by both participants") {
    auto bus = testutil::baseline_bus();
    auto cfg = testutil::session_with_bits("00000000", "11111111", 8, 4);
    const auto r = run_pns_two_party(bus, cfg, 2);
    bool saw_stuff = false;
    for (const auto& bit : r.frames[0].bits) {
        if (!bit.is_stuff) continue;
        saw_stuff = true;
        CHECK(bit.primary_tx == bit.secondary_tx);
        CHECK(bit.bus == bit.primary_tx);
    }
    CHECK(saw_stuff);
}

TEST_CASE("group key linear: a 2-chain equals the plain two-party run") {
    auto bus = testutil::baseline_bus();
    std::map<std::string, std::vector<uint8_t>> seeds{{"ecu1", {9, 9, 1}}, {"ecu2", {4, 4, 2}}};
    ProtocolParams params;
    params.target_key_bits = 40;
    const auto g = run_group_key_linear(bus, {"ecu1", "ecu2"}, seeds, params, 77);
    SessionConfig cfg;
    cfg.primary_id = "ecu1";
    cfg.secondary_id = "ecu2";
    cfg.primary_stream = StreamSource::from_seed(seeds["ecu1"]);
    cfg.secondary_stream = StreamSource::from_seed(seeds["ecu2"]);
    cfg.params = params;
    const auto two = run_pns_two_party(bus, cfg, derive_seed(77, 0));
    CHECK(g.keys.at("ecu1") == two.key_primary);
    CHECK(g.keys.at("ecu2") == two.key_primary);
    CHECK(g.sessions.size() == 1);
}

namespace {

BusContext chain_bus(std::size_t k) {
    BusContext bus;
    bus.topology.observer_position_m = 0.0;
    bus.topology.bus_length_m = 5.0 * static_cast<double>(k) + 10.0;
    for (std::size_t i = 0; i < k; ++i) {
        bus.topology.node_positions_m.push_back(5.0 + 5.0 * static_cast<double>(i));
        bus.nodes.push_back({"n" + std::to_string(i), i,
                             i % 2 ? testutil::profile_b() : testutil::profile_a(), 0.0, 0.0});
    }
    return bus;
}

}  // namespace

TEST_CASE("group key linear: all members end with one key, K up to 8") {
    for (std::size_t k : {4u, 8u}) {
        auto bus = chain_bus(k);
        std::map<std::string, std::vector<uint8_t>> seeds;
        std::vector<std::string> group;
        for (std::size_t i = 0; i < k; ++i) {
            group.push_back("n" + std::to_string(i));
            seeds[group.back()] = {static_cast<uint8_t>(i), 0x5A, static_cast<uint8_t>(i * 3)};
        }
        ProtocolParams params;
        params.target_key_bits = 32;
        const auto g = run_group_key_linear(bus, group, seeds, params, 123);
        REQUIRE(g.sessions.size() == k - 1);
        const auto& key = g.keys.at(group[0]);
        REQUIRE(key.size() == 32);
        for (const auto& id : group) REQUIRE(g.keys.at(id) == key);
    }
}

TEST_CASE("group key linear: perturbing one seed still yields a shared key") {
    auto bus = chain_bus(4);
    std::map<std::string, std::vector<uint8_t>> seeds{
        {"n0", {1}}, {"n1", {2}}, {"n2", {3}}, {"n3", {4}}};
    ProtocolParams params;
    params.target_key_bits = 24;
    const auto g1 = run_group_key_linear(bus, {"n0", "n1", "n2", "n3"}, seeds, params, 9);
    seeds["n2"] = {99};
    const auto g2 = run_group_key_linear(bus, {"n0", "n1", "n2", "n3"}, seeds, params, 9);
    for (const auto& id : {"n0", "n1", "n2", "n3"}) {
        REQUIRE(g1.keys.at(id) == g1.keys.at("n0"));
        REQUIRE(g2.keys.at(id) == g2.keys.at("n0"));
    }
    CHECK(g1.keys.at("n0") != g2.keys.at("n0"));  // different harvest, still shared
}

TEST_CASE("transcript log carries one record per transmitted bit") {
    auto bus = testutil::baseline_bus();
    auto cfg = testutil::session_with_bits("0110", "1001", 4, 4);
    const auto r = run_pns_two_party(bus, cfg, 1);
    std::ostringstream os;
    write_transcript(os, r);
    std::size_t lines = 0;
    for (char c : os.str())
        if (c == '\n') ++lines;
    CHECK(lines == r.frames[0].bits.size());
    CHECK(os.str().find("\"phase\":\"payload\"") != std::string::npos);
    CHECK(os.str().find("\"kept\":true") != std::string::npos);
}

TEST_CASE("prf tags differ across keys and nonces") {
    const std::vector<uint8_t> k1{1, 2, 3}, k2{1, 2, 4}, n1{9, 9}, n2{9, 8};
    CHECK(prf_tag(k1, n1) != prf_tag(k2, n1));
    CHECK(prf_tag(k1, n1) != prf_tag(k1, n2));
    CHECK(prf_tag(k1, n1) == prf_tag(k1, n1));
}
