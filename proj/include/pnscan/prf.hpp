#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pnscan {

/// ChaCha20 block function (RFC 8439 core). Used as the standard
/// permutation behind the keyed counter-mode streams below.
void chacha20_block(const std::array<uint32_t, 8>& key, uint32_t counter,
                    const std::array<uint32_t, 3>& nonce, std::array<uint8_t, 64>& out);

/// Keyed counter-mode pseudorandom stream. Same seed gives the same
/// stream, and any prefix of a longer expansion equals the shorter one.
class StreamPrf {
public:
    explicit StreamPrf(std::span<const uint8_t> seed, uint64_t domain = 0);

    uint8_t byte_at(uint64_t index) const;
    /// index-th bit of the stream, MSB-first within each byte.
    uint8_t bit_at(uint64_t index) const;
    std::vector<uint8_t> bytes(std::size_t count, uint64_t start = 0) const;

private:
    std::array<uint32_t, 8> key_{};
    std::array<uint32_t, 3> nonce_{};
    mutable uint64_t cached_block_ = ~0ull;
    mutable std::array<uint8_t, 64> cache_{};
};

/// Pseudorandom bit expansion of a seed (the protocol's chunk source).
std::vector<uint8_t> expand_seed(std::span<const uint8_t> seed, std::size_t n_bits);

/// 8-byte PRF tag f(key, nonce) for the masked rank broadcast.
std::array<uint8_t, 8> prf_tag(std::span<const uint8_t> key, std::span<const uint8_t> nonce);

std::vector<uint8_t> parse_hex(const std::string& hex);
std::string to_hex(std::span<const uint8_t> bytes);

}  // namespace pnscan
