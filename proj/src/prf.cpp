#include "pnscan/prf.hpp"

#include <cstring>

#include "pnscan/errors.hpp"

namespace pnscan {

namespace {

inline uint32_t rotl32(uint32_t x, int n) { return (x << n) | (x >> (32 - n)); }

inline void quarter_round(uint32_t& a, uint32_t& b, uint32_t& c, uint32_t& d) {
    a += b; d ^= a; d = rotl32(d, 16);
    c += d; b ^= c; b = rotl32(b, 12);
    a += b; d ^= a; d = rotl32(d, 8);
    c += d; b ^= c; b = rotl32(b, 7);
}

}  // namespace

void chacha20_block(const std::array<uint32_t, 8>& key, uint32_t counter,
                    const std::array<uint32_t, 3>& nonce, std::array<uint8_t, 64>& out) {
    uint32_t state[16] = {0x61707865, 0x3320646e, 0x79622d32, 0x6b206574,
                          key[0], key[1], key[2], key[3],
                          key[4], key[5], key[6], key[7],
                          counter, nonce[0], nonce[1], nonce[2]};
    uint32_t x[16];
    std::memcpy(x, state, sizeof(state));
    for (int round = 0; round < 10; ++round) {
        quarter_round(x[0], x[4], x[8], x[12]);
        quarter_round(x[1], x[5], x[9], x[13]);
        quarter_round(x[2], x[6], x[10], x[14]);
        quarter_round(x[3], x[7], x[11], x[15]);
        quarter_round(x[0], x[5], x[10], x[15]);
        quarter_round(x[1], x[6], x[11], x[12]);
        quarter_round(x[2], x[7], x[8], x[13]);
        quarter_round(x[3], x[4], x[9], x[14]);
    }
    for (int i = 0; i < 16; ++i) {
        const uint32_t w = x[i] + state[i];
        out[4 * i + 0] = static_cast<uint8_t>(w);
        out[4 * i + 1] = static_cast<uint8_t>(w >> 8);
        out[4 * i + 2] = static_cast<uint8_t>(w >> 16);
        out[4 * i + 3] = static_cast<uint8_t>(w >> 24);
    }
}

StreamPrf::StreamPrf(std::span<const uint8_t> seed, uint64_t domain) {
    // fold arbitrary-length seeds into the 256-bit key
    std::array<uint8_t, 32> kb{};
    for (std::size_t i = 0; i < seed.size(); ++i) kb[i % 32] ^= seed[i];
    kb[31] ^= static_cast<uint8_t>(seed.size());
    for (int i = 0; i < 8; ++i) {
        key_[i] = static_cast<uint32_t>(kb[4 * i]) |
                  static_cast<uint32_t>(kb[4 * i + 1]) << 8 |
                  static_cast<uint32_t>(kb[4 * i + 2]) << 16 |
                  static_cast<uint32_t>(kb[4 * i + 3]) << 24;
    }
    nonce_[0] = static_cast<uint32_t>(domain);
    nonce_[1] = static_cast<uint32_t>(domain >> 32);
    nonce_[2] = 0x706e7343;  // stream tag
}

uint8_t StreamPrf::byte_at(uint64_t index) const {
    const uint64_t block = index / 64;
    if (block != cached_block_) {
        chacha20_block(key_, static_cast<uint32_t>(block), nonce_, cache_);
        cached_block_ = block;
    }
    return cache_[index % 64];
}

uint8_t StreamPrf::bit_at(uint64_t index) const {
    const uint8_t b = byte_at(index / 8);
    return (b >> (7 - index % 8)) & 1;
}

std::vector<uint8_t> StreamPrf::bytes(std::size_t count, uint64_t start) const {
    std::vector<uint8_t> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = byte_at(start + i);
    return out;
}

std::vector<uint8_t> expand_seed(std::span<const uint8_t> seed, std::size_t n_bits) {
    if (n_bits == 0) throw InvalidInputError("expand_seed: n_bits must be > 0");
    StreamPrf prf(seed);
    std::vector<uint8_t> bits(n_bits);
    for (std::size_t i = 0; i < n_bits; ++i) bits[i] = prf.bit_at(i);
    return bits;
}

std::array<uint8_t, 8> prf_tag(std::span<const uint8_t> key, std::span<const uint8_t> nonce) {
    uint64_t domain = 0x6b736d72;  // rank-mask domain separation
    for (std::size_t i = 0; i < nonce.size(); ++i)
        domain = domain * 0x100000001B3ull + nonce[i];
    StreamPrf prf(key, domain);
    std::array<uint8_t, 8> tag{};
    for (int i = 0; i < 8; ++i) tag[i] = prf.byte_at(static_cast<uint64_t>(i));
    return tag;
}

std::vector<uint8_t> parse_hex(const std::string& hex) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    if (hex.size() % 2 != 0) throw InvalidInputError("parse_hex: odd length");
    std::vector<uint8_t> out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        const int hi = nibble(hex[i]), lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0) throw InvalidInputError("parse_hex: non-hex character");
        out.push_back(static_cast<uint8_t>(hi * 16 + lo));
    }
    return out;
}

std::string to_hex(std::span<const uint8_t> bytes) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (uint8_t b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xF]);
    }
    return s;
}

}  // namespace pnscan
