#include "pnscan/can_frame.hpp"

#include "pnscan/errors.hpp"

namespace pnscan {

std::vector<uint8_t> bit_stuff(std::span<const uint8_t> bits) {
    std::vector<uint8_t> out;
    out.reserve(bits.size() + bits.size() / 5 + 1);
    int run = 0;
    int run_bit = -1;
    for (uint8_t b : bits) {
        out.push_back(b);
        if (static_cast<int>(b) == run_bit) {
            if (++run == 5) {
                const uint8_t stuff = b ? 0 : 1;
                out.push_back(stuff);
                run_bit = stuff;
                run = 1;
            }
        } else {
            run_bit = b;
            run = 1;
        }
    }
    return out;
}

std::vector<uint8_t> bit_unstuff(std::span<const uint8_t> bits) {
    std::vector<uint8_t> out;
    out.reserve(bits.size());
    int run = 0;
    int run_bit = -1;
    bool expect_stuff = false;
    for (uint8_t b : bits) {
        if (expect_stuff) {
            if (static_cast<int>(b) == run_bit)
                throw FramingError("bit_unstuff: run of 6 identical bits");
            expect_stuff = false;
            run_bit = b;
            run = 1;
            continue;
        }
        out.push_back(b);
        if (static_cast<int>(b) == run_bit) {
            if (++run == 5) expect_stuff = true;
        } else {
            run_bit = b;
            run = 1;
        }
    }
    return out;
}

uint16_t crc15(std::span<const uint8_t> bits) {
    uint16_t crc = 0;
    for (uint8_t b : bits) {
        const uint16_t crc_next = static_cast<uint16_t>((b & 1) ^ ((crc >> 14) & 1));
        crc = static_cast<uint16_t>((crc << 1) & 0x7FFF);
        if (crc_next) crc ^= 0x4599;
    }
    return crc;
}

std::vector<uint8_t> crc15_bits(uint16_t crc) {
    std::vector<uint8_t> bits(15);
    for (int i = 0; i < 15; ++i) bits[i] = (crc >> (14 - i)) & 1;
    return bits;
}

std::vector<uint8_t> pns_header_bits(uint16_t id11, unsigned dlc) {
    if (id11 > 0x7FF) throw InvalidInputError("pns_header_bits: identifier exceeds 11 bits");
    if (dlc > 8) throw InvalidInputError("pns_header_bits: DLC exceeds 8");
    std::vector<uint8_t> bits;
    bits.reserve(kHeaderBits);
    bits.push_back(0);  // SOF, dominant
    for (int i = 10; i >= 0; --i) bits.push_back((id11 >> i) & 1);
    bits.push_back(0);  // RTR: data frame
    bits.push_back(0);  // IDE: standard format
    bits.push_back(0);  // r0
    for (int i = 3; i >= 0; --i) bits.push_back((dlc >> i) & 1);
    return bits;
}

}  // namespace pnscan
