#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace pnscan {

/// Inserts the complement after every run of five identical bits.
/// Stuff bits themselves count toward subsequent runs, per CAN 2.0.
std::vector<uint8_t> bit_stuff(std::span<const uint8_t> bits);

/// Inverse of bit_stuff; throws FramingError if a run of six identical
/// bits appears inside the stuffed region.
std::vector<uint8_t> bit_unstuff(std::span<const uint8_t> bits);

/// CAN 2.0 CRC-15, polynomial x^15+x^14+x^10+x^8+x^7+x^4+x^3+1, init 0,
/// computed over the destuffed bit stream.
uint16_t crc15(std::span<const uint8_t> bits);

std::vector<uint8_t> crc15_bits(uint16_t crc);

/// SOF + 11-bit identifier + RTR + IDE + r0 + 4-bit DLC = 19 header bits.
std::vector<uint8_t> pns_header_bits(uint16_t id11, unsigned dlc);

constexpr std::size_t kHeaderBits = 19;
constexpr uint16_t kDefaultPnsHeaderId = 0x7AA;

/// Position of a bit within the frame layout (pre-stuffing roles; stuff
/// bits inherit the phase of the region they interrupt).
enum class FramePhase : uint8_t {
    Sof, Id, Rtr, Ide, R0, Dlc, Payload, Crc, CrcDelim, Ack, AckDelim, Eof
};

/// One CAN 2.0 data frame as assembled on the bus.
struct CanFrame {
    std::vector<uint8_t> header_bits;     // SOF..DLC, pre-stuffing
    std::vector<uint8_t> payload_bits;    // post-interleave bus payload, <= 64
    std::vector<uint8_t> stuffed_stream;  // SOF..CRC as transmitted
    uint16_t crc = 0;
};

}  // namespace pnscan
