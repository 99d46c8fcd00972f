#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qdbnn/common.hpp"

namespace qdbnn {

inline constexpr std::uint32_t kIdxMagicImages = 0x00000803;
inline constexpr std::uint32_t kIdxMagicLabels = 0x00000801;

class IdxParseError : public std::runtime_error {
  public:
    IdxParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

  private:
    std::size_t offset_;
};

struct IdxTensor {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (const auto d : dims) n *= d;
        return n;
    }
};

/// Big-endian IDX container of unsigned bytes (magic 0x0000080d with d dims).
inline IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw IdxParseError("truncated IDX header", bytes.size());
    const std::uint32_t magic = (std::uint32_t(bytes[0]) << 24) | (std::uint32_t(bytes[1]) << 16) |
                                (std::uint32_t(bytes[2]) << 8) | std::uint32_t(bytes[3]);
    if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08) {
        throw IdxParseError("bad IDX magic 0x" + [magic] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%08x", magic);
            return std::string(buf);
        }(), 0);
    }
    const int ndim = bytes[3];
    if (ndim < 1 || ndim > 4) throw IdxParseError("unsupported IDX rank " + std::to_string(ndim), 3);
    if (bytes.size() < 4 + 4 * std::size_t(ndim)) throw IdxParseError("truncated IDX dimension list", bytes.size());
    IdxTensor t;
    t.magic = magic;
    for (int d = 0; d < ndim; ++d) {
        const std::size_t o = 4 + 4 * std::size_t(d);
        t.dims.push_back((std::uint32_t(bytes[o]) << 24) | (std::uint32_t(bytes[o + 1]) << 16) |
                         (std::uint32_t(bytes[o + 2]) << 8) | std::uint32_t(bytes[o + 3]));
    }
    const std::size_t payload = 4 + 4 * std::size_t(ndim);
    const std::size_t expected = t.element_count();
    if (bytes.size() - payload < expected) {
        throw IdxParseError("truncated IDX payload: need " + std::to_string(expected) + " bytes, have " +
                                std::to_string(bytes.size() - payload),
                            bytes.size());
    }
    t.data.assign(bytes.begin() + payload, bytes.begin() + payload + expected);
    return t;
}

inline std::vector<std::uint8_t> serialize_idx(const IdxTensor& t) {
    QDBNN_REQUIRE(!t.dims.empty() && t.dims.size() <= 4, "IDX rank must be 1..4");
    std::vector<std::uint8_t> out;
    out.reserve(4 + 4 * t.dims.size() + t.data.size());
    out.push_back(0);
    out.push_back(0);
    out.push_back(0x08);
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (const auto d : t.dims) {
        out.push_back(static_cast<std::uint8_t>(d >> 24));
        out.push_back(static_cast<std::uint8_t>(d >> 16));
        out.push_back(static_cast<std::uint8_t>(d >> 8));
        out.push_back(static_cast<std::uint8_t>(d));
    }
    QDBNN_REQUIRE(t.data.size() == t.element_count(), "IDX payload size mismatch");
    out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

}  // namespace qdbnn
