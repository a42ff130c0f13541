#pragma once

// Little-endian primitives shared by the FSEQ, checkpoint and index formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "weakseg/errors.hpp"

namespace weakseg::binio {

template <typename U>
inline void put_le(std::ostream& os, U value) {
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

inline void put_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
inline void put_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

/// Bounds-checked cursor over an in-memory file image.
class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    std::uint64_t offset() const { return pos_; }
    std::uint64_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    template <typename U>
    U le(const char* field) {
        need(sizeof(U), field);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::uint32_t u32(const char* field) { return le<std::uint32_t>(field); }
    float f32(const char* field) { return std::bit_cast<float>(le<std::uint32_t>(field)); }
    double f64(const char* field) { return std::bit_cast<double>(le<std::uint64_t>(field)); }

    std::string bytes(std::size_t n, const char* field) {
        need(n, field);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void need(std::uint64_t n, const char* field) const {
        if (remaining() < n) throw FormatError(std::string("truncated ") + field, pos_);
    }

private:
    std::string data_;
    std::uint64_t pos_ = 0;
};

std::string slurp(const std::string& path);

}  // namespace weakseg::binio
