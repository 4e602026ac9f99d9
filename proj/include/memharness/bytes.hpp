// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "memharness/errors.hpp"

namespace memh {

using Bytes = std::vector<std::uint8_t>;

// Append-only buffer with explicit endianness per field. All container
// formats in this project are little-endian; hash encodings that the
// artifact pins as big-endian use the *_be writers.
class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(v); }

    void u32_le(std::uint32_t v) { put_int(v, /*big_endian=*/false); }
    void u64_le(std::uint64_t v) { put_int(v, /*big_endian=*/false); }
    void u32_be(std::uint32_t v) { put_int(v, /*big_endian=*/true); }
    void u64_be(std::uint64_t v) { put_int(v, /*big_endian=*/true); }
    void i64_le(std::int64_t v) { u64_le(static_cast<std::uint64_t>(v)); }

    void f64_le(double v) { u64_le(std::bit_cast<std::uint64_t>(v)); }
    void f64_be(double v) { u64_be(std::bit_cast<std::uint64_t>(v)); }

    void raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void bytes(const Bytes& b) { raw(b.data(), b.size()); }
    void str_raw(std::string_view s) { raw(s.data(), s.size()); }
    // Length-prefixed UTF-8 string.
    void str(std::string_view s) {
        u32_le(static_cast<std::uint32_t>(s.size()));
        str_raw(s);
    }

    const Bytes& data() const { return buf_; }
    Bytes take() { return std::move(buf_); }
    std::size_t size() const { return buf_.size(); }

  private:
    template <typename T>
    void put_int(T v, bool big_endian) {
        std::uint8_t tmp[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            const unsigned shift = 8 * (big_endian ? (sizeof(T) - 1 - i) : i);
            tmp[i] = static_cast<std::uint8_t>(v >> shift);
        }
        raw(tmp, sizeof(T));
    }

    Bytes buf_;
};

class ByteReader {
  public:
    ByteReader(const std::uint8_t* data, std::size_t n) : data_(data), size_(n) {}
    explicit ByteReader(const Bytes& b) : ByteReader(b.data(), b.size()) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32_le() { return get_int<std::uint32_t>(false); }
    std::uint64_t u64_le() { return get_int<std::uint64_t>(false); }
    std::uint32_t u32_be() { return get_int<std::uint32_t>(true); }
    std::uint64_t u64_be() { return get_int<std::uint64_t>(true); }
    std::int64_t i64_le() { return static_cast<std::int64_t>(u64_le()); }
    double f64_le() { return std::bit_cast<double>(u64_le()); }

    std::string str() {
        const auto n = u32_le();
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    Bytes raw(std::size_t n) {
        const auto* p = take(n);
        return Bytes(p, p + n);
    }

    std::size_t remaining() const { return size_ - pos_; }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == size_; }

  private:
    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > size_) {
            throw ParseError("byte stream truncated: need " + std::to_string(n) +
                             " bytes at offset " + std::to_string(pos_));
        }
        const auto* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    template <typename T>
    T get_int(bool big_endian) {
        const auto* p = take(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            const unsigned shift = 8 * (big_endian ? (sizeof(T) - 1 - i) : i);
            v |= static_cast<T>(p[i]) << shift;
        }
        return v;
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::string to_hex(const std::uint8_t* data, std::size_t n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(2 * n, '0');
    for (std::size_t i = 0; i < n; ++i) {
        out[2 * i] = digits[data[i] >> 4];
        out[2 * i + 1] = digits[data[i] & 0xf];
    }
    return out;
}

inline std::string to_hex(const Bytes& b) { return to_hex(b.data(), b.size()); }

}  // namespace memh
