// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "memharness/bytes.hpp"

namespace memh {

using Digest = std::array<std::uint8_t, 32>;

// Incremental SHA-256 (OpenSSL EVP under the hood).
class Sha256 {
  public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(const void* data, std::size_t n);
    Sha256& update(const Bytes& b) { return update(b.data(), b.size()); }
    Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
    Sha256& update(const Digest& d) { return update(d.data(), d.size()); }

    Digest finish();

  private:
    void* ctx_;
};

Digest sha256(const void* data, std::size_t n);
inline Digest sha256(const Bytes& b) { return sha256(b.data(), b.size()); }
inline Digest sha256(std::string_view s) { return sha256(s.data(), s.size()); }

inline std::string digest_hex(const Digest& d) { return to_hex(d.data(), d.size()); }
inline std::string sha256_hex(const Bytes& b) { return digest_hex(sha256(b)); }
inline std::string sha256_hex(std::string_view s) { return digest_hex(sha256(s)); }

// SHA-256 of the empty stream; head of every hash chain.
inline const std::string kEmptySha256Hex =
    "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

}  // namespace memh
