// SPDX-License-Identifier: Apache-2.0
#include "memharness/sha256.hpp"

#include <openssl/evp.h>

#include "memharness/errors.hpp"

namespace memh {

Sha256::Sha256() {
    auto* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("failed to initialize SHA-256 context");
    }
    ctx_ = ctx;
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Sha256& Sha256::update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, n) != 1) {
        throw Error("SHA-256 update failed");
    }
    return *this;
}

Digest Sha256::finish() {
    Digest out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len) != 1 ||
        len != out.size()) {
        throw Error("SHA-256 finalize failed");
    }
    return out;
}

Digest sha256(const void* data, std::size_t n) {
    Sha256 h;
    h.update(data, n);
    return h.finish();
}

}  // namespace memh
