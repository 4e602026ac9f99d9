// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace memh {

// Exit codes are a stable scripting contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitVerification = 3;
inline constexpr int kExitDivergence = 4;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad config / bad arguments / precondition violations. Exit 2.
struct ValidationError : Error {
    using Error::Error;
};

// Artifact integrity failures (checksums, tampering, version mismatch). Exit 3.
struct VerificationError : Error {
    using Error::Error;
};

// Determinism faults and diverging branches. Exit 4.
struct DivergenceError : Error {
    using Error::Error;
};

// Malformed binary/text artifacts.
struct ParseError : VerificationError {
    using VerificationError::VerificationError;
};

}  // namespace memh
