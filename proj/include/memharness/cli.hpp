// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace memh {

// Entry point for the memh binary. Exit codes: 0 success, 2 validation
// error, 3 verification failure, 4 runtime divergence.
int cli_main(int argc, char** argv);

}  // namespace memh
