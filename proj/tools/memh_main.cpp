// SPDX-License-Identifier: Apache-2.0
#include "memharness/cli.hpp"

int main(int argc, char** argv) { return memh::cli_main(argc, argv); }
