// Copyright (c) 2026, The BranchLoRA Authors
// SPDX-License-Identifier: Apache-2.0

#include "branchlora/cli.hpp"

int main(int argc, char** argv) { return blora::run_cli(argc, argv); }
