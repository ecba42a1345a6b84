// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#include "gencil/cli.hpp"

int main(int argc, char** argv) { return gencil::run_cli(argc, argv); }
