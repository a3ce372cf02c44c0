// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "selftrain/cli/cli.hpp"

int main(int argc, char** argv) { return selftrain::cli_dispatch(argc, argv); }
