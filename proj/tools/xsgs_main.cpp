// Copyright 2026 The XSGS Authors
// SPDX-License-Identifier: Apache-2.0

#include "xsgs/cli.hpp"

int main(int argc, char** argv) { return xsgs::cli::run(argc, argv); }
