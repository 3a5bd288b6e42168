// SPDX-License-Identifier: Apache-2.0

#include "vscat/cli/app.hpp"

int main(int argc, char** argv) { return vscat::cli::run(argc, argv); }
