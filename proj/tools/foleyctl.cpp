#include "foley/cli/cli.hpp"

int main(int argc, char** argv) { return foley::cli::run_cli(argc, argv); }
