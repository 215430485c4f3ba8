#include "oap/cli.hpp"

int main(int argc, char** argv) { return oap::cli::run_cli(argc, argv); }
