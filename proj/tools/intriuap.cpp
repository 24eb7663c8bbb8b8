#include "intriuap/cli/app.hpp"

int main(int argc, char** argv) { return intriuap::cli::run_cli(argc, argv); }
