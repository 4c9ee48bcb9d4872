#include "pir/cli.hpp"

int main(int argc, char** argv) { return pir::run_cli(argc, argv); }
