#include "balancegauge/cli.hpp"

int main(int argc, char** argv) { return bg::run_cli(argc, argv); }
