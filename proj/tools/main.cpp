#include "cli.hpp"

int main(int argc, char** argv) { return wtbcp::run_cli(argc, argv); }
