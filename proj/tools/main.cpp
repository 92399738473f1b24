#include "cutfocal/cli.hpp"

int main(int argc, char** argv) { return cutfocal::run_cli(argc, argv); }
