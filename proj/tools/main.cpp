#include "soba/cli.hpp"

int main(int argc, char** argv) { return soba::run_cli(argc, argv); }
