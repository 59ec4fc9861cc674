#include "sfmk/cli.hpp"

int main(int argc, char** argv) { return sfmk::run_cli(argc, argv); }
