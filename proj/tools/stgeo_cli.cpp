#include "stgeo/cli.hpp"

int main(int argc, char** argv) { return stgeo::run_cli(argc, argv); }
