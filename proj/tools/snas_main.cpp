#include "snas/cli.hpp"

int main(int argc, char** argv) { return snas::run_cli(argc, argv); }
