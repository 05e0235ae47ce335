#include "pathoattack/cli.hpp"

int main(int argc, char** argv) { return pathoattack::run_cli(argc, argv); }
