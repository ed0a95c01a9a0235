#include "crackseg/cli.hpp"

int main(int argc, char** argv) { return crackseg::run_cli(argc, argv); }
