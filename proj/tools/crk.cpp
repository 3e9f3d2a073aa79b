#include "crk/cli.hpp"

int main(int argc, char** argv) { return crk::cli_main(argc, argv); }
