#include "protoens_cli/cli.hpp"

int main(int argc, char** argv) { return protoens::cli_main(argc, argv); }
