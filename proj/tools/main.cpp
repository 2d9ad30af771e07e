#include "mibtack/cli.hpp"

int main(int argc, char** argv) { return mibt::cli_main(argc, argv); }
