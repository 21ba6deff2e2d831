#include "deltar/cli.hpp"

int main(int argc, char** argv) { return deltar::cli_main(argc, argv); }
