#include "metainput/cli.hpp"

int main(int argc, char** argv) { return metainput::cli::cli_main(argc, argv); }
