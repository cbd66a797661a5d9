#include "csanct/cli.hpp"

int main(int argc, char** argv) { return csanct::cli::run(argc, argv); }
