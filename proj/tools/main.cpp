#include "sparsecore/cli.hpp"

int main(int argc, char** argv) { return sparsecore::cli::run(argc, argv); }
