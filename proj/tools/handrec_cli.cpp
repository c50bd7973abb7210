#include "handrec/cli.hpp"

int main(int argc, char** argv) { return handrec::cli::main(argc, argv); }
