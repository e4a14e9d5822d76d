#include "cli.hpp"

int main(int argc, char** argv) { return poirot::cli::main(argc, argv); }
