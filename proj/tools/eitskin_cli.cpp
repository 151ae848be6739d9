#include "eitskin/cli.hpp"

int main(int argc, char** argv) { return eitskin::cli::run(argc, argv); }
