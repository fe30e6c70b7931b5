#include "cli.hpp"

int main(int argc, char** argv) { return tdg::cli::run(argc, argv); }
