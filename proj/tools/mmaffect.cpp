#include "mmaffect/cli.hpp"

int main(int argc, char** argv) { return mmaffect::cli::run(argc, argv); }
