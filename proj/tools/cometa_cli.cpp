#include "cometa/cli.hpp"

int main(int argc, char** argv) { return cometa::cli::run(argc, argv); }
