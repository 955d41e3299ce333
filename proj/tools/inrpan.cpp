#include "inrpan/cli.hpp"

int main(int argc, char** argv) { return inrpan::cli::run(argc, argv); }
