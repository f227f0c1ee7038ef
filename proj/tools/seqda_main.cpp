#include "seqda/cli.hpp"

int main(int argc, char** argv) { return seqda::cli::run(argc, argv); }
