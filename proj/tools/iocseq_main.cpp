#include "iocseq/cli.hpp"

int main(int argc, char** argv) { return iocseq::cli::dispatch(argc, argv); }
