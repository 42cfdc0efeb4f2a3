#include "mop/cli.hpp"

int main(int argc, char** argv) { return mop::cli::run(argc, argv); }
