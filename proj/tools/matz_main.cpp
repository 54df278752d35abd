#include "matz/cli.hpp"

int main(int argc, char** argv) { return matz::cli::run(argc, argv); }
