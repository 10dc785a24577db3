#include "jmatch/cli.hpp"

int main(int argc, char** argv) { return jmatch::cli::run(argc, argv); }
