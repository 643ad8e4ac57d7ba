#include "eivsc/cli.hpp"

int main(int argc, char** argv) { return eivsc::cli::run_main(argc, argv); }
