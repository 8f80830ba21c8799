#include "sleepguard/cli.hpp"

int main(int argc, char** argv) { return sleepguard::cli::main(argc, argv); }
