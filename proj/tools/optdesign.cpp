#include "optdesign/cli.hpp"

int main(int argc, char** argv) { return optdesign::cli::run(argc, argv); }
