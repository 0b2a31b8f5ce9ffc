#include "conformal_kit/cli.hpp"

int main(int argc, char** argv) { return ckit::run_cli(argc, argv); }
