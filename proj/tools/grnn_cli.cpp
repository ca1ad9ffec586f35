#include "grnn/cli.hpp"

int main(int argc, char** argv) { return grnn::run_cli(argc, argv); }
