#include "pivae/cli.hpp"

int main(int argc, char** argv) { return pivae::run_cli(argc, argv); }
