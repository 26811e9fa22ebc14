#include "wmnet/cli.hpp"

int main(int argc, char** argv) { return wmnet::run_cli(argc, argv); }
