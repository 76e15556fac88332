#include "redo/cli.hpp"

int main(int argc, char** argv) { return redo::run_cli(argc, argv); }
