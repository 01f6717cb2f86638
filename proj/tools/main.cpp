#include "ctt/cli.hpp"

int main(int argc, char** argv) { return ctt::run_cli(argc, argv); }
