#include "commands.hpp"

int main(int argc, char** argv) { return uatmc::cli::run_cli(argc, argv); }
