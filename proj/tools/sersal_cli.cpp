#include "sersal/cli.hpp"

int main(int argc, char** argv) { return sersal::cli_main(argc, argv); }
