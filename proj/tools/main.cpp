#include "cli.hpp"

int main(int argc, char** argv) { return hdsse::cli::run(argc, argv); }
