#include "cli.hpp"

int main(int argc, char** argv) { return qualiteacher::cli::dispatch(argc, argv); }
