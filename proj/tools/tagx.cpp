#include "tagx/cli.hpp"

int main(int argc, char** argv) { return tagx::cli::dispatch(argc, argv); }
