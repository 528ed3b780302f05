#include "heed/cli.hpp"

int main(int argc, char** argv) { return heed::cli::dispatch(argc, argv); }
