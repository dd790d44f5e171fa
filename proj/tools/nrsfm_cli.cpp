#include "nrsfm/cli.hpp"

int main(int argc, char** argv) { return nrsfm::cli_main(argc, argv); }
