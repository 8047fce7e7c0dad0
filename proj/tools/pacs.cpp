#include "pacs/cli.hpp"

int main(int argc, char** argv) { return pacs::cli::run(argc, argv); }
