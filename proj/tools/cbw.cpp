#include "cbw/cli.hpp"

int main(int argc, char** argv) { return cbw::cli::run(argc, argv); }
