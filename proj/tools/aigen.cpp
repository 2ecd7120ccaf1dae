#include "aigen/cli/app.hpp"

int main(int argc, char** argv) { return aigen::cli::run(argc, argv); }
