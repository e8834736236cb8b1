#include "spanflow/cli.hpp"

int main(int argc, char** argv) { return spanflow::cli::run(argc, argv); }
