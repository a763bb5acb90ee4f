#include "vqa/cli.hpp"

int main(int argc, char** argv) { return vqa::cli::dispatch(argc, argv); }
