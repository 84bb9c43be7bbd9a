#include "canvas_search_cli/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return canvas_search::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
