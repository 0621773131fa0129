#include <string>
#include <vector>

#include "aat/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return aat::cli::cli_main(args);
}
