#include <string>
#include <vector>

#include "sedpost/cli.hpp"

int main(int argc, char** argv) {
    return sedpost::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
