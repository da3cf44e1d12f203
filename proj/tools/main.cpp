#include "deltamon/cli.hpp"

int main(int argc, char** argv) {
    return deltamon::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
