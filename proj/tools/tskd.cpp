#include <string>
#include <vector>

#include "tskd/cli/cli.hpp"

int main(int argc, char** argv) {
  return tskd::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
