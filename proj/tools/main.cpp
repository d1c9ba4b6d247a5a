#include <string>
#include <vector>

#include "ets/cli.hpp"

int main(int argc, char** argv) {
  return ets::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
