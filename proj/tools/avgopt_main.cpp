#include <string>
#include <vector>

#include "avgopt/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return avgopt::run_cli(args);
}
