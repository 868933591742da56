#include <string>
#include <vector>

#include "occlex/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return occlex::harness::run_cli(args);
}
