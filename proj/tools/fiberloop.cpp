#include <string>
#include <vector>

#include "fiberloop/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fiberloop::dispatch(args);
}
