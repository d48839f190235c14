#include "vinecal/cli.hpp"

int main(int argc, char** argv) {
  return vinecal::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
