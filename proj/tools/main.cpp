#include <iostream>

#include "distimpute/app.hpp"

int main(int argc, char** argv) {
  try {
    const auto cfg = distimpute::parse_command_line(argc, argv, std::cout);
    if (!cfg) return 0;
    return distimpute::run(*cfg, std::cout, std::cerr);
  } catch (const distimpute::ConfigError& e) {
    std::cerr << "config: " << e.what() << "\n";
    return 2;
  }
}
