#include "cli_app.hpp"

int main(int argc, char** argv) {
  return weylkdv::cli::run_command(std::vector<std::string>(argv, argv + argc));
}
