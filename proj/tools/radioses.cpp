// Command-line front door. Subcommands are registered as the library grows.

#include <CLI11.hpp>

int main(int argc, char** argv) {
  CLI::App app{"radioses: radio-assisted speech enhancement toolkit"};
  app.require_subcommand(0, 1);
  CLI11_PARSE(app, argc, argv);
  return 0;
}
