#include "cli.hpp"
#include "tripletforge/runtime.hpp"

int main(int argc, char** argv) {
  tforge::tune_allocator();
  return tforge::cli::run(argc, argv);
}
