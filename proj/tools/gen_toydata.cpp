// Regenerates the bundled toy dataset. The output is deterministic, so the
// checked-in copy under data/toy must match what this prints; the test suite
// enforces that.
#include <cstdio>
#include <exception>
#include <string>

#include "famadapt/toydata.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <output-dir>\n", argv[0]);
    return 2;
  }
  try {
    famadapt::write_toy_dataset(famadapt::default_toy_spec(), argv[1]);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gen_toydata: %s\n", e.what());
    return 1;
  }
  std::printf("wrote toy dataset to %s\n", argv[1]);
  return 0;
}
