#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "mtl/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Activations are large and short-lived; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return mtl::cli::run(argc, argv, std::cout, std::cerr);
}
