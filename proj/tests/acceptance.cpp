#include <cstdio>

#include "glfc/selftest.hpp"

int main() {
  int failed = 0;
  for (const auto& r : glfc::selftest::run_all()) {
    std::puts(glfc::selftest::format_line(r).c_str());
    failed += r.passed ? 0 : 1;
  }
  std::printf("%d of 11 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
