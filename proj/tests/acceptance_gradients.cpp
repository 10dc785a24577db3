// Double-precision half of acceptance criterion 7. Prints the worst case and
// exits nonzero if any op or loss misses the tolerance.
#include <chrono>
#include <iostream>

#include "gradient_cases.hpp"

int main() {
  using namespace jmatch::testing;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = all_gradient_cases();
  CaseReport worst;
  bool ok = true;
  for (const auto& c : cases) {
    const auto r = run_case(c, 10);
    if (r.worst >= 1e-4) {
      std::cout << "  " << r.name << " rel " << r.worst << '\n';
      ok = false;
    }
    if (r.worst >= worst.worst) worst = r;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << cases.size() << " cases x 10 seeds, worst " << worst.name << " rel " << worst.worst << ", " << secs
            << " s\n";
  return ok && secs < 60 ? 0 : 1;
}
