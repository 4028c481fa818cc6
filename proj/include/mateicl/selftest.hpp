#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace mateicl {

struct SelftestResult {
  std::size_t checked = 0;
  std::vector<std::string> failures;

  bool ok() const noexcept { return failures.empty(); }
};

/// Runs the built-in invariant suite on small random instances. One line per
/// property goes to `log` when it is non-null.
SelftestResult run_selftest(std::ostream* log = nullptr);

}  // namespace mateicl
