#pragma once

#include <ostream>

namespace dla {

struct SelftestOptions {
    // Wires a deliberately wrong backward into one check to prove the
    // harness reports failures; the run must then fail.
    bool inject_gradient_fault = false;
};

// Gradient checks, KNN oracle equivalence, metric oracles, attention
// invariants, format round-trips. Returns the number of failed checks.
int run_selftest(const SelftestOptions& opt, std::ostream& out);

}  // namespace dla
