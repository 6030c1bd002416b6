#pragma once

#include <string>
#include <vector>

#include "emmpd/gradcheck.hpp"

namespace emmpd {

struct GradSuiteEntry {
    std::string group;
    double rel_err = 0.0;
    bool pass = false;
};

// Finite-difference checks for every trainable parameter group on fixed small
// shapes (K=6, d=8, heads=2, C=2, t=1). `corrupt` injects a deliberate error
// into one analytic gradient so callers can verify the detector itself.
std::vector<GradSuiteEntry> run_gradient_suite(double tolerance = 1e-4,
                                               bool corrupt = false);

}  // namespace emmpd
