#pragma once

#include <functional>
#include <vector>

#include "emmpd/tape.hpp"

namespace emmpd {

// Central finite-difference check. f(true) must run a full forward+backward
// and leave analytic gradients in the params; f(false) evaluates the loss
// only. Returns max over all entries of
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
double gradcheck(const std::function<double(bool)>& f, const std::vector<Param*>& params,
                 double step);

}  // namespace emmpd
