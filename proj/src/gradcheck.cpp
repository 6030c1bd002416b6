#include "emmpd/gradcheck.hpp"

#include <cmath>

namespace emmpd {

double gradcheck(const std::function<double(bool)>& f, const std::vector<Param*>& params,
                 double step) {
    if (step <= 0.0) throw NumericError("gradcheck: step must be positive");
    f(true);
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) analytic.push_back(p->grad);

    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        for (size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.data[i];
            p->value.data[i] = saved + step;
            const double up = f(false);
            p->value.data[i] = saved - step;
            const double down = f(false);
            p->value.data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi].data[i];
            const double rel = std::abs(a - numeric) /
                               std::max({1.0, std::abs(a), std::abs(numeric)});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace emmpd
