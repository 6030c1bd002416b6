#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "emmpd/tape.hpp"

namespace emmpd {

// Adam with bias correction. Learning-rate scheduling (linear decay) is the
// caller's job; each step takes the effective lr.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    int step_count() const { return step_count_; }

    void step(const std::vector<Param*>& params, double lr) {
        if (lr < 0.0) throw NumericError("Adam: negative learning rate");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(beta1_, step_count_);
        const double bc2 = 1.0 - std::pow(beta2_, step_count_);
        for (Param* p : params) {
            State& st = state_[p];
            if (st.m.size() == 0) {
                st.m = Matrix(p->value.rows, p->value.cols);
                st.v = Matrix(p->value.rows, p->value.cols);
            }
            for (size_t i = 0; i < p->value.size(); ++i) {
                const double g = p->grad.data[i];
                st.m.data[i] = beta1_ * st.m.data[i] + (1.0 - beta1_) * g;
                st.v.data[i] = beta2_ * st.v.data[i] + (1.0 - beta2_) * g * g;
                const double mhat = st.m.data[i] / bc1;
                const double vhat = st.v.data[i] / bc2;
                p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void reset() {
        state_.clear();
        step_count_ = 0;
    }

private:
    struct State {
        Matrix m, v;
    };
    double beta1_, beta2_, eps_;
    int step_count_ = 0;
    std::unordered_map<Param*, State> state_;
};

}  // namespace emmpd
