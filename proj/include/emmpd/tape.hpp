#pragma once

#include <functional>
#include <string>
#include <vector>

#include "emmpd/matrix.hpp"

namespace emmpd {

// Trainable parameter. Gradients are accumulated by Tape::backward and
// cleared at the start of every backward pass over a tape that touches them.
struct Param {
    std::string name;
    Matrix value;
    Matrix grad;

    Param() = default;
    Param(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}
};

// Define-by-run reverse-mode tape. Each differentiable operation appends a
// node with a closure that pushes adjoints to its parents. A tape is consumed
// by exactly one backward pass.
class Tape {
public:
    using Var = int;

    Var constant(Matrix m);
    Var leaf(Param& p);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var scale(Var a, double s);
    Var hadamard(Var a, Var b);
    Var transpose(Var a);
    Var tanh_(Var a);
    Var sigmoid_(Var a);
    Var relu(Var a);
    Var softmax_rows(Var a);
    Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
    Var concat_rows(Var a, Var b);
    Var concat_cols(const std::vector<Var>& parts);
    Var slice_rows(Var a, int row_begin, int row_end);
    Var mean_rows(Var a);
    Var sum_all(Var a);
    // Multi-label focal loss over a column of logits. y holds {0,1} per class.
    Var focal_bce(Var logits, const std::vector<int>& y, double alpha, double gamma);

    const Matrix& value(Var v) const { return nodes_[v].value; }
    const Matrix& grad(Var v) const { return nodes_[v].grad; }

    // Seeds the 1x1 loss node with adjoint 1 and propagates in reverse order.
    // Grads of every touched Param are zeroed first, then accumulated.
    void backward(Var loss);

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void()> back;  // empty for constants/leaves
        Param* param = nullptr;
    };

    Var push(Matrix value, std::function<void()> back, const char* op);

    std::vector<Node> nodes_;
    std::vector<Param*> params_;
    bool consumed_ = false;
};

// Forward-only helpers shared with oracle code paths.
Matrix matmul_value(const Matrix& a, const Matrix& b);
Matrix softmax_rows_value(const Matrix& x);
Matrix layernorm_rows_value(const Matrix& x, const Matrix& gain, const Matrix& bias,
                            double eps = 1e-5);

// Plain evaluation of the focal loss for tests and diagnostics.
double focal_bce_value(const std::vector<double>& logits, const std::vector<int>& y,
                       double alpha, double gamma);

}  // namespace emmpd
