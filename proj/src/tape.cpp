#include "emmpd/tape.hpp"

#include <algorithm>
#include <cmath>

#include "emmpd/kernels.hpp"

namespace emmpd {

namespace {

constexpr double kProbFloor = 1e-12;

void check_shapes(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
}

}  // namespace

Matrix matmul_value(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() + " * " +
                         b.shape_str());
    Matrix c(a.rows, b.cols);
    kernels::gemm_nn(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols,
                     b.cols);
    return c;
}

Matrix softmax_rows_value(const Matrix& x) {
    Matrix y(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
        const double* in = x.row_ptr(r);
        double* out = y.row_ptr(r);
        double mx = in[0];
        for (int c = 1; c < x.cols; ++c) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (int c = 0; c < x.cols; ++c) {
            out[c] = std::exp(in[c] - mx);
            sum += out[c];
        }
        for (int c = 0; c < x.cols; ++c) out[c] /= sum;
    }
    return y;
}

Matrix layernorm_rows_value(const Matrix& x, const Matrix& gain, const Matrix& bias,
                            double eps) {
    if (gain.cols != x.cols || bias.cols != x.cols || gain.rows != 1 || bias.rows != 1)
        throw ShapeError("layernorm: gain/bias must be 1x" + std::to_string(x.cols));
    if (eps <= 0.0) throw NumericError("layernorm: eps must be positive");
    Matrix y(x.rows, x.cols);
    const int d = x.cols;
    for (int r = 0; r < x.rows; ++r) {
        const double* in = x.row_ptr(r);
        double* out = y.row_ptr(r);
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += in[c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            const double t = in[c] - mean;
            var += t * t;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < d; ++c)
            out[c] = gain.data[c] * (in[c] - mean) * inv + bias.data[c];
    }
    return y;
}

double focal_bce_value(const std::vector<double>& logits, const std::vector<int>& y,
                       double alpha, double gamma) {
    double loss = 0.0;
    for (size_t c = 0; c < logits.size(); ++c) {
        const double p = 1.0 / (1.0 + std::exp(-logits[c]));
        const double pt = y[c] ? p : 1.0 - p;
        const double at = y[c] ? alpha : 1.0 - alpha;
        loss += at * std::pow(1.0 - pt, gamma) * (-std::log(std::max(pt, kProbFloor)));
    }
    return loss;
}

Tape::Var Tape::push(Matrix value, std::function<void()> back, const char* op) {
    require_finite(value, op);
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(back), nullptr});
    return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::constant(Matrix m) {
    require_finite(m, "constant");
    nodes_.push_back(Node{std::move(m), Matrix(), nullptr, nullptr});
    return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::leaf(Param& p) {
    require_finite(p.value, "leaf");
    nodes_.push_back(Node{p.value, Matrix(), nullptr, &p});
    if (std::find(params_.begin(), params_.end(), &p) == params_.end())
        params_.push_back(&p);
    return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::matmul(Var a, Var b) {
    Matrix c = matmul_value(nodes_[a].value, nodes_[b].value);
    Var out = push(std::move(c), nullptr, "matmul");
    nodes_[out].back = [this, a, b, out]() {
        const Matrix& g = nodes_[out].grad;
        const Matrix& av = nodes_[a].value;
        const Matrix& bv = nodes_[b].value;
        // dA += G * B^T, dB += A^T * G
        kernels::gemm_nt(g.data.data(), bv.data.data(), nodes_[a].grad.data.data(),
                         g.rows, g.cols, bv.rows, true);
        kernels::gemm_tn(av.data.data(), g.data.data(), nodes_[b].grad.data.data(),
                         av.cols, av.rows, g.cols, true);
    };
    return out;
}

Tape::Var Tape::add(Var a, Var b) {
    check_shapes(nodes_[a].value, nodes_[b].value, "add");
    Matrix c = nodes_[a].value;
    for (size_t i = 0; i < c.size(); ++i) c.data[i] += nodes_[b].value.data[i];
    Var out = push(std::move(c), nullptr, "add");
    nodes_[out].back = [this, a, b, out]() {
        const Matrix& g = nodes_[out].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            nodes_[a].grad.data[i] += g.data[i];
            nodes_[b].grad.data[i] += g.data[i];
        }
    };
    return out;
}

Tape::Var Tape::scale(Var a, double s) {
    Matrix c = nodes_[a].value;
    for (auto& v : c.data) v *= s;
    Var out = push(std::move(c), nullptr, "scale");
    nodes_[out].back = [this, a, s, out]() {
        const Matrix& g = nodes_[out].grad;
        for (size_t i = 0; i < g.size(); ++i) nodes_[a].grad.data[i] += s * g.data[i];
    };
    return out;
}

Tape::Var Tape::hadamard(Var a, Var b) {
    check_shapes(nodes_[a].value, nodes_[b].value, "hadamard");
    Matrix c = nodes_[a].value;
    for (size_t i = 0; i < c.size(); ++i) c.data[i] *= nodes_[b].value.data[i];
    Var out = push(std::move(c), nullptr, "hadamard");
    nodes_[out].back = [this, a, b, out]() {
        const Matrix& g = nodes_[out].grad;
        for (size_t i = 0; i < g.size(); ++i) {
            nodes_[a].grad.data[i] += g.data[i] * nodes_[b].value.data[i];
            nodes_[b].grad.data[i] += g.data[i] * nodes_[a].value.data[i];
        }
    };
    return out;
}

Tape::Var Tape::transpose(Var a) {
    const Matrix& av = nodes_[a].value;
    Matrix c(av.cols, av.rows);
    for (int r = 0; r < av.rows; ++r)
        for (int col = 0; col < av.cols; ++col) c.at(col, r) = av.at(r, col);
    Var out = push(std::move(c), nullptr, "transpose");
    nodes_[out].back = [this, a, out]() {
        const Matrix& g = nodes_[out].grad;
        Matrix& ag = nodes_[a].grad;
        for (int r = 0; r < g.rows; ++r)
            for (int col = 0; col < g.cols; ++col) ag.at(col, r) += g.at(r, col);
    };
    return out;
}

Tape::Var Tape::tanh_(Var a) {
    Matrix c = nodes_[a].value;
    for (auto& v : c.data) v = std::tanh(v);
    Var out = push(std::move(c), nullptr, "tanh");
    nodes_[out].back = [this, a, out]() {
        const Matrix& g = nodes_[out].grad;
        const Matrix& y = nodes_[out].value;
        for (size_t i = 0; i < g.size(); ++i)
            nodes_[a].grad.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    };
    return out;
}

Tape::Var Tape::sigmoid_(Var a) {
    Matrix c = nodes_[a].value;
    for (auto& v : c.data) v = 1.0 / (1.0 + std::exp(-v));
    Var out = push(std::move(c), nullptr, "sigmoid");
    nodes_[out].back = [this, a, out]() {
        const Matrix& g = nodes_[out].grad;
        const Matrix& y = nodes_[out].value;
        for (size_t i = 0; i < g.size(); ++i)
            nodes_[a].grad.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    };
    return out;
}

Tape::Var Tape::relu(Var a) {
    Matrix c = nodes_[a].value;
    for (auto& v : c.data) v = std::max(v, 0.0);
    Var out = push(std::move(c), nullptr, "relu");
    nodes_[out].back = [this, a, out]() {
        const Matrix& g = nodes_[out].grad;
        const Matrix& x = nodes_[a].value;
        for (size_t i = 0; i < g.size(); ++i)
            if (x.data[i] > 0.0) nodes_[a].grad.data[i] += g.data[i];
    };
    return out;
}

Tape::Var Tape::softmax_rows(Var a) {
    if (nodes_[a].value.size() == 0) throw ShapeError("softmax_rows: empty input");
    Matrix y = softmax_rows_value(nodes_[a].value);
    Var out = push(std::move(y), nullptr, "softmax_rows");
    nodes_[out].back = [this, a, out]() {
        const Matrix& g = nodes_[out].grad;
        const Matrix& y = nodes_[out].value;
        Matrix& ag = nodes_[a].grad;
        for (int r = 0; r < g.rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < g.cols; ++c) dot += g.at(r, c) * y.at(r, c);
            for (int c = 0; c < g.cols; ++c)
                ag.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
        }
    };
    return out;
}

Tape::Var Tape::layernorm_rows(Var x, Var gain, Var bias, double eps) {
    const Matrix& xv = nodes_[x].value;
    Matrix y = layernorm_rows_value(xv, nodes_[gain].value, nodes_[bias].value, eps);
    Var out = push(std::move(y), nullptr, "layernorm_rows");
    nodes_[out].back = [this, x, gain, bias, eps, out]() {
        const Matrix& g = nodes_[out].grad;
        const Matrix& xv = nodes_[x].value;
        const Matrix& gv = nodes_[gain].value;
        const int d = xv.cols;
        for (int r = 0; r < xv.rows; ++r) {
            const double* in = xv.row_ptr(r);
            const double* gr = g.row_ptr(r);
            double mean = 0.0;
            for (int c = 0; c < d; ++c) mean += in[c];
            mean /= d;
            double var = 0.0;
            for (int c = 0; c < d; ++c) {
                const double t = in[c] - mean;
                var += t * t;
            }
            var /= d;
            const double inv = 1.0 / std::sqrt(var + eps);
            // xhat = (x - mean) * inv; dxhat = g * gain
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int c = 0; c < d; ++c) {
                const double xhat = (in[c] - mean) * inv;
                const double dxhat = gr[c] * gv.data[c];
                mean_dxhat += dxhat;
                mean_dxhat_xhat += dxhat * xhat;
                nodes_[gain].grad.data[c] += gr[c] * xhat;
                nodes_[bias].grad.data[c] += gr[c];
            }
            mean_dxhat /= d;
            mean_dxhat_xhat /= d;
            for (int c = 0; c < d; ++c) {
                const double xhat = (in[c] - mean) * inv;
                const double dxhat = gr[c] * gv.data[c];
                nodes_[x].grad.at(r, c) +=
                    inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
            }
        }
    };
    return out;
}

Tape::Var Tape::concat_rows(Var a, Var b) {
    const Matrix& av = nodes_[a].value;
    const Matrix& bv = nodes_[b].value;
    if (av.cols != bv.cols)
        throw ShapeError("concat_rows: column mismatch " + av.shape_str() + " vs " +
                         bv.shape_str());
    Matrix c(av.rows + bv.rows, av.cols);
    std::copy(av.data.begin(), av.data.end(), c.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), c.data.begin() + av.size());
    Var out = push(std::move(c), nullptr, "concat_rows");
    nodes_[out].back = [this, a, b, out]() {
        const Matrix& g = nodes_[out].grad;
        Matrix& ag = nodes_[a].grad;
        Matrix& bg = nodes_[b].grad;
        for (size_t i = 0; i < ag.size(); ++i) ag.data[i] += g.data[i];
        for (size_t i = 0; i < bg.size(); ++i) bg.data[i] += g.data[ag.size() + i];
    };
    return out;
}

Tape::Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int rows = nodes_[parts[0]].value.rows;
    int cols = 0;
    for (Var p : parts) {
        if (nodes_[p].value.rows != rows)
            throw ShapeError("concat_cols: row mismatch");
        cols += nodes_[p].value.cols;
    }
    Matrix c(rows, cols);
    int off = 0;
    for (Var p : parts) {
        const Matrix& pv = nodes_[p].value;
        for (int r = 0; r < rows; ++r)
            std::copy(pv.row_ptr(r), pv.row_ptr(r) + pv.cols, c.row_ptr(r) + off);
        off += pv.cols;
    }
    Var out = push(std::move(c), nullptr, "concat_cols");
    std::vector<Var> captured = parts;
    nodes_[out].back = [this, captured, out]() {
        const Matrix& g = nodes_[out].grad;
        int off = 0;
        for (Var p : captured) {
            Matrix& pg = nodes_[p].grad;
            for (int r = 0; r < pg.rows; ++r)
                for (int c = 0; c < pg.cols; ++c) pg.at(r, c) += g.at(r, off + c);
            off += pg.cols;
        }
    };
    return out;
}

Tape::Var Tape::slice_rows(Var a, int row_begin, int row_end) {
    const Matrix& av = nodes_[a].value;
    if (row_begin < 0 || row_end > av.rows || row_begin >= row_end)
        throw ShapeError("slice_rows: invalid range [" + std::to_string(row_begin) +
                         ", " + std::to_string(row_end) + ") for " + av.shape_str());
    Matrix c(row_end - row_begin, av.cols);
    std::copy(av.row_ptr(row_begin), av.row_ptr(row_begin) + c.size(), c.data.begin());
    Var out = push(std::move(c), nullptr, "slice_rows");
    nodes_[out].back = [this, a, row_begin, out]() {
        const Matrix& g = nodes_[out].grad;
        Matrix& ag = nodes_[a].grad;
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) ag.at(row_begin + r, c) += g.at(r, c);
    };
    return out;
}

Tape::Var Tape::mean_rows(Var a) {
    const Matrix& av = nodes_[a].value;
    Matrix c(1, av.cols);
    for (int r = 0; r < av.rows; ++r)
        for (int col = 0; col < av.cols; ++col) c.data[col] += av.at(r, col);
    for (auto& v : c.data) v /= av.rows;
    Var out = push(std::move(c), nullptr, "mean_rows");
    nodes_[out].back = [this, a, out]() {
        const Matrix& g = nodes_[out].grad;
        Matrix& ag = nodes_[a].grad;
        const double inv = 1.0 / ag.rows;
        for (int r = 0; r < ag.rows; ++r)
            for (int c = 0; c < ag.cols; ++c) ag.at(r, c) += g.data[c] * inv;
    };
    return out;
}

Tape::Var Tape::sum_all(Var a) {
    const Matrix& av = nodes_[a].value;
    Matrix c(1, 1);
    for (double v : av.data) c.data[0] += v;
    Var out = push(std::move(c), nullptr, "sum_all");
    nodes_[out].back = [this, a, out]() {
        const double g = nodes_[out].grad.data[0];
        for (auto& v : nodes_[a].grad.data) v += g;
    };
    return out;
}

Tape::Var Tape::focal_bce(Var logits, const std::vector<int>& y, double alpha,
                          double gamma) {
    const Matrix& lv = nodes_[logits].value;
    if (lv.cols != 1 || static_cast<size_t>(lv.rows) != y.size())
        throw ShapeError("focal_bce: logits must be " + std::to_string(y.size()) +
                         "x1, got " + lv.shape_str());
    if (alpha < 0.0 || alpha > 1.0) throw NumericError("focal_bce: alpha outside [0,1]");
    if (gamma < 0.0) throw NumericError("focal_bce: gamma must be >= 0");
    std::vector<double> logit_vals(lv.data);
    Matrix c(1, 1);
    c.data[0] = focal_bce_value(logit_vals, y, alpha, gamma);
    Var out = push(std::move(c), nullptr, "focal_bce");
    nodes_[out].back = [this, logits, y, alpha, gamma, out]() {
        const double g = nodes_[out].grad.data[0];
        const Matrix& lv = nodes_[logits].value;
        for (size_t cidx = 0; cidx < y.size(); ++cidx) {
            const double p = 1.0 / (1.0 + std::exp(-lv.data[cidx]));
            const double pt = y[cidx] ? p : 1.0 - p;
            const double at = y[cidx] ? alpha : 1.0 - alpha;
            const double sign = y[cidx] ? 1.0 : -1.0;
            const double pt_c = std::max(pt, kProbFloor);
            // dL/dpt with L = at * (1-pt)^gamma * (-log pt)
            double dl_dpt;
            if (gamma == 0.0) {
                dl_dpt = -at / pt_c;
            } else {
                dl_dpt = at * (gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt_c) -
                               std::pow(1.0 - pt, gamma) / pt_c);
            }
            const double dpt_dz = sign * pt * (1.0 - pt);
            nodes_[logits].grad.data[cidx] += g * dl_dpt * dpt_dz;
        }
    };
    return out;
}

void Tape::backward(Var loss) {
    if (consumed_) throw NumericError("Tape::backward: tape already consumed");
    const Matrix& lv = nodes_[loss].value;
    if (lv.rows != 1 || lv.cols != 1)
        throw ShapeError("Tape::backward: loss must be 1x1, got " + lv.shape_str());
    consumed_ = true;
    for (Param* p : params_) p->grad.fill(0.0);
    for (auto& node : nodes_) node.grad = Matrix(node.value.rows, node.value.cols);
    nodes_[loss].grad.data[0] = 1.0;
    for (int i = loss; i >= 0; --i) {
        if (nodes_[i].back) nodes_[i].back();
        if (nodes_[i].param) {
            Matrix& pg = nodes_[i].param->grad;
            for (size_t j = 0; j < pg.size(); ++j) pg.data[j] += nodes_[i].grad.data[j];
        }
    }
}

}  // namespace emmpd
