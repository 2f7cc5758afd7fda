#include "vaeac/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace vaeac {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstMatMap as_matrix(const Tensor& t) {
    return ConstMatMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                       static_cast<Eigen::Index>(t.cols()));
}

MatMap as_matrix(Tensor& t) {
    return MatMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

double stable_softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Node Tape::push(Record r) {
    records_.push_back(std::move(r));
    return Node{static_cast<std::uint32_t>(records_.size() - 1)};
}

const Tape::Record& Tape::rec(Node n) const { return records_.at(n.id); }

const Tensor& Tape::value(Node n) const { return val_of(rec(n)); }

Node Tape::constant(Tensor value) {
    Record r;
    r.op = Op::kConstant;
    r.val = std::move(value);
    return push(std::move(r));
}

Node Tape::leaf(const Tensor* value) {
    Record r;
    r.op = Op::kLeaf;
    r.ext = value;
    r.needs_grad = true;
    return push(std::move(r));
}

Node Tape::unary(Op op, Node a) {
    Record r;
    r.op = op;
    r.in[0] = a.id;
    r.needs_grad = rec(a).needs_grad;
    const Tensor& x = value(a);
    switch (op) {
        case Op::kRelu:
            r.val = x;
            for (double& v : r.val.data) v = std::max(v, 0.0);
            break;
        case Op::kExp:
            r.val = x;
            for (double& v : r.val.data) v = std::exp(v);
            break;
        case Op::kLog:
            r.val = x;
            for (double& v : r.val.data) v = std::log(v);
            break;
        case Op::kSquare:
            r.val = x;
            for (double& v : r.val.data) v = v * v;
            break;
        case Op::kSoftplus:
            r.val = x;
            for (double& v : r.val.data) v = stable_softplus(v);
            break;
        case Op::kLogSoftmaxRows: {
            r.val = x;
            const std::size_t n = x.rows(), m = x.cols();
            if (m == 0) throw ShapeError("log_softmax: empty rows");
            for (std::size_t i = 0; i < n; ++i) {
                double* row = r.val.data.data() + i * m;
                const double mx = *std::max_element(row, row + m);
                double s = 0.0;
                for (std::size_t j = 0; j < m; ++j) s += std::exp(row[j] - mx);
                const double lse = mx + std::log(s);
                for (std::size_t j = 0; j < m; ++j) row[j] -= lse;
            }
            break;
        }
        case Op::kSum: {
            double s = 0.0;
            for (double v : x.data) s += v;
            r.val = Tensor::scalar(s);
            break;
        }
        case Op::kMean: {
            if (x.numel() == 0) throw ShapeError("mean: empty tensor");
            double s = 0.0;
            for (double v : x.data) s += v;
            r.val = Tensor::scalar(s / static_cast<double>(x.numel()));
            break;
        }
        case Op::kRowSum: {
            if (x.rank() != 2) throw ShapeError("row_sum: expected rank-2, got " + x.shape_str());
            const std::size_t n = x.shape[0], m = x.shape[1];
            Tensor out;
            out.shape = {n};
            out.data.assign(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                const double* row = x.data.data() + i * m;
                for (std::size_t j = 0; j < m; ++j) s += row[j];
                out.data[i] = s;
            }
            r.val = std::move(out);
            break;
        }
        default:
            throw Error("tape: bad unary op");
    }
    return push(std::move(r));
}

Node Tape::binary(Op op, Node a, Node b) {
    Record r;
    r.op = op;
    r.in[0] = a.id;
    r.in[1] = b.id;
    r.needs_grad = rec(a).needs_grad || rec(b).needs_grad;
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    switch (op) {
        case Op::kMatmul: {
            if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) {
                throw ShapeError("matmul: " + x.shape_str() + " x " + y.shape_str());
            }
            Tensor out = Tensor::zeros({});
            out.shape = {x.shape[0], y.shape[1]};
            out.data.assign(x.shape[0] * y.shape[1], 0.0);
            as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
            r.val = std::move(out);
            break;
        }
        case Op::kAdd:
        case Op::kSub:
        case Op::kMul:
        case Op::kDiv: {
            if (!x.same_shape(y)) {
                throw ShapeError("elementwise op: " + x.shape_str() + " vs " + y.shape_str());
            }
            r.val = x;
            const double* q = y.data.data();
            double* p = r.val.data.data();
            const std::size_t n = x.numel();
            if (op == Op::kAdd) {
                for (std::size_t i = 0; i < n; ++i) p[i] += q[i];
            } else if (op == Op::kSub) {
                for (std::size_t i = 0; i < n; ++i) p[i] -= q[i];
            } else if (op == Op::kMul) {
                for (std::size_t i = 0; i < n; ++i) p[i] *= q[i];
            } else {
                for (std::size_t i = 0; i < n; ++i) p[i] /= q[i];
            }
            break;
        }
        case Op::kAddRow:
        case Op::kMulRow: {
            if (x.rank() != 2 || y.rank() != 1 || x.shape[1] != y.shape[0]) {
                throw ShapeError("row broadcast: " + x.shape_str() + " vs " + y.shape_str());
            }
            r.val = x;
            const std::size_t n = x.shape[0], m = x.shape[1];
            for (std::size_t i = 0; i < n; ++i) {
                double* row = r.val.data.data() + i * m;
                if (op == Op::kAddRow) {
                    for (std::size_t j = 0; j < m; ++j) row[j] += y.data[j];
                } else {
                    for (std::size_t j = 0; j < m; ++j) row[j] *= y.data[j];
                }
            }
            break;
        }
        case Op::kConcatCols: {
            if (x.rank() != 2 || y.rank() != 2 || x.shape[0] != y.shape[0]) {
                throw ShapeError("concat_cols: " + x.shape_str() + " vs " + y.shape_str());
            }
            const std::size_t n = x.shape[0], p = x.shape[1], q = y.shape[1];
            Tensor out;
            out.shape = {n, p + q};
            out.data.resize(n * (p + q));
            for (std::size_t i = 0; i < n; ++i) {
                std::copy_n(x.data.data() + i * p, p, out.data.data() + i * (p + q));
                std::copy_n(y.data.data() + i * q, q, out.data.data() + i * (p + q) + p);
            }
            r.val = std::move(out);
            break;
        }
        default:
            throw Error("tape: bad binary op");
    }
    return push(std::move(r));
}

Node Tape::matmul(Node a, Node b) { return binary(Op::kMatmul, a, b); }
Node Tape::add(Node a, Node b) { return binary(Op::kAdd, a, b); }
Node Tape::add_row(Node a, Node b) { return binary(Op::kAddRow, a, b); }
Node Tape::sub(Node a, Node b) { return binary(Op::kSub, a, b); }
Node Tape::mul(Node a, Node b) { return binary(Op::kMul, a, b); }
Node Tape::mul_row(Node a, Node b) { return binary(Op::kMulRow, a, b); }
Node Tape::div(Node a, Node b) { return binary(Op::kDiv, a, b); }
Node Tape::relu(Node a) { return unary(Op::kRelu, a); }
Node Tape::exp(Node a) { return unary(Op::kExp, a); }
Node Tape::log(Node a) { return unary(Op::kLog, a); }
Node Tape::square(Node a) { return unary(Op::kSquare, a); }
Node Tape::softplus(Node a) { return unary(Op::kSoftplus, a); }
Node Tape::log_softmax_rows(Node a) { return unary(Op::kLogSoftmaxRows, a); }
Node Tape::sum(Node a) { return unary(Op::kSum, a); }
Node Tape::mean(Node a) { return unary(Op::kMean, a); }
Node Tape::row_sum(Node a) { return unary(Op::kRowSum, a); }
Node Tape::concat_cols(Node a, Node b) { return binary(Op::kConcatCols, a, b); }

Node Tape::slice_cols(Node a, std::size_t begin, std::size_t end) {
    const Tensor& x = value(a);
    if (x.rank() != 2 || begin >= end || end > x.shape[1]) {
        throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + x.shape_str());
    }
    Record r;
    r.op = Op::kSliceCols;
    r.in[0] = a.id;
    r.a0 = begin;
    r.a1 = end;
    r.needs_grad = rec(a).needs_grad;
    const std::size_t n = x.shape[0], m = x.shape[1], w = end - begin;
    Tensor out;
    out.shape = {n, w};
    out.data.resize(n * w);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(x.data.data() + i * m + begin, w, out.data.data() + i * w);
    }
    r.val = std::move(out);
    return push(std::move(r));
}

Node Tape::scale(Node a, double c) {
    Record r;
    r.op = Op::kScale;
    r.in[0] = a.id;
    r.c = c;
    r.needs_grad = rec(a).needs_grad;
    r.val = value(a);
    for (double& v : r.val.data) v *= c;
    return push(std::move(r));
}

Node Tape::add_scalar(Node a, double c) {
    Record r;
    r.op = Op::kAddScalar;
    r.in[0] = a.id;
    r.c = c;
    r.needs_grad = rec(a).needs_grad;
    r.val = value(a);
    for (double& v : r.val.data) v += c;
    return push(std::move(r));
}

void Tape::backward(Node scalar_root) {
    const Record& root = rec(scalar_root);
    if (val_of(root).numel() != 1) {
        throw ShapeError("backward: seed must be scalar, got " + val_of(root).shape_str());
    }
    if (ran_backward_) throw Error("backward: tape already differentiated");
    ran_backward_ = true;

    grads_.assign(records_.size(), Tensor{});
    auto grad_buf = [&](std::uint32_t id) -> Tensor& {
        Tensor& g = grads_[id];
        if (g.data.empty()) {
            const Tensor& v = val_of(records_[id]);
            g.shape = v.shape;
            g.data.assign(v.numel(), 0.0);
        }
        return g;
    };

    grad_buf(scalar_root.id).data[0] = 1.0;

    for (std::uint32_t id = scalar_root.id + 1; id-- > 0;) {
        const Record& r = records_[id];
        if (!r.needs_grad || grads_[id].data.empty()) continue;
        const Tensor& g = grads_[id];
        const std::uint32_t ia = r.in[0], ib = r.in[1];
        switch (r.op) {
            case Op::kConstant:
            case Op::kLeaf:
                break;
            case Op::kMatmul: {
                const Tensor& A = val_of(records_[ia]);
                const Tensor& B = val_of(records_[ib]);
                if (records_[ia].needs_grad) {
                    as_matrix(grad_buf(ia)).noalias() += as_matrix(g) * as_matrix(B).transpose();
                }
                if (records_[ib].needs_grad) {
                    as_matrix(grad_buf(ib)).noalias() += as_matrix(A).transpose() * as_matrix(g);
                }
                break;
            }
            case Op::kAdd:
            case Op::kSub: {
                const double sb = (r.op == Op::kSub) ? -1.0 : 1.0;
                if (records_[ia].needs_grad) {
                    Tensor& ga = grad_buf(ia);
                    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
                }
                if (records_[ib].needs_grad) {
                    Tensor& gb = grad_buf(ib);
                    for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += sb * g.data[i];
                }
                break;
            }
            case Op::kAddRow: {
                if (records_[ia].needs_grad) {
                    Tensor& ga = grad_buf(ia);
                    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
                }
                if (records_[ib].needs_grad) {
                    Tensor& gb = grad_buf(ib);
                    const std::size_t n = g.rows(), m = g.cols();
                    for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = 0; j < m; ++j) gb.data[j] += g.data[i * m + j];
                    }
                }
                break;
            }
            case Op::kMul: {
                const Tensor& A = val_of(records_[ia]);
                const Tensor& B = val_of(records_[ib]);
                if (records_[ia].needs_grad) {
                    Tensor& ga = grad_buf(ia);
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        ga.data[i] += g.data[i] * B.data[i];
                }
                if (records_[ib].needs_grad) {
                    Tensor& gb = grad_buf(ib);
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        gb.data[i] += g.data[i] * A.data[i];
                }
                break;
            }
            case Op::kMulRow: {
                const Tensor& A = val_of(records_[ia]);
                const Tensor& B = val_of(records_[ib]);
                const std::size_t n = g.rows(), m = g.cols();
                if (records_[ia].needs_grad) {
                    Tensor& ga = grad_buf(ia);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j)
                            ga.data[i * m + j] += g.data[i * m + j] * B.data[j];
                }
                if (records_[ib].needs_grad) {
                    Tensor& gb = grad_buf(ib);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j)
                            gb.data[j] += g.data[i * m + j] * A.data[i * m + j];
                }
                break;
            }
            case Op::kDiv: {
                const Tensor& A = val_of(records_[ia]);
                const Tensor& B = val_of(records_[ib]);
                if (records_[ia].needs_grad) {
                    Tensor& ga = grad_buf(ia);
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        ga.data[i] += g.data[i] / B.data[i];
                }
                if (records_[ib].needs_grad) {
                    Tensor& gb = grad_buf(ib);
                    for (std::size_t i = 0; i < g.data.size(); ++i)
                        gb.data[i] -= g.data[i] * A.data[i] / (B.data[i] * B.data[i]);
                }
                break;
            }
            case Op::kRelu: {
                const Tensor& A = val_of(records_[ia]);
                Tensor& ga = grad_buf(ia);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    if (A.data[i] > 0.0) ga.data[i] += g.data[i];
                break;
            }
            case Op::kExp: {
                Tensor& ga = grad_buf(ia);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * r.val.data[i];
                break;
            }
            case Op::kLog: {
                const Tensor& A = val_of(records_[ia]);
                Tensor& ga = grad_buf(ia);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] / A.data[i];
                break;
            }
            case Op::kSquare: {
                const Tensor& A = val_of(records_[ia]);
                Tensor& ga = grad_buf(ia);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += 2.0 * A.data[i] * g.data[i];
                break;
            }
            case Op::kSoftplus: {
                const Tensor& A = val_of(records_[ia]);
                Tensor& ga = grad_buf(ia);
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    ga.data[i] += g.data[i] * sigmoid(A.data[i]);
                break;
            }
            case Op::kLogSoftmaxRows: {
                Tensor& ga = grad_buf(ia);
                const std::size_t n = g.rows(), m = g.cols();
                for (std::size_t i = 0; i < n; ++i) {
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < m; ++j) gsum += g.data[i * m + j];
                    for (std::size_t j = 0; j < m; ++j) {
                        const double sm = std::exp(r.val.data[i * m + j]);
                        ga.data[i * m + j] += g.data[i * m + j] - sm * gsum;
                    }
                }
                break;
            }
            case Op::kSum: {
                Tensor& ga = grad_buf(ia);
                const double gv = g.data[0];
                for (double& v : ga.data) v += gv;
                break;
            }
            case Op::kMean: {
                Tensor& ga = grad_buf(ia);
                const double gv = g.data[0] / static_cast<double>(ga.numel());
                for (double& v : ga.data) v += gv;
                break;
            }
            case Op::kRowSum: {
                Tensor& ga = grad_buf(ia);
                const std::size_t n = ga.rows(), m = ga.cols();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) ga.data[i * m + j] += g.data[i];
                break;
            }
            case Op::kConcatCols: {
                const std::size_t n = g.rows(), m = g.cols();
                const std::size_t p = val_of(records_[ia]).cols();
                if (records_[ia].needs_grad) {
                    Tensor& ga = grad_buf(ia);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < p; ++j)
                            ga.data[i * p + j] += g.data[i * m + j];
                }
                if (records_[ib].needs_grad) {
                    Tensor& gb = grad_buf(ib);
                    const std::size_t q = m - p;
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < q; ++j)
                            gb.data[i * q + j] += g.data[i * m + p + j];
                }
                break;
            }
            case Op::kSliceCols: {
                Tensor& ga = grad_buf(ia);
                const std::size_t n = g.rows(), w = g.cols(), m = ga.cols();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        ga.data[i * m + r.a0 + j] += g.data[i * w + j];
                break;
            }
            case Op::kScale: {
                Tensor& ga = grad_buf(ia);
                for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += r.c * g.data[i];
                break;
            }
            case Op::kAddScalar: {
                Tensor& ga = grad_buf(ia);
                for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
                break;
            }
        }
    }
}

const Tensor& Tape::grad(Node n) const {
    if (!ran_backward_) throw Error("grad: backward() has not run");
    Tensor& g = grads_.at(n.id);
    if (!g.data.empty()) return g;
    // Materialize the zero gradient in the node's own slot: callers may hold
    // references to several non-participating nodes' gradients at once.
    const Tensor& v = val_of(records_[n.id]);
    g.shape = v.shape;
    g.data.assign(v.numel(), 0.0);
    return g;
}

}  // namespace vaeac
