#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vaeac/tensor.hpp"

namespace vaeac {

struct Node {
    std::uint32_t id{0};
};

// Define-by-run computation tape. Building an op evaluates it immediately;
// the recorded graph is rebuilt from scratch for every minibatch.
// backward() seeds a scalar node with 1 and accumulates reverse-mode
// gradients into every node that transitively depends on a leaf.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf without gradient tracking (inputs, masks, one-hot targets).
    Node constant(Tensor value);
    // Trainable leaf; `value` must outlive the tape.
    Node leaf(const Tensor* value);

    Node matmul(Node a, Node b);
    Node add(Node a, Node b);       // same shape
    Node add_row(Node a, Node b);   // a:[n,m] + row b:[m]
    Node sub(Node a, Node b);
    Node mul(Node a, Node b);       // same shape, elementwise
    Node mul_row(Node a, Node b);   // a:[n,m] * row b:[m]
    Node div(Node a, Node b);       // same shape, elementwise
    Node relu(Node a);
    Node exp(Node a);
    Node log(Node a);
    Node square(Node a);
    Node softplus(Node a);
    Node log_softmax_rows(Node a);  // stabilized, per row of [n,m]
    Node sum(Node a);               // all elements -> [1]
    Node mean(Node a);              // all elements -> [1]
    Node row_sum(Node a);           // [n,m] -> [n]
    Node concat_cols(Node a, Node b);
    Node slice_cols(Node a, std::size_t begin, std::size_t end);
    Node scale(Node a, double c);
    Node add_scalar(Node a, double c);

    const Tensor& value(Node n) const;
    std::size_t size() const { return records_.size(); }

    // Reverse pass from a scalar node. Throws ShapeError on a non-scalar
    // seed. May be called once per tape.
    void backward(Node scalar_root);

    // Gradient of the backward root w.r.t. node n; zeros if the node did not
    // participate. Valid after backward().
    const Tensor& grad(Node n) const;

private:
    enum class Op : std::uint8_t {
        kConstant,
        kLeaf,
        kMatmul,
        kAdd,
        kAddRow,
        kSub,
        kMul,
        kMulRow,
        kDiv,
        kRelu,
        kExp,
        kLog,
        kSquare,
        kSoftplus,
        kLogSoftmaxRows,
        kSum,
        kMean,
        kRowSum,
        kConcatCols,
        kSliceCols,
        kScale,
        kAddScalar,
    };

    struct Record {
        Op op;
        std::array<std::uint32_t, 2> in{{0, 0}};
        Tensor val;                     // owned value (unused for leaves)
        const Tensor* ext{nullptr};     // leaf storage
        double c{0.0};                  // scalar operand
        std::size_t a0{0}, a1{0};       // slice bounds
        bool needs_grad{false};
    };

    const Tensor& val_of(const Record& r) const { return r.ext ? *r.ext : r.val; }
    Node push(Record r);
    Node unary(Op op, Node a);
    Node binary(Op op, Node a, Node b);
    const Record& rec(Node n) const;

    std::vector<Record> records_;
    mutable std::vector<Tensor> grads_;
    bool ran_backward_{false};
};

}  // namespace vaeac
