#pragma once

#include "enviro/common.hpp"

#include <functional>
#include <vector>

namespace enviro::graph {

// Reverse-mode autodiff over a tape of Eigen matrices. Ops append nodes in
// topological order; backward() replays them in reverse. One Tape instance
// per forward pass; Vars are only meaningful on the tape that created them.
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. input() owns a copy and accumulates a gradient on the tape;
    // param() aliases external value/grad storage (grad must be pre-sized and
    // is accumulated into, not overwritten); constant() never tracks a grad.
    Var input(Mat value);
    Var param(const Mat* value, Mat* grad);
    Var constant(Mat value);

    const Mat& value(Var v) const;
    // Zero matrix of the value's shape when the node received no gradient.
    Mat grad(Var v) const;

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var transpose(Var a);

    // Broadcast a column vector across all columns of a.
    Var add_col(Var a, Var col);
    Var mul_col(Var a, Var col);

    // Normalize each column to zero mean, unit variance (no learned affine).
    Var layernorm(Var a, double eps = 1e-5);
    Var softmax_rows(Var a);
    Var sigmoid(Var a);
    Var gelu(Var a);

    Var rows(Var a, int start, int count);
    Var cols(Var a, int start, int count);
    Var vstack(Var a, Var b);

    // Gather table columns by id; gradients scatter-add back into the table.
    Var embed(Var table, std::vector<int> ids);

    // 1-D convolution along columns with same padding. weight is
    // (out_ch, in_ch * kernel): the block for tap k is columns
    // [k*in_ch, (k+1)*in_ch), taps ordered left to right.
    Var conv1d(Var x, Var weight, int kernel);

    // Depthwise variant: weight is (channels, kernel).
    Var dwconv1d(Var x, Var weight);

    // Scalar (1x1): sum_c col_weight_c * ||x.col(c)||^2 / denom.
    Var sum_sq_cols_weighted(Var x, const Vec& col_weight, double denom);

    // Seeds d(result)/d(result) = seed at a 1x1 node, then sweeps the tape in
    // reverse, accumulating into every reachable leaf gradient.
    void backward(Var result, double seed = 1.0);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;             // unused when ext_value is set
        const Mat* ext_value = nullptr;
        Mat* ext_grad = nullptr;
        Mat grad;              // lazily sized on first accumulation
        bool has_grad = false;
        bool track = true;     // constants opt out
        std::function<void(Tape&)> back;  // empty for leaves
    };

    const Mat& val(int id) const;
    void accumulate(int id, const Mat& g);
    const Mat& grad_of(int id) const;  // valid only when node has a grad
    bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }

    Var push(Mat value, std::function<void(Tape&)> back);
    void check(Var v, const char* who) const;

    std::vector<Node> nodes_;
};

using Var = Tape::Var;

}  // namespace enviro::graph
