#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "splat/tensor.hpp"

namespace splat::ad {

enum class Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    MatMul,
    Conv2d,
    Relu,
    LeakyRelu,
    Sigmoid,
    Sum,
    Mean,
    Abs,
    Square,
    Exp,
    Log,
    Concat,
    Slice,
    NormalizeRows,
    StopGrad,
    Clamp,
    Upsample2,
    GridSample,
    BroadcastRows,
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Op op;
    std::vector<NodePtr> inputs;
    std::string name;   // Leaf only
    Tensor cval;        // Constant only
    double a = 0.0;     // leaky slope / clamp lo
    double b = 0.0;     // clamp hi
    std::size_t axis = 0, start = 0, len = 0;
    std::size_t stride = 1, pad = 0;
    std::size_t nrows = 0;  // BroadcastRows target row count
    int id = 0;
};

/// Handle to a node of an expression DAG. Graphs are immutable once built;
/// evaluation never mutates nodes, so one graph may be evaluated concurrently
/// with different bindings.
struct Expr {
    NodePtr node;
    explicit operator bool() const { return node != nullptr; }
};

Expr leaf(const std::string& name);
Expr constant(Tensor t);
Expr constant_scalar(double v);
Expr add(Expr x, Expr y);
Expr sub(Expr x, Expr y);
Expr mul(Expr x, Expr y);
Expr scale(Expr x, double c);
Expr matmul(Expr x, Expr y);
Expr conv2d(Expr input, Expr kernel, std::size_t stride = 1, std::size_t pad = 0);
Expr relu(Expr x);
Expr leaky_relu(Expr x, double slope = 0.01);
Expr sigmoid(Expr x);
Expr sum(Expr x);
Expr mean(Expr x);
Expr abs(Expr x);
Expr square(Expr x);
Expr exp(Expr x);
Expr log(Expr x);
Expr concat(std::vector<Expr> xs, std::size_t axis);
Expr slice(Expr x, std::size_t axis, std::size_t start, std::size_t len);
Expr normalize_rows(Expr x);
Expr stop_grad(Expr x);
Expr clamp(Expr x, double lo, double hi);
Expr upsample2(Expr x);
/// Bilinear sample of grid [H,W,D] at uv rows [N,2] in [0,1]^2 (clamped);
/// differentiable in both the grid values and the sample positions.
Expr grid_sample(Expr grid, Expr uv);
Expr broadcast_rows(Expr row, std::size_t n);

using Bindings = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

Tensor evaluate(const Expr& out, const Bindings& bindings);

/// One shared forward pass for several roots of the same graph; heads that
/// branch late (e.g. per-attribute slices of one trunk) cost almost nothing
/// beyond a single evaluate.
std::vector<Tensor> evaluate_many(const std::vector<Expr>& outs, const Bindings& bindings);

/// Reverse-mode gradients of a scalar output w.r.t. the named leaves.
GradMap gradient(const Expr& out, const Bindings& bindings, const std::set<std::string>& wrt);

/// Backward pass seeded with upstream gradients at arbitrary nodes; used to
/// chain the expression graph with externally differentiated stages.
GradMap backward_seeded(const std::vector<std::pair<Expr, Tensor>>& seeds,
                        const Bindings& bindings, const std::set<std::string>& wrt);

struct GradCheckReport {
    std::map<std::string, double> per_leaf;  // max relative error per leaf
    double worst = 0.0;
};

/// Central finite differences vs the analytic gradient. Relative error uses
/// max(1, |analytic|) in the denominator.
GradCheckReport grad_check(const Expr& out, const Bindings& bindings,
                           const std::set<std::string>& wrt, double step);

}  // namespace splat::ad
