#pragma once

#include <functional>
#include <string_view>
#include <utility>
#include <vector>

#include "cbt/parameters.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

/// Handle to a node on a GradTape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense tensors.
///
/// The tape records the forward pass of a scalar loss built from the
/// supported primitives and replays it backwards to produce exact gradients
/// with respect to every leaf. Summation order inside each primitive is
/// fixed, so identical inputs give bitwise-identical values and gradients.
/// Single-writer: one thread builds and differentiates a given tape.
class GradTape {
public:
    /// Tracked input; gradients are computed with respect to leaves.
    Var leaf(const Tensor& value);
    /// Untracked input; its gradient is identically zero.
    Var constant(Tensor value);
    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    // Linear algebra.
    Var matmul(Var a, Var b);       // [M.K] x [K.N]
    Var transpose(Var a);           // [M.N] -> [N.M]

    // Pointwise and affine.
    Var add(Var a, Var b);          // same shape
    Var add_row(Var a, Var bias);   // [B.D] + [D], broadcast over rows
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var neg(Var a);
    Var scale(Var a, double s);
    Var offset(Var a, double c);
    Var square(Var a);
    Var tanh(Var a);
    Var relu(Var a);

    // Reductions.
    Var sum_all(Var a);             // -> scalar
    Var mean_all(Var a);            // -> scalar
    Var column_sum(Var a);          // [N.K] -> [K]

    // Batch statistics over columns of [B.D].
    Var mean_center(Var a);
    Var standardize_columns(Var a, double eps);

    // Shape movement.
    Var reshape(Var a, Shape shape);
    Var nchw_to_rows(Var a);        // [B.C.H.W] -> [B*H*W.C], pixel-major rows

    // Spatial primitives for the small convolutional encoder and probe head.
    Var conv2d(Var x, Var w, Var b, int stride, int pad);  // NCHW, w = [Co.Ci.KH.KW]
    Var global_avg_pool(Var x);     // [B.C.H.W] -> [B.C]
    Var upsample_nearest(Var x, int factor);

    Var rows_softmax(Var a);        // [N.K], softmax along each row

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    double scalar(Var v) const { return value(v).scalar_value(); }

    /// Backpropagates from a scalar loss and returns one gradient tensor per
    /// requested leaf, in order. Leaves the loss does not depend on get zero
    /// gradients. Throws NumericError if the loss is not scalar or a
    /// non-finite value appears.
    std::vector<Tensor> gradients(Var loss, const std::vector<Var>& leaves);

    int node_count() const { return static_cast<int>(nodes_.size()); }

private:
    enum class Op : std::uint8_t {
        Leaf, Constant, MatMul, Transpose, Add, AddRow, Sub, Mul, Div, Neg,
        Scale, Offset, Square, Tanh, Relu, SumAll, MeanAll, ColumnSum,
        MeanCenter, StandardizeCols, Reshape, NchwToRows, Conv2d,
        GlobalAvgPool, UpsampleNearest, RowsSoftmax,
    };

    struct Node {
        Op op;
        int a = -1, b = -1, c = -1;
        double d0 = 0.0;        // eps / scale / offset
        int i0 = 0, i1 = 0;     // stride, pad, factor
        Tensor value;
        bool needs_grad = false;
    };

    Var push(Node node);
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
    void check_var(Var v, const char* ctx) const;
    void backward_node(int id, std::vector<Tensor>& adj) const;
    static void accumulate(Tensor& dst, const Tensor& shape_src);

    std::vector<Node> nodes_;
};

/// Tape leaves bound from a ParameterVector, addressable by entry name.
class BoundParams {
public:
    static BoundParams bind(GradTape& tape, const ParameterVector& params);

    Var operator[](std::string_view name) const;
    const std::vector<Var>& vars() const { return vars_; }

private:
    const ParameterVector* params_ = nullptr;
    std::vector<Var> vars_;
};

/// A scalar loss expressed in tape primitives over bound parameters.
using ScalarLossFn = std::function<Var(GradTape&, const BoundParams&)>;

/// Forward evaluation only.
double eval_loss(const ScalarLossFn& fn, const ParameterVector& params);

/// Loss value plus exact gradient for every parameter entry.
std::pair<double, ParameterVector> value_and_grad(const ScalarLossFn& fn, const ParameterVector& params);

}  // namespace cbt
