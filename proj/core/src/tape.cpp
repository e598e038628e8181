#include "cbt/tape.hpp"

#include <cmath>
#include <string>

#include "cbt/error.hpp"
#include "cbt/numerics.hpp"

namespace cbt {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

void require_rank2(const Tensor& t, const char* ctx) {
    require(t.rank() == 2, std::string(ctx) + ": expected rank-2 tensor, got " + shape_to_string(t.shape()));
}

void require_rank4(const Tensor& t, const char* ctx) {
    require(t.rank() == 4, std::string(ctx) + ": expected rank-4 tensor, got " + shape_to_string(t.shape()));
}

}  // namespace

void GradTape::check_var(Var v, const char* ctx) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
        throw ConfigError(std::string(ctx) + ": invalid tape handle");
    }
}

Var GradTape::push(Node n) {
    n.value.check_finite("tape node value");
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var GradTape::leaf(const Tensor& value) {
    Node n;
    n.op = Op::Leaf;
    n.value = value;
    n.needs_grad = true;
    return push(std::move(n));
}

Var GradTape::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    n.needs_grad = false;
    return push(std::move(n));
}

Var GradTape::matmul(Var a, Var b) {
    check_var(a, "matmul");
    check_var(b, "matmul");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require_rank2(A, "matmul lhs");
    require_rank2(B, "matmul rhs");
    require(A.dim(1) == B.dim(0), "matmul: inner dims disagree, " + shape_to_string(A.shape()) +
                                      " vs " + shape_to_string(B.shape()));
    const int m = A.dim(0), k = A.dim(1), p = B.dim(1);
    Tensor C({m, p});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += A.at(i, t) * B.at(t, j);
            C.at(i, j) = acc;
        }
    }
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var GradTape::transpose(Var a) {
    check_var(a, "transpose");
    const Tensor& A = value(a);
    require_rank2(A, "transpose");
    Tensor T({A.dim(1), A.dim(0)});
    for (int i = 0; i < A.dim(0); ++i)
        for (int j = 0; j < A.dim(1); ++j) T.at(j, i) = A.at(i, j);
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    n.value = std::move(T);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::add(Var a, Var b) {
    check_var(a, "add");
    check_var(b, "add");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "add: shape mismatch " + shape_to_string(A.shape()) + " vs " + shape_to_string(B.shape()));
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] + B[i];
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var GradTape::add_row(Var a, Var bias) {
    check_var(a, "add_row");
    check_var(bias, "add_row");
    const Tensor& A = value(a);
    const Tensor& B = value(bias);
    require_rank2(A, "add_row lhs");
    require(B.rank() == 1 && B.dim(0) == A.dim(1),
            "add_row: bias shape " + shape_to_string(B.shape()) + " does not match " + shape_to_string(A.shape()));
    Tensor C(A.shape());
    for (int i = 0; i < A.dim(0); ++i)
        for (int j = 0; j < A.dim(1); ++j) C.at(i, j) = A.at(i, j) + B[j];
    Node n;
    n.op = Op::AddRow;
    n.a = a.id;
    n.b = bias.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad || node(bias).needs_grad;
    return push(std::move(n));
}

Var GradTape::sub(Var a, Var b) {
    check_var(a, "sub");
    check_var(b, "sub");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "sub: shape mismatch " + shape_to_string(A.shape()) + " vs " + shape_to_string(B.shape()));
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] - B[i];
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var GradTape::mul(Var a, Var b) {
    check_var(a, "mul");
    check_var(b, "mul");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "mul: shape mismatch " + shape_to_string(A.shape()) + " vs " + shape_to_string(B.shape()));
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] * B[i];
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var GradTape::div(Var a, Var b) {
    check_var(a, "div");
    check_var(b, "div");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.same_shape(B), "div: shape mismatch " + shape_to_string(A.shape()) + " vs " + shape_to_string(B.shape()));
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] / B[i];
    Node n;
    n.op = Op::Div;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var GradTape::neg(Var a) { return scale(a, -1.0); }

Var GradTape::scale(Var a, double s) {
    check_var(a, "scale");
    const Tensor& A = value(a);
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] * s;
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.d0 = s;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::offset(Var a, double c) {
    check_var(a, "offset");
    const Tensor& A = value(a);
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] + c;
    Node n;
    n.op = Op::Offset;
    n.a = a.id;
    n.d0 = c;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::square(Var a) {
    check_var(a, "square");
    const Tensor& A = value(a);
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] * A[i];
    Node n;
    n.op = Op::Square;
    n.a = a.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::tanh(Var a) {
    check_var(a, "tanh");
    const Tensor& A = value(a);
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = std::tanh(A[i]);
    Node n;
    n.op = Op::Tanh;
    n.a = a.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::relu(Var a) {
    check_var(a, "relu");
    const Tensor& A = value(a);
    Tensor C(A.shape());
    for (std::int64_t i = 0; i < A.size(); ++i) C[i] = A[i] > 0.0 ? A[i] : 0.0;
    Node n;
    n.op = Op::Relu;
    n.a = a.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::sum_all(Var a) {
    check_var(a, "sum_all");
    const Tensor& A = value(a);
    double acc = 0.0;
    for (std::int64_t i = 0; i < A.size(); ++i) acc += A[i];
    Node n;
    n.op = Op::SumAll;
    n.a = a.id;
    n.value = Tensor::scalar(acc);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::mean_all(Var a) {
    check_var(a, "mean_all");
    const Tensor& A = value(a);
    double acc = 0.0;
    for (std::int64_t i = 0; i < A.size(); ++i) acc += A[i];
    Node n;
    n.op = Op::MeanAll;
    n.a = a.id;
    n.value = Tensor::scalar(acc / static_cast<double>(A.size()));
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::column_sum(Var a) {
    check_var(a, "column_sum");
    const Tensor& A = value(a);
    require_rank2(A, "column_sum");
    Tensor C({A.dim(1)});
    for (int j = 0; j < A.dim(1); ++j) {
        double acc = 0.0;
        for (int i = 0; i < A.dim(0); ++i) acc += A.at(i, j);
        C[j] = acc;
    }
    Node n;
    n.op = Op::ColumnSum;
    n.a = a.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::mean_center(Var a) {
    check_var(a, "mean_center");
    // Forward shared with the plain op so both paths agree bitwise.
    Node n;
    n.op = Op::MeanCenter;
    n.a = a.id;
    n.value = cbt::mean_center(value(a));
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::standardize_columns(Var a, double eps) {
    check_var(a, "standardize_columns");
    Node n;
    n.op = Op::StandardizeCols;
    n.a = a.id;
    n.d0 = eps;
    n.value = cbt::standardize_columns(value(a), eps);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::reshape(Var a, Shape shape) {
    check_var(a, "reshape");
    const Tensor& A = value(a);
    require(shape_product(shape) == A.size(),
            "reshape: size mismatch, " + shape_to_string(A.shape()) + " -> " + shape_to_string(shape));
    Tensor C(std::move(shape), std::vector<double>(A.data(), A.data() + A.size()));
    Node n;
    n.op = Op::Reshape;
    n.a = a.id;
    n.value = std::move(C);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Var GradTape::nchw_to_rows(Var a) {
    check_var(a, "nchw_to_rows");
    const Tensor& A = value(a);
    require_rank4(A, "nchw_to_rows");
    const int B = A.dim(0), C = A.dim(1), H = A.dim(2), W = A.dim(3);
    Tensor R({B * H * W, C});
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) R.at((n * H + y) * W + x, c) = A.at(n, c, y, x);
    Node nd;
    nd.op = Op::NchwToRows;
    nd.a = a.id;
    nd.value = std::move(R);
    nd.needs_grad = node(a).needs_grad;
    return push(std::move(nd));
}

Var GradTape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    check_var(x, "conv2d");
    check_var(w, "conv2d");
    check_var(b, "conv2d");
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    const Tensor& Bv = value(b);
    require_rank4(X, "conv2d input");
    require_rank4(W, "conv2d weight");
    require(W.dim(1) == X.dim(1), "conv2d: channel mismatch " + shape_to_string(X.shape()) + " vs " + shape_to_string(W.shape()));
    require(Bv.rank() == 1 && Bv.dim(0) == W.dim(0), "conv2d: bias shape mismatch");
    require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    const int N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const int Co = W.dim(0), KH = W.dim(2), KW = W.dim(3);
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (Wd + 2 * pad - KW) / stride + 1;
    require(OH >= 1 && OW >= 1, "conv2d: output would be empty");
    Tensor Y({N, Co, OH, OW});
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Co; ++co) {
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = Bv[co];
                    for (int ci = 0; ci < Ci; ++ci) {
                        for (int ky = 0; ky < KH; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < KW; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= Wd) continue;
                                acc += X.at(n, ci, iy, ix) * W.at(co, ci, ky, kx);
                            }
                        }
                    }
                    Y.at(n, co, oy, ox) = acc;
                }
            }
        }
    }
    Node nd;
    nd.op = Op::Conv2d;
    nd.a = x.id;
    nd.b = w.id;
    nd.c = b.id;
    nd.i0 = stride;
    nd.i1 = pad;
    nd.value = std::move(Y);
    nd.needs_grad = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
    return push(std::move(nd));
}

Var GradTape::global_avg_pool(Var x) {
    check_var(x, "global_avg_pool");
    const Tensor& X = value(x);
    require_rank4(X, "global_avg_pool");
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Tensor Y({N, C});
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) acc += X.at(n, c, y, xx);
            Y.at(n, c) = acc / (static_cast<double>(H) * W);
        }
    }
    Node nd;
    nd.op = Op::GlobalAvgPool;
    nd.a = x.id;
    nd.value = std::move(Y);
    nd.needs_grad = node(x).needs_grad;
    return push(std::move(nd));
}

Var GradTape::upsample_nearest(Var x, int factor) {
    check_var(x, "upsample_nearest");
    const Tensor& X = value(x);
    require_rank4(X, "upsample_nearest");
    require(factor >= 1, "upsample_nearest: factor must be >= 1");
    const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    Tensor Y({N, C, H * factor, W * factor});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H * factor; ++y)
                for (int xx = 0; xx < W * factor; ++xx)
                    Y.at(n, c, y, xx) = X.at(n, c, y / factor, xx / factor);
    Node nd;
    nd.op = Op::UpsampleNearest;
    nd.a = x.id;
    nd.i0 = factor;
    nd.value = std::move(Y);
    nd.needs_grad = node(x).needs_grad;
    return push(std::move(nd));
}

Var GradTape::rows_softmax(Var a) {
    check_var(a, "rows_softmax");
    const Tensor& A = value(a);
    require_rank2(A, "rows_softmax");
    const int N = A.dim(0), K = A.dim(1);
    Tensor Y(A.shape());
    for (int i = 0; i < N; ++i) {
        double mx = A.at(i, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, A.at(i, k));
        double z = 0.0;
        for (int k = 0; k < K; ++k) {
            const double e = std::exp(A.at(i, k) - mx);
            Y.at(i, k) = e;
            z += e;
        }
        for (int k = 0; k < K; ++k) Y.at(i, k) /= z;
    }
    Node nd;
    nd.op = Op::RowsSoftmax;
    nd.a = a.id;
    nd.value = std::move(Y);
    nd.needs_grad = node(a).needs_grad;
    return push(std::move(nd));
}

void GradTape::accumulate(Tensor& dst, const Tensor& src) {
    if (dst.size() == 0) {
        dst = src;
        return;
    }
    for (std::int64_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

void GradTape::backward_node(int id, std::vector<Tensor>& adj) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& G = adj[static_cast<std::size_t>(id)];
    if (G.size() == 0) return;  // nothing flowed here

    auto adj_of = [&](int input) -> Tensor& { return adj[static_cast<std::size_t>(input)]; };
    auto wants = [&](int input) {
        return input >= 0 && nodes_[static_cast<std::size_t>(input)].needs_grad;
    };
    auto val = [&](int input) -> const Tensor& { return nodes_[static_cast<std::size_t>(input)].value; };

    switch (n.op) {
        case Op::Leaf:
        case Op::Constant:
            break;
        case Op::MatMul: {
            const Tensor& A = val(n.a);
            const Tensor& B = val(n.b);
            const int m = A.dim(0), k = A.dim(1), p = B.dim(1);
            if (wants(n.a)) {
                Tensor dA(A.shape());
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (int j = 0; j < p; ++j) acc += G.at(i, j) * B.at(t, j);
                        dA.at(i, t) = acc;
                    }
                accumulate(adj_of(n.a), dA);
            }
            if (wants(n.b)) {
                Tensor dB(B.shape());
                for (int t = 0; t < k; ++t)
                    for (int j = 0; j < p; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) acc += A.at(i, t) * G.at(i, j);
                        dB.at(t, j) = acc;
                    }
                accumulate(adj_of(n.b), dB);
            }
            break;
        }
        case Op::Transpose: {
            if (wants(n.a)) {
                const Tensor& A = val(n.a);
                Tensor dA(A.shape());
                for (int i = 0; i < A.dim(0); ++i)
                    for (int j = 0; j < A.dim(1); ++j) dA.at(i, j) = G.at(j, i);
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::Add: {
            if (wants(n.a)) accumulate(adj_of(n.a), G);
            if (wants(n.b)) accumulate(adj_of(n.b), G);
            break;
        }
        case Op::AddRow: {
            if (wants(n.a)) accumulate(adj_of(n.a), G);
            if (wants(n.b)) {
                const int rows = G.dim(0), cols = G.dim(1);
                Tensor db({cols});
                for (int j = 0; j < cols; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < rows; ++i) acc += G.at(i, j);
                    db[j] = acc;
                }
                accumulate(adj_of(n.b), db);
            }
            break;
        }
        case Op::Sub: {
            if (wants(n.a)) accumulate(adj_of(n.a), G);
            if (wants(n.b)) {
                Tensor dB(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dB[i] = -G[i];
                accumulate(adj_of(n.b), dB);
            }
            break;
        }
        case Op::Mul: {
            if (wants(n.a)) {
                const Tensor& B = val(n.b);
                Tensor dA(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dA[i] = G[i] * B[i];
                accumulate(adj_of(n.a), dA);
            }
            if (wants(n.b)) {
                const Tensor& A = val(n.a);
                Tensor dB(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dB[i] = G[i] * A[i];
                accumulate(adj_of(n.b), dB);
            }
            break;
        }
        case Op::Div: {
            const Tensor& A = val(n.a);
            const Tensor& B = val(n.b);
            if (wants(n.a)) {
                Tensor dA(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dA[i] = G[i] / B[i];
                accumulate(adj_of(n.a), dA);
            }
            if (wants(n.b)) {
                Tensor dB(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dB[i] = -G[i] * A[i] / (B[i] * B[i]);
                accumulate(adj_of(n.b), dB);
            }
            break;
        }
        case Op::Neg:
            break;  // represented as Scale
        case Op::Scale: {
            if (wants(n.a)) {
                Tensor dA(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dA[i] = G[i] * n.d0;
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::Offset: {
            if (wants(n.a)) accumulate(adj_of(n.a), G);
            break;
        }
        case Op::Square: {
            if (wants(n.a)) {
                const Tensor& A = val(n.a);
                Tensor dA(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dA[i] = 2.0 * A[i] * G[i];
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::Tanh: {
            if (wants(n.a)) {
                Tensor dA(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dA[i] = (1.0 - n.value[i] * n.value[i]) * G[i];
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::Relu: {
            if (wants(n.a)) {
                const Tensor& A = val(n.a);
                Tensor dA(G.shape());
                for (std::int64_t i = 0; i < G.size(); ++i) dA[i] = A[i] > 0.0 ? G[i] : 0.0;
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::SumAll: {
            if (wants(n.a)) {
                const double g = G.scalar_value();
                accumulate(adj_of(n.a), Tensor::full(val(n.a).shape(), g));
            }
            break;
        }
        case Op::MeanAll: {
            if (wants(n.a)) {
                const Tensor& A = val(n.a);
                const double g = G.scalar_value() / static_cast<double>(A.size());
                accumulate(adj_of(n.a), Tensor::full(A.shape(), g));
            }
            break;
        }
        case Op::ColumnSum: {
            if (wants(n.a)) {
                const Tensor& A = val(n.a);
                Tensor dA(A.shape());
                for (int i = 0; i < A.dim(0); ++i)
                    for (int j = 0; j < A.dim(1); ++j) dA.at(i, j) = G[j];
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::MeanCenter: {
            if (wants(n.a)) {
                const int b = G.dim(0), d = G.dim(1);
                Tensor dA(G.shape());
                for (int j = 0; j < d; ++j) {
                    double gm = 0.0;
                    for (int i = 0; i < b; ++i) gm += G.at(i, j);
                    gm /= b;
                    for (int i = 0; i < b; ++i) dA.at(i, j) = G.at(i, j) - gm;
                }
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::StandardizeCols: {
            if (wants(n.a)) {
                const Tensor& A = val(n.a);
                const int b = A.dim(0), d = A.dim(1);
                const double eps = n.d0;
                Tensor dA(A.shape());
                for (int j = 0; j < d; ++j) {
                    double m = 0.0;
                    for (int i = 0; i < b; ++i) m += A.at(i, j);
                    m /= b;
                    double var = 0.0;
                    for (int i = 0; i < b; ++i) {
                        const double c = A.at(i, j) - m;
                        var += c * c;
                    }
                    const double sd = std::sqrt(var / b);
                    const double denom = sd + eps;
                    double gm = 0.0, gc = 0.0;
                    for (int i = 0; i < b; ++i) {
                        gm += G.at(i, j);
                        gc += G.at(i, j) * (A.at(i, j) - m);
                    }
                    gm /= b;
                    for (int i = 0; i < b; ++i) {
                        const double c = A.at(i, j) - m;
                        double g = (G.at(i, j) - gm) / denom;
                        // Constant columns (sd == 0) keep only the centering
                        // part; the std path has no defined derivative there.
                        if (sd > 0.0) g -= c * gc / (b * sd * denom * denom);
                        dA.at(i, j) = g;
                    }
                }
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::Reshape: {
            if (wants(n.a)) {
                const Tensor& A = val(n.a);
                Tensor dA(A.shape(), std::vector<double>(G.data(), G.data() + G.size()));
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::NchwToRows: {
            if (wants(n.a)) {
                const Tensor& A = val(n.a);
                const int B = A.dim(0), C = A.dim(1), H = A.dim(2), W = A.dim(3);
                Tensor dA(A.shape());
                for (int nn = 0; nn < B; ++nn)
                    for (int c = 0; c < C; ++c)
                        for (int y = 0; y < H; ++y)
                            for (int x = 0; x < W; ++x) dA.at(nn, c, y, x) = G.at((nn * H + y) * W + x, c);
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
        case Op::Conv2d: {
            const Tensor& X = val(n.a);
            const Tensor& W = val(n.b);
            const int N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
            const int Co = W.dim(0), KH = W.dim(2), KW = W.dim(3);
            const int OH = G.dim(2), OW = G.dim(3);
            const int stride = n.i0, pad = n.i1;
            if (wants(n.a)) {
                Tensor dX(X.shape());
                for (int nn = 0; nn < N; ++nn)
                    for (int co = 0; co < Co; ++co)
                        for (int oy = 0; oy < OH; ++oy)
                            for (int ox = 0; ox < OW; ++ox) {
                                const double g = G.at(nn, co, oy, ox);
                                for (int ci = 0; ci < Ci; ++ci)
                                    for (int ky = 0; ky < KH; ++ky) {
                                        const int iy = oy * stride - pad + ky;
                                        if (iy < 0 || iy >= H) continue;
                                        for (int kx = 0; kx < KW; ++kx) {
                                            const int ix = ox * stride - pad + kx;
                                            if (ix < 0 || ix >= Wd) continue;
                                            dX.at(nn, ci, iy, ix) += g * W.at(co, ci, ky, kx);
                                        }
                                    }
                            }
                accumulate(adj_of(n.a), dX);
            }
            if (wants(n.b)) {
                Tensor dW(W.shape());
                for (int nn = 0; nn < N; ++nn)
                    for (int co = 0; co < Co; ++co)
                        for (int oy = 0; oy < OH; ++oy)
                            for (int ox = 0; ox < OW; ++ox) {
                                const double g = G.at(nn, co, oy, ox);
                                for (int ci = 0; ci < Ci; ++ci)
                                    for (int ky = 0; ky < KH; ++ky) {
                                        const int iy = oy * stride - pad + ky;
                                        if (iy < 0 || iy >= H) continue;
                                        for (int kx = 0; kx < KW; ++kx) {
                                            const int ix = ox * stride - pad + kx;
                                            if (ix < 0 || ix >= Wd) continue;
                                            dW.at(co, ci, ky, kx) += g * X.at(nn, ci, iy, ix);
                                        }
                                    }
                            }
                accumulate(adj_of(n.b), dW);
            }
            if (wants(n.c)) {
                Tensor db({Co});
                for (int nn = 0; nn < N; ++nn)
                    for (int co = 0; co < Co; ++co)
                        for (int oy = 0; oy < OH; ++oy)
                            for (int ox = 0; ox < OW; ++ox) db[co] += G.at(nn, co, oy, ox);
                accumulate(adj_of(n.c), db);
            }
            break;
        }
        case Op::GlobalAvgPool: {
            if (wants(n.a)) {
                const Tensor& X = val(n.a);
                const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
                Tensor dX(X.shape());
                const double inv = 1.0 / (static_cast<double>(H) * W);
                for (int nn = 0; nn < N; ++nn)
                    for (int c = 0; c < C; ++c) {
                        const double g = G.at(nn, c) * inv;
                        for (int y = 0; y < H; ++y)
                            for (int x = 0; x < W; ++x) dX.at(nn, c, y, x) = g;
                    }
                accumulate(adj_of(n.a), dX);
            }
            break;
        }
        case Op::UpsampleNearest: {
            if (wants(n.a)) {
                const Tensor& X = val(n.a);
                const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
                const int f = n.i0;
                Tensor dX(X.shape());
                for (int nn = 0; nn < N; ++nn)
                    for (int c = 0; c < C; ++c)
                        for (int y = 0; y < H * f; ++y)
                            for (int x = 0; x < W * f; ++x) dX.at(nn, c, y / f, x / f) += G.at(nn, c, y, x);
                accumulate(adj_of(n.a), dX);
            }
            break;
        }
        case Op::RowsSoftmax: {
            if (wants(n.a)) {
                const Tensor& Y = n.value;
                const int N = Y.dim(0), K = Y.dim(1);
                Tensor dA(Y.shape());
                for (int i = 0; i < N; ++i) {
                    double dot = 0.0;
                    for (int k = 0; k < K; ++k) dot += G.at(i, k) * Y.at(i, k);
                    for (int k = 0; k < K; ++k) dA.at(i, k) = Y.at(i, k) * (G.at(i, k) - dot);
                }
                accumulate(adj_of(n.a), dA);
            }
            break;
        }
    }
}

std::vector<Tensor> GradTape::gradients(Var loss, const std::vector<Var>& leaves) {
    check_var(loss, "gradients");
    const Tensor& L = value(loss);
    if (L.size() != 1) {
        throw NumericError("loss must be scalar, got shape " + shape_to_string(L.shape()));
    }
    L.check_finite("loss value");

    std::vector<Tensor> adj(nodes_.size());
    if (node(loss).needs_grad) {
        adj[static_cast<std::size_t>(loss.id)] = Tensor::full(L.shape(), 1.0);
        for (int id = loss.id; id >= 0; --id) {
            if (!nodes_[static_cast<std::size_t>(id)].needs_grad) continue;
            backward_node(id, adj);
        }
    }

    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (Var v : leaves) {
        check_var(v, "gradients leaf");
        Tensor& g = adj[static_cast<std::size_t>(v.id)];
        if (g.size() == 0) g = Tensor::zeros(value(v).shape());
        g.check_finite("gradient");
        out.push_back(std::move(g));
    }
    return out;
}

BoundParams BoundParams::bind(GradTape& tape, const ParameterVector& params) {
    BoundParams bp;
    bp.params_ = &params;
    bp.vars_.reserve(static_cast<std::size_t>(params.entry_count()));
    for (int i = 0; i < params.entry_count(); ++i) {
        bp.vars_.push_back(tape.leaf(params.entry(i).tensor));
    }
    return bp;
}

Var BoundParams::operator[](std::string_view name) const {
    const int i = params_->index_of(name);
    if (i < 0) throw ConfigError("no bound parameter named " + std::string(name));
    return vars_[static_cast<std::size_t>(i)];
}

double eval_loss(const ScalarLossFn& fn, const ParameterVector& params) {
    GradTape tape;
    BoundParams bp = BoundParams::bind(tape, params);
    const Var loss = fn(tape, bp);
    return tape.scalar(loss);
}

std::pair<double, ParameterVector> value_and_grad(const ScalarLossFn& fn, const ParameterVector& params) {
    GradTape tape;
    BoundParams bp = BoundParams::bind(tape, params);
    const Var loss = fn(tape, bp);
    const double v = tape.scalar(loss);
    std::vector<Tensor> grads = tape.gradients(loss, bp.vars());
    ParameterVector out;
    for (int i = 0; i < params.entry_count(); ++i) {
        out.add(params.entry(i).name, std::move(grads[static_cast<std::size_t>(i)]));
    }
    return {v, std::move(out)};
}

}  // namespace cbt
