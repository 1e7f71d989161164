#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "aria/error.hpp"

namespace aria {

/// A named trainable tensor with its gradient and Adam moments.
template <typename S>
struct Param {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    std::string name;
    Mat value;
    Mat grad;
    Mat m;
    Mat v;
    bool requires_grad = true;
};

/// Reverse-mode autodiff over 2-D tensors (rows = time, cols = channels).
///
/// A Graph is built once per forward pass; ops append nodes and return integer
/// handles. backward(loss) walks the nodes in reverse creation order, which is
/// a topological order by construction. Gradients only propagate through nodes
/// whose ancestors include a parameter with requires_grad set.
template <typename S>
class Graph {
public:
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

    Graph() { nodes_.reserve(1024); }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    const Mat& value(int i) const { return nodes_[static_cast<std::size_t>(i)].value; }
    const Mat& grad(int i) const { return nodes_[static_cast<std::size_t>(i)].grad; }
    bool needs_grad(int i) const { return nodes_[static_cast<std::size_t>(i)].needs_grad; }
    int rows(int i) const { return static_cast<int>(value(i).rows()); }
    int cols(int i) const { return static_cast<int>(value(i).cols()); }
    std::size_t size() const { return nodes_.size(); }

    int constant(Mat v) { return push(std::move(v), false); }

    int constant_scalar(S v) {
        Mat m(1, 1);
        m(0, 0) = v;
        return push(std::move(m), false);
    }

    /// Leaf node backed by an external parameter; backward accumulates into
    /// p.grad when the parameter is trainable.
    int param(Param<S>& p) {
        const int out = push(p.value, p.requires_grad);
        if (p.requires_grad) {
            Param<S>* ptr = &p;
            node(out).backward = [this, ptr, out] {
                if (ptr->grad.size() == 0) ptr->grad = Mat::Zero(ptr->value.rows(), ptr->value.cols());
                ptr->grad += node(out).grad;
            };
        }
        return out;
    }

    // ---- elementwise ----------------------------------------------------

    int add(int a, int b) {
        check_same_shape(a, b, "add");
        const Mat v = value(a) + value(b);
        const int out = push(v, needs_grad(a) || needs_grad(b));
        if (needs_grad(out))
            node(out).backward = [this, a, b, out] {
                if (needs_grad(a)) node(a).grad += node(out).grad;
                if (needs_grad(b)) node(b).grad += node(out).grad;
            };
        return out;
    }

    int sub(int a, int b) {
        check_same_shape(a, b, "sub");
        const Mat v = value(a) - value(b);
        const int out = push(v, needs_grad(a) || needs_grad(b));
        if (needs_grad(out))
            node(out).backward = [this, a, b, out] {
                if (needs_grad(a)) node(a).grad += node(out).grad;
                if (needs_grad(b)) node(b).grad -= node(out).grad;
            };
        return out;
    }

    int mul(int a, int b) {
        check_same_shape(a, b, "mul");
        const Mat v = value(a).cwiseProduct(value(b));
        const int out = push(v, needs_grad(a) || needs_grad(b));
        if (needs_grad(out))
            node(out).backward = [this, a, b, out] {
                if (needs_grad(a)) node(a).grad += node(out).grad.cwiseProduct(value(b));
                if (needs_grad(b)) node(b).grad += node(out).grad.cwiseProduct(value(a));
            };
        return out;
    }

    int scale(int a, S k) {
        const Mat v = value(a) * k;
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out, k] { node(a).grad += node(out).grad * k; };
        return out;
    }

    int add_scalar(int a, S k) {
        const Mat v = value(a).array() + k;
        const int out = push(v, needs_grad(a));
        if (needs_grad(out)) node(out).backward = [this, a, out] { node(a).grad += node(out).grad; };
        return out;
    }

    /// Add a 1 x C row vector to every row of a (bias broadcast).
    int add_rowvec(int a, int v) {
        if (cols(a) != cols(v) || rows(v) != 1) throw Error("add_rowvec: shape mismatch");
        const Mat val = value(a).rowwise() + value(v).row(0);
        const int out = push(val, needs_grad(a) || needs_grad(v));
        if (needs_grad(out))
            node(out).backward = [this, a, v, out] {
                if (needs_grad(a)) node(a).grad += node(out).grad;
                if (needs_grad(v)) node(v).grad.row(0) += node(out).grad.colwise().sum();
            };
        return out;
    }

    /// Multiply every row of a by a 1 x C row vector.
    int mul_rowvec(int a, int v) {
        if (cols(a) != cols(v) || rows(v) != 1) throw Error("mul_rowvec: shape mismatch");
        const Mat val = value(a).array().rowwise() * value(v).row(0).array();
        const int out = push(val, needs_grad(a) || needs_grad(v));
        if (needs_grad(out))
            node(out).backward = [this, a, v, out] {
                if (needs_grad(a))
                    node(a).grad.array() += node(out).grad.array().rowwise() * value(v).row(0).array();
                if (needs_grad(v))
                    node(v).grad.row(0) += node(out).grad.cwiseProduct(value(a)).colwise().sum();
            };
        return out;
    }

    int leaky_relu(int a, S slope) {
        const Mat v = value(a).unaryExpr([slope](S x) { return x > S(0) ? x : slope * x; });
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out, slope] {
                node(a).grad.array() +=
                    node(out).grad.array() *
                    value(a).unaryExpr([slope](S x) { return x > S(0) ? S(1) : slope; }).array();
            };
        return out;
    }

    int relu(int a) { return leaky_relu(a, S(0)); }

    int tanh_op(int a) {
        const Mat v = value(a).array().tanh();
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out] {
                node(a).grad.array() += node(out).grad.array() * (S(1) - value(out).array().square());
            };
        return out;
    }

    int sigmoid(int a) {
        const Mat v = value(a).unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out] {
                node(a).grad.array() +=
                    node(out).grad.array() * value(out).array() * (S(1) - value(out).array());
            };
        return out;
    }

    int exp_op(int a) {
        const Mat v = value(a).array().exp();
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out] {
                node(a).grad.array() += node(out).grad.array() * value(out).array();
            };
        return out;
    }

    int square(int a) {
        const Mat v = value(a).array().square();
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out] {
                node(a).grad.array() += S(2) * node(out).grad.array() * value(a).array();
            };
        return out;
    }

    int abs_op(int a) {
        const Mat v = value(a).cwiseAbs();
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out] {
                node(a).grad.array() +=
                    node(out).grad.array() *
                    value(a).unaryExpr([](S x) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); }).array();
            };
        return out;
    }

    /// sqrt(x + eps); eps > 0 keeps the derivative finite at x = 0.
    int sqrt_shift(int a, S eps) {
        const Mat v = (value(a).array() + eps).sqrt();
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out] {
                node(a).grad.array() += node(out).grad.array() * S(0.5) / value(out).array();
            };
        return out;
    }

    /// log(max(x, floor)); gradient is zero below the floor.
    int log_floor(int a, S floor) {
        const Mat v = value(a).unaryExpr([floor](S x) { return std::log(x > floor ? x : floor); });
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out, floor] {
                node(a).grad.array() +=
                    node(out).grad.array() *
                    value(a).unaryExpr([floor](S x) { return x > floor ? S(1) / x : S(0); }).array();
            };
        return out;
    }

    // ---- reductions -----------------------------------------------------

    int sum_all(int a) {
        Mat v(1, 1);
        v(0, 0) = value(a).sum();
        const int out = push(std::move(v), needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out] { node(a).grad.array() += node(out).grad(0, 0); };
        return out;
    }

    int mean_all(int a) {
        const S n = static_cast<S>(value(a).size());
        Mat v(1, 1);
        v(0, 0) = value(a).sum() / n;
        const int out = push(std::move(v), needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out, n] { node(a).grad.array() += node(out).grad(0, 0) / n; };
        return out;
    }

    // ---- linear algebra -------------------------------------------------

    int matmul(int a, int b, bool ta = false, bool tb = false) {
        const Mat& A = value(a);
        const Mat& B = value(b);
        const auto ar = ta ? A.cols() : A.rows();
        const auto ac = ta ? A.rows() : A.cols();
        const auto br = tb ? B.cols() : B.rows();
        if (ac != br) throw Error("matmul: inner dimensions disagree");
        Mat v(ar, tb ? B.rows() : B.cols());
        if (!ta && !tb) v.noalias() = A * B;
        else if (ta && !tb) v.noalias() = A.transpose() * B;
        else if (!ta && tb) v.noalias() = A * B.transpose();
        else v.noalias() = A.transpose() * B.transpose();
        const int out = push(std::move(v), needs_grad(a) || needs_grad(b));
        if (needs_grad(out))
            node(out).backward = [this, a, b, out, ta, tb] {
                const Mat& G = node(out).grad;
                if (needs_grad(a)) {
                    const Mat& Bv = value(b);
                    if (!ta && !tb) node(a).grad.noalias() += G * Bv.transpose();
                    else if (!ta && tb) node(a).grad.noalias() += G * Bv;
                    else if (ta && !tb) node(a).grad.noalias() += Bv * G.transpose();
                    else node(a).grad.noalias() += Bv.transpose() * G.transpose();
                }
                if (needs_grad(b)) {
                    const Mat& Av = value(a);
                    if (!ta && !tb) node(b).grad.noalias() += Av.transpose() * G;
                    else if (ta && !tb) node(b).grad.noalias() += Av * G;
                    else if (!ta && tb) node(b).grad.noalias() += G.transpose() * Av;
                    else node(b).grad.noalias() += G.transpose() * Av.transpose();
                }
            };
        return out;
    }

    // ---- shape ops ------------------------------------------------------

    int slice_rows(int a, int r0, int nrows) {
        if (r0 < 0 || nrows < 0 || r0 + nrows > rows(a)) throw Error("slice_rows: out of range");
        const Mat v = value(a).middleRows(r0, nrows);
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out, r0, nrows] {
                node(a).grad.middleRows(r0, nrows) += node(out).grad;
            };
        return out;
    }

    int slice_cols(int a, int c0, int ncols) {
        if (c0 < 0 || ncols < 0 || c0 + ncols > cols(a)) throw Error("slice_cols: out of range");
        const Mat v = value(a).middleCols(c0, ncols);
        const int out = push(v, needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out, c0, ncols] {
                node(a).grad.middleCols(c0, ncols) += node(out).grad;
            };
        return out;
    }

    int concat_cols(const std::vector<int>& parts) {
        if (parts.empty()) throw Error("concat_cols: empty");
        int total = 0;
        bool needs = false;
        for (int p : parts) {
            if (rows(p) != rows(parts[0])) throw Error("concat_cols: row mismatch");
            total += cols(p);
            needs = needs || needs_grad(p);
        }
        Mat v(rows(parts[0]), total);
        int off = 0;
        for (int p : parts) {
            v.middleCols(off, cols(p)) = value(p);
            off += cols(p);
        }
        const int out = push(std::move(v), needs);
        if (needs)
            node(out).backward = [this, parts, out] {
                int o = 0;
                for (int p : parts) {
                    if (needs_grad(p)) node(p).grad += node(out).grad.middleCols(o, cols(p));
                    o += cols(p);
                }
            };
        return out;
    }

    int concat_rows(const std::vector<int>& parts) {
        if (parts.empty()) throw Error("concat_rows: empty");
        int total = 0;
        bool needs = false;
        for (int p : parts) {
            if (cols(p) != cols(parts[0])) throw Error("concat_rows: col mismatch");
            total += rows(p);
            needs = needs || needs_grad(p);
        }
        Mat v(total, cols(parts[0]));
        int off = 0;
        for (int p : parts) {
            v.middleRows(off, rows(p)) = value(p);
            off += rows(p);
        }
        const int out = push(std::move(v), needs);
        if (needs)
            node(out).backward = [this, parts, out] {
                int o = 0;
                for (int p : parts) {
                    if (needs_grad(p)) node(p).grad += node(out).grad.middleRows(o, rows(p));
                    o += rows(p);
                }
            };
        return out;
    }

    int pad_rows(int a, int top, int bottom) {
        Mat v = Mat::Zero(rows(a) + top + bottom, cols(a));
        v.middleRows(top, rows(a)) = value(a);
        const int out = push(std::move(v), needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out, top] {
                node(a).grad += node(out).grad.middleRows(top, rows(a));
            };
        return out;
    }

    /// Repeat row i of a counts[i] times, in order (the length regulator).
    int repeat_rows(int a, const std::vector<int>& counts) {
        if (static_cast<int>(counts.size()) != rows(a)) throw Error("repeat_rows: counts length mismatch");
        int total = 0;
        for (int c : counts) {
            if (c < 1) throw ValidationError("repeat_rows: every count must be >= 1");
            total += c;
        }
        Mat v(total, cols(a));
        auto map = std::make_shared<std::vector<int>>();
        map->reserve(static_cast<std::size_t>(total));
        int r = 0;
        for (int i = 0; i < rows(a); ++i)
            for (int c = 0; c < counts[static_cast<std::size_t>(i)]; ++c, ++r) {
                v.row(r) = value(a).row(i);
                map->push_back(i);
            }
        const int out = push(std::move(v), needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out, map] {
                for (int rr = 0; rr < rows(out); ++rr)
                    node(a).grad.row((*map)[static_cast<std::size_t>(rr)]) += node(out).grad.row(rr);
            };
        return out;
    }

    /// Row lookup into an embedding table node.
    int gather_rows(int table, const std::vector<int>& ids) {
        Mat v(static_cast<int>(ids.size()), cols(table));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= rows(table)) throw ValidationError("gather_rows: id out of table");
            v.row(static_cast<int>(i)) = value(table).row(ids[i]);
        }
        const int out = push(std::move(v), needs_grad(table));
        if (needs_grad(out))
            node(out).backward = [this, table, out, ids] {
                for (std::size_t i = 0; i < ids.size(); ++i)
                    node(table).grad.row(ids[i]) += node(out).grad.row(static_cast<int>(i));
            };
        return out;
    }

    // ---- normalization / attention --------------------------------------

    int row_softmax(int a) {
        Mat v(rows(a), cols(a));
        for (int i = 0; i < rows(a); ++i) {
            const S m = value(a).row(i).maxCoeff();
            v.row(i) = (value(a).row(i).array() - m).exp();
            v.row(i) /= v.row(i).sum();
        }
        const int out = push(std::move(v), needs_grad(a));
        if (needs_grad(out))
            node(out).backward = [this, a, out] {
                for (int i = 0; i < rows(a); ++i) {
                    const S dot = node(out).grad.row(i).dot(value(out).row(i));
                    node(a).grad.row(i).array() +=
                        (node(out).grad.row(i).array() - dot) * value(out).row(i).array();
                }
            };
        return out;
    }

    /// Per-row layer norm over channels with affine gamma/beta (1 x C each).
    int layer_norm(int a, int gamma, int beta, S eps = S(1e-5)) {
        if (cols(gamma) != cols(a) || cols(beta) != cols(a) || rows(gamma) != 1 || rows(beta) != 1)
            throw Error("layer_norm: affine shape mismatch");
        const int C = cols(a);
        auto xhat = std::make_shared<Mat>(rows(a), C);
        auto inv_std = std::make_shared<Vec>(rows(a));
        Mat v(rows(a), C);
        for (int i = 0; i < rows(a); ++i) {
            const S mu = value(a).row(i).mean();
            const S var = (value(a).row(i).array() - mu).square().sum() / static_cast<S>(C);
            const S istd = S(1) / std::sqrt(var + eps);
            (*inv_std)(i) = istd;
            xhat->row(i) = (value(a).row(i).array() - mu) * istd;
            v.row(i) =
                (xhat->row(i).array() * value(gamma).row(0).array()) + value(beta).row(0).array();
        }
        const int out = push(std::move(v), needs_grad(a) || needs_grad(gamma) || needs_grad(beta));
        if (needs_grad(out))
            node(out).backward = [this, a, gamma, beta, out, xhat, inv_std, C] {
                const Mat& G = node(out).grad;
                if (needs_grad(gamma)) node(gamma).grad.row(0) += G.cwiseProduct(*xhat).colwise().sum();
                if (needs_grad(beta)) node(beta).grad.row(0) += G.colwise().sum();
                if (needs_grad(a)) {
                    for (int i = 0; i < rows(a); ++i) {
                        const auto dxhat = (G.row(i).array() * value(gamma).row(0).array()).eval();
                        const S mean_dx = dxhat.sum() / static_cast<S>(C);
                        const S mean_dx_xhat = (dxhat * xhat->row(i).array()).sum() / static_cast<S>(C);
                        node(a).grad.row(i).array() +=
                            (*inv_std)(i) * (dxhat - mean_dx - xhat->row(i).array() * mean_dx_xhat);
                    }
                }
            };
        return out;
    }

    // ---- convolutions ---------------------------------------------------

    /// 1-D convolution along rows via im2col. x: T x Cin, w: (k*Cin) x Cout.
    /// Output row i reads input positions i*stride - pad + j*dilation.
    int conv1d(int x, int w, int k, int cin, int stride, int dilation, int pad) {
        if (cols(x) != cin) throw Error("conv1d: cin mismatch");
        if (rows(w) != k * cin) throw Error("conv1d: weight rows must be k*cin");
        const int T = rows(x);
        const int eff = (k - 1) * dilation + 1;
        const int t_out = (T + 2 * pad - eff) / stride + 1;
        if (t_out < 1) throw Error("conv1d: input too short for kernel");
        auto cols_mat = std::make_shared<Mat>(Mat::Zero(t_out, k * cin));
        for (int i = 0; i < t_out; ++i)
            for (int j = 0; j < k; ++j) {
                const int pos = i * stride - pad + j * dilation;
                if (pos >= 0 && pos < T) cols_mat->block(i, j * cin, 1, cin) = value(x).row(pos);
            }
        Mat v;
        v.noalias() = (*cols_mat) * value(w);
        const int out = push(std::move(v), needs_grad(x) || needs_grad(w));
        if (needs_grad(out))
            node(out).backward = [this, x, w, out, cols_mat, k, cin, stride, dilation, pad, T, t_out] {
                const Mat& G = node(out).grad;
                if (needs_grad(w)) node(w).grad.noalias() += cols_mat->transpose() * G;
                if (needs_grad(x)) {
                    Mat gcols;
                    gcols.noalias() = G * value(w).transpose();
                    for (int i = 0; i < t_out; ++i)
                        for (int j = 0; j < k; ++j) {
                            const int pos = i * stride - pad + j * dilation;
                            if (pos >= 0 && pos < T) node(x).grad.row(pos) += gcols.block(i, j * cin, 1, cin);
                        }
                }
            };
        return out;
    }

    /// Transposed 1-D convolution. x: T x Cin, w: Cin x (k*Cout).
    /// Output length (T-1)*stride + k - 2*pad; with k = 2*stride and
    /// pad = stride/2 this is exactly T*stride.
    int conv_transpose1d(int x, int w, int k, int cout, int stride, int pad) {
        if (cols(w) != k * cout) throw Error("conv_transpose1d: weight cols must be k*cout");
        if (rows(w) != cols(x)) throw Error("conv_transpose1d: weight rows must be cin");
        const int T = rows(x);
        const int t_out = (T - 1) * stride + k - 2 * pad;
        if (t_out < 1) throw Error("conv_transpose1d: degenerate output");
        Mat z;
        z.noalias() = value(x) * value(w);  // T x (k*Cout)
        Mat v = Mat::Zero(t_out, cout);
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < k; ++j) {
                const int pos = t * stride - pad + j;
                if (pos >= 0 && pos < t_out) v.row(pos) += z.block(t, j * cout, 1, cout);
            }
        const int out = push(std::move(v), needs_grad(x) || needs_grad(w));
        if (needs_grad(out))
            node(out).backward = [this, x, w, out, k, cout, stride, pad, T, t_out] {
                const Mat& G = node(out).grad;
                Mat gz = Mat::Zero(T, k * cout);
                for (int t = 0; t < T; ++t)
                    for (int j = 0; j < k; ++j) {
                        const int pos = t * stride - pad + j;
                        if (pos >= 0 && pos < t_out) gz.block(t, j * cout, 1, cout) = G.row(pos);
                    }
                if (needs_grad(x)) node(x).grad.noalias() += gz * value(w).transpose();
                if (needs_grad(w)) node(w).grad.noalias() += value(x).transpose() * gz;
            };
        return out;
    }

    int avg_pool1d(int x, int k, int stride, int pad) {
        const int T = rows(x);
        const int t_out = (T + 2 * pad - k) / stride + 1;
        if (t_out < 1) throw Error("avg_pool1d: input too short");
        Mat v = Mat::Zero(t_out, cols(x));
        for (int i = 0; i < t_out; ++i)
            for (int j = 0; j < k; ++j) {
                const int pos = i * stride - pad + j;
                if (pos >= 0 && pos < T) v.row(i) += value(x).row(pos);
            }
        v /= static_cast<S>(k);
        const int out = push(std::move(v), needs_grad(x));
        if (needs_grad(out))
            node(out).backward = [this, x, out, k, stride, pad, T, t_out] {
                for (int i = 0; i < t_out; ++i)
                    for (int j = 0; j < k; ++j) {
                        const int pos = i * stride - pad + j;
                        if (pos >= 0 && pos < T)
                            node(x).grad.row(pos) += node(out).grad.row(i) / static_cast<S>(k);
                    }
            };
        return out;
    }

    /// Fold a T x 1 sequence into ceil(T/p) x p phase columns (zero padded).
    int phase_split(int x, int p) {
        if (cols(x) != 1) throw Error("phase_split: expects a single column");
        const int T = rows(x);
        const int t_out = (T + p - 1) / p;
        Mat v = Mat::Zero(t_out, p);
        for (int t = 0; t < T; ++t) v(t / p, t % p) = value(x)(t, 0);
        const int out = push(std::move(v), needs_grad(x));
        if (needs_grad(out))
            node(out).backward = [this, x, out, p, T] {
                for (int t = 0; t < T; ++t) node(x).grad(t, 0) += node(out).grad(t / p, t % p);
            };
        return out;
    }

    /// Frame a T x 1 signal into frames x fft_size windows centered at
    /// multiples of hop, reflect-padded to match the dsp front end.
    int frame_signal(int x, int fft_size, int hop, int n_frames) {
        if (cols(x) != 1) throw Error("frame_signal: expects a single column");
        const int T = rows(x);
        if (T < 2) throw Error("frame_signal: signal too short");
        auto idx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n_frames) * fft_size);
        Mat v(n_frames, fft_size);
        for (int t = 0; t < n_frames; ++t)
            for (int j = 0; j < fft_size; ++j) {
                std::int64_t pos = static_cast<std::int64_t>(t) * hop - fft_size / 2 + j;
                while (pos < 0 || pos >= T) {
                    if (pos < 0) pos = -pos;
                    if (pos >= T) pos = 2 * T - 2 - pos;
                }
                (*idx)[static_cast<std::size_t>(t) * fft_size + j] = static_cast<int>(pos);
                v(t, j) = value(x)(static_cast<int>(pos), 0);
            }
        const int out = push(std::move(v), needs_grad(x));
        if (needs_grad(out))
            node(out).backward = [this, x, out, idx, fft_size] {
                const int F = rows(out);
                for (int t = 0; t < F; ++t)
                    for (int j = 0; j < fft_size; ++j)
                        node(x).grad((*idx)[static_cast<std::size_t>(t) * fft_size + j], 0) +=
                            node(out).grad(t, j);
            };
        return out;
    }

    // ---- CTC -------------------------------------------------------------

    /// CTC negative log-likelihood of target under per-frame logits
    /// (T x classes). The blank is the last class. Gradient is the standard
    /// softmax-minus-occupancy form computed from the alpha/beta recursions.
    int ctc_loss(int logits, const std::vector<int>& target) {
        const int T = rows(logits);
        const int C = cols(logits);
        const int blank = C - 1;
        const int L = static_cast<int>(target.size());
        for (int s : target)
            if (s < 0 || s >= blank) throw ValidationError("ctc_loss: target symbol outside [0, blank)");
        int repeats = 0;
        for (int i = 1; i < L; ++i)
            if (target[static_cast<std::size_t>(i)] == target[static_cast<std::size_t>(i - 1)]) ++repeats;
        if (T < L + repeats)
            throw ValidationError("ctc_loss: " + std::to_string(T) + " frames cannot emit " +
                                  std::to_string(L) + " symbols with " + std::to_string(repeats) + " repeats");

        const int E = 2 * L + 1;  // extended label: blank-interleaved
        std::vector<int> ext(static_cast<std::size_t>(E), blank);
        for (int i = 0; i < L; ++i) ext[static_cast<std::size_t>(2 * i + 1)] = target[static_cast<std::size_t>(i)];

        const S kNegInf = -std::numeric_limits<S>::infinity();
        const auto lse = [kNegInf](S a, S b) {
            if (a == kNegInf) return b;
            if (b == kNegInf) return a;
            const S m = a > b ? a : b;
            return m + std::log(std::exp(a - m) + std::exp(b - m));
        };

        // log softmax
        auto lp = std::make_shared<Mat>(rows(logits), C);
        for (int t = 0; t < T; ++t) {
            const S m = value(logits).row(t).maxCoeff();
            const S lz = std::log((value(logits).row(t).array() - m).exp().sum()) + m;
            lp->row(t) = value(logits).row(t).array() - lz;
        }

        auto alpha = std::make_shared<Mat>(Mat::Constant(T, E, kNegInf));
        (*alpha)(0, 0) = (*lp)(0, blank);
        if (E > 1) (*alpha)(0, 1) = (*lp)(0, ext[1]);
        for (int t = 1; t < T; ++t)
            for (int s = 0; s < E; ++s) {
                S acc = (*alpha)(t - 1, s);
                if (s >= 1) acc = lse(acc, (*alpha)(t - 1, s - 1));
                if (s >= 2 && ext[static_cast<std::size_t>(s)] != blank &&
                    ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)])
                    acc = lse(acc, (*alpha)(t - 1, s - 2));
                (*alpha)(t, s) = acc == kNegInf ? kNegInf : acc + (*lp)(t, ext[static_cast<std::size_t>(s)]);
            }
        S log_z = (*alpha)(T - 1, E - 1);
        if (E > 1) log_z = lse(log_z, (*alpha)(T - 1, E - 2));
        if (!(log_z > kNegInf)) throw ValidationError("ctc_loss: no feasible alignment");

        Mat v(1, 1);
        v(0, 0) = -log_z;
        const int out = push(std::move(v), needs_grad(logits));
        if (needs_grad(out))
            node(out).backward = [this, logits, out, lp, alpha, ext, E, blank, lse, kNegInf, log_z] {
                const int Tn = rows(logits);
                const int Cn = cols(logits);
                Mat beta = Mat::Constant(Tn, E, kNegInf);
                beta(Tn - 1, E - 1) = (*lp)(Tn - 1, blank);
                if (E > 1) beta(Tn - 1, E - 2) = (*lp)(Tn - 1, ext[static_cast<std::size_t>(E - 2)]);
                for (int t = Tn - 2; t >= 0; --t)
                    for (int s = E - 1; s >= 0; --s) {
                        S acc = beta(t + 1, s);
                        if (s + 1 < E) acc = lse(acc, beta(t + 1, s + 1));
                        if (s + 2 < E && ext[static_cast<std::size_t>(s + 2)] != blank &&
                            ext[static_cast<std::size_t>(s + 2)] != ext[static_cast<std::size_t>(s)])
                            acc = lse(acc, beta(t + 1, s + 2));
                        beta(t, s) = acc == kNegInf ? kNegInf : acc + (*lp)(t, ext[static_cast<std::size_t>(s)]);
                    }
                // occupancy gamma(t, k) summed over extended states of class k
                Mat gamma = Mat::Zero(Tn, Cn);
                for (int t = 0; t < Tn; ++t) {
                    Eigen::Matrix<S, Eigen::Dynamic, 1> acc =
                        Eigen::Matrix<S, Eigen::Dynamic, 1>::Constant(Cn, kNegInf);
                    for (int s = 0; s < E; ++s) {
                        const S a = (*alpha)(t, s);
                        const S b = beta(t, s);
                        if (a == kNegInf || b == kNegInf) continue;
                        const int k = ext[static_cast<std::size_t>(s)];
                        acc(k) = lse(acc(k), a + b - (*lp)(t, k));
                    }
                    for (int k = 0; k < Cn; ++k)
                        if (acc(k) != kNegInf) gamma(t, k) = std::exp(acc(k) - log_z);
                }
                const S g = node(out).grad(0, 0);
                node(logits).grad.array() += g * (lp->array().exp() - gamma.array());
            };
        return out;
    }

    // ---- backward --------------------------------------------------------

    void backward(int loss) {
        if (rows(loss) != 1 || cols(loss) != 1) throw Error("backward: loss must be a scalar node");
        if (!needs_grad(loss)) return;
        node(loss).grad(0, 0) = S(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = node(i);
            if (n.needs_grad && n.backward) n.backward();
        }
    }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool needs_grad = false;
        std::function<void()> backward;
    };

    std::vector<Node> nodes_;

    Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }

    int push(Mat v, bool needs) {
        nodes_.push_back(Node{std::move(v), {}, needs, {}});
        Node& n = nodes_.back();
        if (needs) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        return static_cast<int>(nodes_.size()) - 1;
    }

    void check_same_shape(int a, int b, const char* op) const {
        if (rows(a) != rows(b) || cols(a) != cols(b))
            throw Error(std::string(op) + ": shape mismatch " + std::to_string(rows(a)) + "x" +
                        std::to_string(cols(a)) + " vs " + std::to_string(rows(b)) + "x" +
                        std::to_string(cols(b)));
    }
};

}  // namespace aria
