#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "aria/autograd.hpp"
#include "aria/error.hpp"
#include "aria/rng.hpp"

namespace aria {

/// Owns parameters with stable addresses and a deterministic creation order
/// (the order is the checkpoint serialization order).
template <typename S>
class ParamStore {
public:
    using Mat = typename Param<S>::Mat;

    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    /// stddev > 0 draws N(0, stddev); stddev == 0 zero-initializes.
    Param<S>& create(const std::string& name, int rows, int cols, double stddev) {
        if (by_name_.count(name)) throw Error("param '" + name + "' created twice");
        params_.push_back(Param<S>{});
        Param<S>& p = params_.back();
        p.name = name;
        p.value.resize(rows, cols);
        if (stddev > 0.0)
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) p.value(i, j) = static_cast<S>(rng_.normal(0.0, stddev));
        else
            p.value.setZero();
        p.m = Mat::Zero(rows, cols);
        p.v = Mat::Zero(rows, cols);
        ordered_.push_back(&p);
        by_name_[name] = &p;
        return p;
    }

    Param<S>& ones(const std::string& name, int rows, int cols) {
        Param<S>& p = create(name, rows, cols, 0.0);
        p.value.setOnes();
        return p;
    }

    Param<S>* find(const std::string& name) {
        const auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    const std::vector<Param<S>*>& all() const { return ordered_; }

    void zero_grad() {
        for (Param<S>* p : ordered_) p->grad = Mat::Zero(p->value.rows(), p->value.cols());
    }

    void set_requires_grad(bool v) {
        for (Param<S>* p : ordered_) p->requires_grad = v;
    }

    /// Toggle only parameters whose name starts with the given prefix.
    void set_requires_grad(bool v, const std::string& prefix) {
        for (Param<S>* p : ordered_)
            if (p->name.rfind(prefix, 0) == 0) p->requires_grad = v;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const Param<S>* p : ordered_) n += p->value.size();
        return n;
    }

private:
    Rng rng_;
    std::deque<Param<S>> params_;
    std::vector<Param<S>*> ordered_;
    std::unordered_map<std::string, Param<S>*> by_name_;
};

/// Adam with bias correction; step count is checkpointed for exact resume.
template <typename S>
struct Adam {
    double lr = 2e-4;
    double beta1 = 0.8;
    double beta2 = 0.99;
    double eps = 1e-9;
    std::int64_t t = 0;

    void step(ParamStore<S>& store, double lr_scale = 1.0) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        const double a = lr * lr_scale;
        for (Param<S>* p : store.all()) {
            if (!p->requires_grad || p->grad.size() == 0) continue;
            p->m = static_cast<S>(beta1) * p->m + static_cast<S>(1.0 - beta1) * p->grad;
            p->v = static_cast<S>(beta2) * p->v.array().matrix() +
                   static_cast<S>(1.0 - beta2) * p->grad.cwiseProduct(p->grad);
            p->value.array() -= static_cast<S>(a) * (p->m.array() / bc1) /
                                ((p->v.array() / bc2).sqrt() + static_cast<S>(eps));
        }
    }
};

// ---- layers --------------------------------------------------------------

template <typename S>
struct Linear {
    Param<S>* W = nullptr;
    Param<S>* b = nullptr;

    Linear() = default;
    Linear(ParamStore<S>& ps, const std::string& name, int in, int out, bool bias = true,
           double stddev = -1.0) {
        if (stddev < 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
        W = &ps.create(name + ".W", in, out, stddev);
        if (bias) b = &ps.create(name + ".b", 1, out, 0.0);
    }

    int forward(Graph<S>& g, int x) const {
        int y = g.matmul(x, g.param(*W));
        if (b) y = g.add_rowvec(y, g.param(*b));
        return y;
    }
};

template <typename S>
struct Embedding {
    Param<S>* table = nullptr;

    Embedding() = default;
    Embedding(ParamStore<S>& ps, const std::string& name, int vocab, int dim) {
        table = &ps.create(name + ".emb", vocab, dim, 1.0 / std::sqrt(static_cast<double>(dim)));
    }

    int forward(Graph<S>& g, const std::vector<int>& ids) const {
        return g.gather_rows(g.param(*table), ids);
    }
};

template <typename S>
struct LayerNorm {
    Param<S>* gamma = nullptr;
    Param<S>* beta = nullptr;

    LayerNorm() = default;
    LayerNorm(ParamStore<S>& ps, const std::string& name, int dim) {
        gamma = &ps.ones(name + ".g", 1, dim);
        beta = &ps.create(name + ".b", 1, dim, 0.0);
    }

    int forward(Graph<S>& g, int x) const { return g.layer_norm(x, g.param(*gamma), g.param(*beta)); }
};

template <typename S>
struct Conv1d {
    Param<S>* W = nullptr;
    Param<S>* b = nullptr;
    int k = 1, cin = 1, cout = 1, stride = 1, dilation = 1, pad = 0;

    Conv1d() = default;
    /// pad < 0 selects "same" padding for stride 1.
    Conv1d(ParamStore<S>& ps, const std::string& name, int k_, int cin_, int cout_, int stride_ = 1,
           int dilation_ = 1, int pad_ = -1, bool zero_init = false)
        : k(k_), cin(cin_), cout(cout_), stride(stride_), dilation(dilation_), pad(pad_) {
        if (pad < 0) pad = (k - 1) * dilation / 2;
        const double stddev = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(k * cin));
        W = &ps.create(name + ".W", k * cin, cout, stddev);
        b = &ps.create(name + ".b", 1, cout, 0.0);
    }

    int forward(Graph<S>& g, int x) const {
        const int y = g.conv1d(x, g.param(*W), k, cin, stride, dilation, pad);
        return g.add_rowvec(y, g.param(*b));
    }
};

template <typename S>
struct ConvTranspose1d {
    Param<S>* W = nullptr;
    Param<S>* b = nullptr;
    int k = 1, cin = 1, cout = 1, stride = 1, pad = 0;

    ConvTranspose1d() = default;
    ConvTranspose1d(ParamStore<S>& ps, const std::string& name, int k_, int cin_, int cout_, int stride_,
                    int pad_)
        : k(k_), cin(cin_), cout(cout_), stride(stride_), pad(pad_) {
        W = &ps.create(name + ".W", cin, k * cout, 1.0 / std::sqrt(static_cast<double>(k * cin)));
        b = &ps.create(name + ".b", 1, cout, 0.0);
    }

    int forward(Graph<S>& g, int x) const {
        const int y = g.conv_transpose1d(x, g.param(*W), k, cout, stride, pad);
        return g.add_rowvec(y, g.param(*b));
    }
};

/// Fixed sinusoidal positional encoding, rows x dim.
template <typename S>
typename Graph<S>::Mat sinusoidal_pe(int rows, int dim) {
    typename Graph<S>::Mat pe(rows, dim);
    for (int t = 0; t < rows; ++t)
        for (int i = 0; i < dim; ++i) {
            const double angle = t / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(dim));
            pe(t, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

template <typename S>
struct MultiHeadAttention {
    Linear<S> wq, wk, wv, wo;
    int heads = 1, dim = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<S>& ps, const std::string& name, int dim_, int heads_)
        : wq(ps, name + ".q", dim_, dim_), wk(ps, name + ".k", dim_, dim_), wv(ps, name + ".v", dim_, dim_),
          wo(ps, name + ".o", dim_, dim_), heads(heads_), dim(dim_) {
        if (dim_ % heads_ != 0) throw ConfigError("attention: heads must divide dim");
    }

    int forward(Graph<S>& g, int x) const {
        const int q = wq.forward(g, x);
        const int k = wk.forward(g, x);
        const int v = wv.forward(g, x);
        const int dh = dim / heads;
        std::vector<int> parts;
        parts.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            const int qh = g.slice_cols(q, h * dh, dh);
            const int kh = g.slice_cols(k, h * dh, dh);
            const int vh = g.slice_cols(v, h * dh, dh);
            const int scores = g.scale(g.matmul(qh, kh, false, true),
                                       static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
            parts.push_back(g.matmul(g.row_softmax(scores), vh));
        }
        return wo.forward(g, g.concat_cols(parts));
    }
};

/// Feed-forward Transformer block: self-attention and a k3 conv feed-forward,
/// each with a residual connection and post layer norm.
template <typename S>
struct FFTBlock {
    MultiHeadAttention<S> attn;
    Conv1d<S> conv1, conv2;
    LayerNorm<S> ln1, ln2;

    FFTBlock() = default;
    FFTBlock(ParamStore<S>& ps, const std::string& name, int dim, int heads, int ffn_hidden)
        : attn(ps, name + ".attn", dim, heads),
          conv1(ps, name + ".ffn1", 3, dim, ffn_hidden),
          conv2(ps, name + ".ffn2", 3, ffn_hidden, dim),
          ln1(ps, name + ".ln1", dim),
          ln2(ps, name + ".ln2", dim) {}

    int forward(Graph<S>& g, int x) const {
        x = ln1.forward(g, g.add(x, attn.forward(g, x)));
        const int h = conv2.forward(g, g.relu(conv1.forward(g, x)));
        return ln2.forward(g, g.add(x, h));
    }
};

/// A positional-encoded stack of FFT blocks.
template <typename S>
struct FFTStack {
    std::vector<FFTBlock<S>> blocks;
    int dim = 1;

    FFTStack() = default;
    FFTStack(ParamStore<S>& ps, const std::string& name, int n_blocks, int dim_, int heads, int ffn_hidden)
        : dim(dim_) {
        for (int i = 0; i < n_blocks; ++i)
            blocks.emplace_back(ps, name + ".block" + std::to_string(i), dim_, heads, ffn_hidden);
    }

    int forward(Graph<S>& g, int x) const {
        x = g.add(x, g.constant(sinusoidal_pe<S>(g.rows(x), dim)));
        for (const FFTBlock<S>& b : blocks) x = b.forward(g, x);
        return x;
    }
};

}  // namespace aria
