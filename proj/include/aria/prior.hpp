#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aria/autograd.hpp"
#include "aria/config.hpp"
#include "aria/error.hpp"
#include "aria/nn.hpp"
#include "aria/score.hpp"

namespace aria {

/// Map a note duration (frames) to a coarse log-spaced embedding bucket.
inline int duration_bucket(int note_frames, int buckets) {
    if (note_frames < 1) throw ValidationError("duration_bucket: note duration must be >= 1 frame");
    const int b = static_cast<int>(std::floor(4.0 * std::log2(static_cast<double>(note_frames))));
    return std::min(buckets - 1, std::max(0, b));
}

/// Per-phoneme score encoder: concatenated phoneme / pitch / note-duration
/// embeddings, mixed down to the hidden width and run through a
/// self-attention + conv stack.
template <typename S>
struct TextEncoder {
    Embedding<S> phoneme_emb;
    Embedding<S> pitch_emb;
    Embedding<S> dur_emb;
    Linear<S> input_proj;
    FFTStack<S> blocks;
    int dur_buckets;

    TextEncoder(ParamStore<S>& ps, const std::string& name, const ArchConfig& a)
        : phoneme_emb(ps, name + ".phoneme_emb", a.inventory_size(), a.emb_phoneme),
          pitch_emb(ps, name + ".pitch_emb", a.pitch_range, a.emb_pitch),
          dur_emb(ps, name + ".dur_emb", a.dur_buckets, a.emb_dur),
          input_proj(ps, name + ".input_proj", a.emb_phoneme + a.emb_pitch + a.emb_dur, a.hidden),
          blocks(ps, name + ".blocks", a.text_blocks, a.hidden, a.heads, a.ffn_hidden),
          dur_buckets(a.dur_buckets) {}

    /// Returns an N_ph x hidden node. Throws ValidationError on out-of-range IDs.
    int forward(Graph<S>& g, const MusicScore& score) const {
        std::vector<int> buckets(score.size());
        for (std::size_t i = 0; i < score.size(); ++i)
            buckets[i] = duration_bucket(score.note_dur[i], dur_buckets);
        const int e = g.concat_cols({phoneme_emb.forward(g, score.phonemes),
                                     pitch_emb.forward(g, score.note_pitch),
                                     dur_emb.forward(g, buckets)});
        return blocks.forward(g, input_proj.forward(g, e));
    }
};

/// Three-layer 1-D conv stack emitting one unconstrained scalar per phoneme.
/// The zero-initialized head makes the initial prediction exactly zero.
template <typename S>
struct DurationPredictor {
    Conv1d<S> conv1;
    LayerNorm<S> ln1;
    Conv1d<S> conv2;
    LayerNorm<S> ln2;
    Conv1d<S> head;

    DurationPredictor(ParamStore<S>& ps, const std::string& name, const ArchConfig& a)
        : conv1(ps, name + ".conv1", 3, a.hidden, a.hidden),
          ln1(ps, name + ".ln1", a.hidden),
          conv2(ps, name + ".conv2", 3, a.hidden, a.hidden),
          ln2(ps, name + ".ln2", a.hidden),
          head(ps, name + ".head", 1, a.hidden, 1, 1, 1, -1, /*zero_init=*/true) {}

    /// Returns an N_ph x 1 node of regression outputs.
    int forward(Graph<S>& g, int h_ph) const {
        int x = ln1.forward(g, g.relu(conv1.forward(g, h_ph)));
        x = ln2.forward(g, g.relu(conv2.forward(g, x)));
        return head.forward(g, x);
    }
};

/// Integer frame counts from the duration regression. With note normalization
/// the network predicts the ratio r and the duration is r x d_N; without it
/// the network predicts the frame count directly. Either way the result is
/// clamped to at least one frame so the length regulator stays valid.
inline std::vector<int> predicted_duration(const std::vector<double>& r,
                                           const std::vector<int>& note_dur,
                                           bool note_normalized = true) {
    if (r.size() != note_dur.size())
        throw ValidationError("predicted_duration: ratio/note length mismatch");
    std::vector<int> out(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (note_dur[i] < 1) throw ValidationError("predicted_duration: note duration must be >= 1");
        const double clamped = std::max(0.0, r[i]);
        const double frames = note_normalized ? clamped * note_dur[i] : clamped;
        out[i] = std::max(1, static_cast<int>(std::llround(frames)));
    }
    return out;
}

/// L2 norm over the phoneme axis of (r x d_N - d), or (r - d) when note
/// normalization is disabled. The 1e-12 shift keeps the sqrt differentiable;
/// it floors the perfect-prediction value at 1e-6.
template <typename S>
int duration_loss(Graph<S>& g, int r, const std::vector<int>& note_dur,
                  const std::vector<int>& gt_dur, bool note_normalized = true) {
    const int n = g.rows(r);
    if (g.cols(r) != 1) throw ValidationError("duration_loss: regression output must be N x 1");
    if (static_cast<int>(note_dur.size()) != n || static_cast<int>(gt_dur.size()) != n)
        throw ValidationError("duration_loss: sequence length mismatch");
    typename Graph<S>::Mat scale(n, 1), target(n, 1);
    for (int i = 0; i < n; ++i) {
        scale(i, 0) = note_normalized ? static_cast<S>(note_dur[static_cast<std::size_t>(i)]) : S(1);
        target(i, 0) = static_cast<S>(gt_dur[static_cast<std::size_t>(i)]);
    }
    const int diff = g.sub(g.mul(r, g.constant(std::move(scale))), g.constant(std::move(target)));
    return g.sqrt_shift(g.sum_all(g.square(diff)), S(1e-12));
}

/// Expand per-phoneme rows to frame level by repeating row i dur[i] times.
template <typename S>
int length_regulator(Graph<S>& g, int h_ph, const std::vector<int>& dur) {
    if (static_cast<int>(dur.size()) != g.rows(h_ph))
        throw ValidationError("length_regulator: duration length mismatch");
    for (int d : dur)
        if (d < 1) throw ValidationError("length_regulator: durations must be >= 1 frame");
    return g.repeat_rows(h_ph, dur);
}

/// Frame-level LF0 regressor: attention stack plus a zero-initialized linear
/// head, so the untrained prediction is the all-zero contour.
template <typename S>
struct F0Predictor {
    FFTStack<S> blocks;
    Linear<S> head;

    F0Predictor(ParamStore<S>& ps, const std::string& name, const ArchConfig& a)
        : blocks(ps, name + ".blocks", a.f0_blocks, a.hidden, a.heads, a.ffn_hidden),
          head(ps, name + ".head", a.hidden, 1, /*bias=*/true, /*stddev=*/0.0) {}

    /// Returns a frames x 1 node of predicted LF0.
    int forward(Graph<S>& g, int h_text) const { return head.forward(g, blocks.forward(g, h_text)); }
};

/// L2 norm of the per-frame LF0 difference (same sqrt shift as duration_loss).
template <typename S>
int lf0_loss(Graph<S>& g, int pred_lf0, int gt_lf0) {
    if (g.rows(pred_lf0) != g.rows(gt_lf0) || g.cols(pred_lf0) != 1 || g.cols(gt_lf0) != 1)
        throw ValidationError("lf0_loss: contours must be equal-length column vectors");
    return g.sqrt_shift(g.sum_all(g.square(g.sub(pred_lf0, gt_lf0))), S(1e-12));
}

/// Frame prior network: LF0 guidance is added to the frame-level hidden
/// sequence through a learned projection, then either an attention stack or a
/// plain conv stack (config switch) refines it before the Gaussian projection.
/// With use_lf0 disabled (F0-predictor ablation) the guidance path is absent.
template <typename S>
struct FramePriorNetwork {
    std::optional<Linear<S>> lf0_proj;
    std::vector<FFTBlock<S>> fft_blocks;
    std::vector<Conv1d<S>> conv_blocks;
    std::vector<LayerNorm<S>> conv_norms;
    Linear<S> gaussian_proj;
    int dim;
    int latent_dim;
    bool use_conv;

    FramePriorNetwork(ParamStore<S>& ps, const std::string& name, const ArchConfig& a,
                      bool use_lf0 = true)
        : gaussian_proj(ps, name + ".gaussian_proj", a.hidden, 2 * a.latent_dim, true,
                        /*stddev=*/0.0),
          dim(a.hidden),
          latent_dim(a.latent_dim),
          use_conv(a.frame_prior_conv) {
        if (use_lf0) lf0_proj.emplace(ps, name + ".lf0_proj", 1, a.hidden);
        for (int i = 0; i < a.frame_prior_blocks; ++i) {
            const std::string bn = name + ".block" + std::to_string(i);
            if (use_conv) {
                conv_blocks.emplace_back(ps, bn + ".conv", 3, a.hidden, a.hidden);
                conv_norms.emplace_back(ps, bn + ".ln", a.hidden);
            } else {
                fft_blocks.emplace_back(ps, bn, a.hidden, a.heads, a.ffn_hidden);
            }
        }
    }

    /// Returns (mu, log_sigma) nodes, each frames x latent_dim. lf0 may be -1
    /// only when the guidance path was disabled at construction.
    std::pair<int, int> forward(Graph<S>& g, int h_text, int lf0) const {
        int x = h_text;
        if (lf0_proj) {
            if (lf0 < 0 || g.rows(lf0) != g.rows(h_text) || g.cols(lf0) != 1)
                throw ValidationError("frame_prior_network: LF0 must be frames x 1");
            x = g.add(h_text, lf0_proj->forward(g, lf0));
        } else if (lf0 >= 0) {
            throw ValidationError("frame_prior_network: LF0 supplied but guidance is disabled");
        }
        if (use_conv) {
            for (std::size_t i = 0; i < conv_blocks.size(); ++i)
                x = conv_norms[i].forward(g, g.add(x, g.relu(conv_blocks[i].forward(g, x))));
        } else {
            x = g.add(x, g.constant(sinusoidal_pe<S>(g.rows(x), dim)));
            for (const auto& b : fft_blocks) x = b.forward(g, x);
        }
        const int proj = gaussian_proj.forward(g, x);
        return {g.slice_cols(proj, 0, latent_dim), g.slice_cols(proj, latent_dim, latent_dim)};
    }
};

/// One affine coupling layer: the conditioning half passes through untouched,
/// the other half is scaled and shifted by a conv subnetwork of the
/// conditioning half. The zero-initialized subnet head makes the layer an
/// exact identity at initialization.
template <typename S>
struct CouplingLayer {
    Conv1d<S> conv1;
    Conv1d<S> conv2;
    Conv1d<S> head;
    int half;
    bool flip;

    CouplingLayer(ParamStore<S>& ps, const std::string& name, int latent_dim, int hidden, bool flip_)
        : conv1(ps, name + ".conv1", 3, latent_dim / 2, hidden),
          conv2(ps, name + ".conv2", 3, hidden, hidden),
          head(ps, name + ".head", 1, hidden, latent_dim, 1, 1, -1, /*zero_init=*/true),
          half(latent_dim / 2),
          flip(flip_) {}

    std::pair<int, int> split(Graph<S>& g, int z) const {
        const int a = g.slice_cols(z, 0, half);
        const int b = g.slice_cols(z, half, half);
        return flip ? std::pair{b, a} : std::pair{a, b};
    }

    int join(Graph<S>& g, int keep, int transformed) const {
        return flip ? g.concat_cols({transformed, keep}) : g.concat_cols({keep, transformed});
    }

    /// (log_scale, shift) from the conditioning half.
    std::pair<int, int> subnet(Graph<S>& g, int keep) const {
        const int h = head.forward(g, g.relu(conv2.forward(g, g.relu(conv1.forward(g, keep)))));
        return {g.slice_cols(h, 0, half), g.slice_cols(h, half, half)};
    }

    /// Forward pass; accumulates the log-determinant node into logdet (or
    /// creates it when logdet < 0).
    int forward(Graph<S>& g, int z, int& logdet) const {
        const auto [keep, rest] = split(g, z);
        const auto [log_s, t] = subnet(g, keep);
        const int u = g.add(g.mul(rest, g.exp_op(log_s)), t);
        const int contrib = g.sum_all(log_s);
        logdet = logdet < 0 ? contrib : g.add(logdet, contrib);
        return join(g, keep, u);
    }

    int inverse(Graph<S>& g, int u) const {
        const auto [keep, rest] = split(g, u);
        const auto [log_s, t] = subnet(g, keep);
        const int z = g.mul(g.sub(rest, t), g.exp_op(g.scale(log_s, S(-1))));
        return join(g, keep, z);
    }
};

/// Stack of affine coupling layers with alternating splits. Unconditioned on
/// the score (single-singer setting).
template <typename S>
struct Flow {
    std::vector<CouplingLayer<S>> layers;
    int latent_dim;

    Flow(ParamStore<S>& ps, const std::string& name, const ArchConfig& a) : latent_dim(a.latent_dim) {
        if (a.latent_dim % 2 != 0) throw ConfigError("flow: latent dim must be even");
        layers.reserve(static_cast<std::size_t>(a.flow_depth));
        for (int i = 0; i < a.flow_depth; ++i)
            layers.emplace_back(ps, name + ".layer" + std::to_string(i), a.latent_dim, a.flow_hidden,
                                /*flip=*/i % 2 == 1);
    }

    /// Returns (f(z), logdet) where logdet is a 1x1 node (0 for an empty stack).
    std::pair<int, int> forward(Graph<S>& g, int z) const {
        if (g.cols(z) != latent_dim) throw ValidationError("flow: latent width mismatch");
        int logdet = -1;
        for (const auto& l : layers) z = l.forward(g, z, logdet);
        if (logdet < 0) logdet = g.constant_scalar(S(0));
        return {z, logdet};
    }

    int inverse(Graph<S>& g, int u) const {
        if (g.cols(u) != latent_dim) throw ValidationError("flow: latent width mismatch");
        for (auto it = layers.rbegin(); it != layers.rend(); ++it) u = it->inverse(g, u);
        return u;
    }
};

/// Frame-level phoneme classifier over the latent sequence; the extra output
/// class is the CTC blank.
template <typename S>
struct PhonemePredictor {
    Linear<S> input_proj;
    FFTStack<S> blocks;
    Linear<S> head;

    PhonemePredictor(ParamStore<S>& ps, const std::string& name, const ArchConfig& a)
        : input_proj(ps, name + ".input_proj", a.latent_dim, a.hidden),
          blocks(ps, name + ".blocks", a.phoneme_pred_blocks, a.hidden, a.heads, a.ffn_hidden),
          head(ps, name + ".head", a.hidden, a.ctc_classes()) {}

    /// Returns frames x (inventory + blank) logits.
    int forward(Graph<S>& g, int z) const {
        return head.forward(g, blocks.forward(g, input_proj.forward(g, z)));
    }
};

}  // namespace aria
