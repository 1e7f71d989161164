#pragma once

#include <string>
#include <utility>
#include <vector>

#include "aria/autograd.hpp"
#include "aria/config.hpp"
#include "aria/dsp.hpp"
#include "aria/error.hpp"
#include "aria/nn.hpp"

namespace aria {

/// Frame window into a latent sequence.
struct SliceWindow {
    int start = 0;
    int length = 0;
};

/// Node handles for one posterior draw; the caller supplies the noise node,
/// so tests can verify z == mu + sigma * noise exactly.
struct LatentNodes {
    int z = -1;
    int mu = -1;
    int log_sigma = -1;
};

/// Gated dilated-conv residual encoder over linear spectrogram frames,
/// projecting to the posterior mean and log-scale.
template <typename S>
struct PosteriorEncoder {
    Conv1d<S> pre;
    std::vector<Conv1d<S>> gate_convs;
    std::vector<Conv1d<S>> res_projs;
    Conv1d<S> out_proj;
    int channels;
    int latent_dim;

    PosteriorEncoder(ParamStore<S>& ps, const std::string& name, int spec_bins, const ArchConfig& a)
        : pre(ps, name + ".pre", a.posterior_kernel, spec_bins, a.posterior_channels),
          out_proj(ps, name + ".out_proj", 1, a.posterior_channels, 2 * a.latent_dim, 1, 1, -1,
                   /*zero_init=*/true),
          channels(a.posterior_channels),
          latent_dim(a.latent_dim) {
        for (int i = 0; i < a.posterior_layers; ++i) {
            const std::string ln = name + ".layer" + std::to_string(i);
            gate_convs.emplace_back(ps, ln + ".gate", a.posterior_kernel, a.posterior_channels,
                                    2 * a.posterior_channels, 1, 1 << i);
            res_projs.emplace_back(ps, ln + ".res", 1, a.posterior_channels, a.posterior_channels);
        }
    }

    /// spec: frames x bins node of linear magnitudes; noise: frames x
    /// latent_dim node (constant). Magnitudes are log-compressed before the
    /// conv stack so activations stay O(1) regardless of signal level.
    LatentNodes forward(Graph<S>& g, int spec, int noise) const {
        int x = pre.forward(g, g.log_floor(spec, S(kMelLogFloor)));
        for (std::size_t i = 0; i < gate_convs.size(); ++i) {
            const int h = gate_convs[i].forward(g, x);
            const int gated = g.mul(g.tanh_op(g.slice_cols(h, 0, channels)),
                                    g.sigmoid(g.slice_cols(h, channels, channels)));
            x = g.add(x, res_projs[i].forward(g, gated));
        }
        const int proj = out_proj.forward(g, x);
        LatentNodes out;
        out.mu = g.slice_cols(proj, 0, latent_dim);
        out.log_sigma = g.slice_cols(proj, latent_dim, latent_dim);
        if (g.rows(noise) != g.rows(out.mu) || g.cols(noise) != latent_dim)
            throw ValidationError("posterior_encode: noise shape must match frames x latent_dim");
        out.z = g.add(out.mu, g.mul(g.exp_op(out.log_sigma), noise));
        return out;
    }
};

/// Result of slicing a latent sequence: the sliced node plus the audio sample
/// interval [sample_begin, sample_end) that the decoded slice must align with.
struct SlicedLatent {
    int z_slice = -1;
    long sample_begin = 0;
    long sample_end = 0;
};

template <typename S>
SlicedLatent slice_latent(Graph<S>& g, int z, const SliceWindow& w, int hop_size) {
    if (w.start < 0 || w.length < 1 || w.start + w.length > g.rows(z))
        throw ValidationError("slice_latent: window outside the latent sequence");
    if (hop_size < 1) throw ValidationError("slice_latent: hop must be positive");
    SlicedLatent out;
    out.z_slice = g.slice_rows(z, w.start, w.length);
    out.sample_begin = static_cast<long>(w.start) * hop_size;
    out.sample_end = static_cast<long>(w.start + w.length) * hop_size;
    return out;
}

/// HiFiGAN-style residual block: two convs per dilation, first dilated.
template <typename S>
struct ResBlock {
    std::vector<Conv1d<S>> convs1;
    std::vector<Conv1d<S>> convs2;

    ResBlock(ParamStore<S>& ps, const std::string& name, int channels, int kernel,
             const std::vector<int>& dilations) {
        for (std::size_t i = 0; i < dilations.size(); ++i) {
            const std::string dn = name + ".d" + std::to_string(i);
            convs1.emplace_back(ps, dn + ".conv1", kernel, channels, channels, 1, dilations[i]);
            convs2.emplace_back(ps, dn + ".conv2", kernel, channels, channels, 1, 1);
        }
    }

    int forward(Graph<S>& g, int x) const {
        for (std::size_t i = 0; i < convs1.size(); ++i) {
            const int h = convs2[i].forward(g, g.leaky_relu(convs1[i].forward(g, g.leaky_relu(x, S(0.1))), S(0.1)));
            x = g.add(x, h);
        }
        return x;
    }
};

/// Transposed-conv upsampling decoder from latent frames to waveform samples.
/// The upsample rates multiply to the hop size, so output length is exactly
/// frames x hop; tanh bounds the output to (-1, 1).
template <typename S>
struct Generator {
    Conv1d<S> pre;
    std::vector<ConvTranspose1d<S>> ups;
    std::vector<std::vector<ResBlock<S>>> resblocks;  // [stage][kernel]
    Conv1d<S> post;
    int hop = 1;

    Generator(ParamStore<S>& ps, const std::string& name, const ArchConfig& a)
        : pre(ps, name + ".pre", 7, a.latent_dim, a.gen_channels),
          post(ps, name + ".post", 7, channels_after(a), 1) {
        int ch = a.gen_channels;
        for (std::size_t s = 0; s < a.upsample_rates.size(); ++s) {
            const int r = a.upsample_rates[s];
            if (r % 2 != 0) throw ConfigError("generator: upsample rates must be even");
            const std::string sn = name + ".up" + std::to_string(s);
            ups.emplace_back(ps, sn, 2 * r, ch, ch / 2, r, r / 2);
            ch /= 2;
            std::vector<ResBlock<S>> blocks;
            for (std::size_t ki = 0; ki < a.resblock_kernels.size(); ++ki)
                blocks.emplace_back(ps, sn + ".res" + std::to_string(ki), ch, a.resblock_kernels[ki],
                                    a.resblock_dilations);
            resblocks.push_back(std::move(blocks));
            hop *= r;
        }
    }

    static int channels_after(const ArchConfig& a) {
        int ch = a.gen_channels;
        for (std::size_t s = 0; s < a.upsample_rates.size(); ++s) ch /= 2;
        return ch;
    }

    /// z_slice: frames x latent_dim -> samples x 1.
    int forward(Graph<S>& g, int z_slice) const {
        int x = pre.forward(g, z_slice);
        for (std::size_t s = 0; s < ups.size(); ++s) {
            x = ups[s].forward(g, g.leaky_relu(x, S(0.1)));
            int acc = -1;
            for (const auto& rb : resblocks[s]) {
                const int y = rb.forward(g, x);
                acc = acc < 0 ? y : g.add(acc, y);
            }
            x = g.scale(acc, S(1) / static_cast<S>(resblocks[s].size()));
        }
        return g.tanh_op(post.forward(g, g.leaky_relu(x, S(0.1))));
    }
};

/// Scores and per-layer feature maps from one sub-discriminator.
struct DiscriminatorOutput {
    int score = -1;
    std::vector<int> fmaps;
};

/// One period branch of the multi-period discriminator: the signal is folded
/// into p phase columns and each column runs through the same strided conv
/// stack (weight sharing across phases equals a (k,1) 2-D conv over the fold).
template <typename S>
struct PeriodDiscriminator {
    std::vector<Conv1d<S>> convs;
    Conv1d<S> head;
    int period;

    PeriodDiscriminator(ParamStore<S>& ps, const std::string& name, int period_,
                        const std::vector<int>& channels)
        : head(ps, name + ".head", 3, channels.back(), 1, 1, 1, 1), period(period_) {
        int cin = 1;
        for (std::size_t i = 0; i < channels.size(); ++i) {
            convs.emplace_back(ps, name + ".conv" + std::to_string(i), 5, cin, channels[i], 3, 1, 2);
            cin = channels[i];
        }
    }

    DiscriminatorOutput forward(Graph<S>& g, int audio) const {
        const int folded = g.phase_split(audio, period);
        std::vector<std::vector<int>> per_layer(convs.size() + 1);
        std::vector<int> phase_scores;
        for (int p = 0; p < period; ++p) {
            int x = g.slice_cols(folded, p, 1);
            for (std::size_t i = 0; i < convs.size(); ++i) {
                x = g.leaky_relu(convs[i].forward(g, x), S(0.1));
                per_layer[i].push_back(x);
            }
            x = head.forward(g, x);
            per_layer.back().push_back(x);
            phase_scores.push_back(x);
        }
        DiscriminatorOutput out;
        out.score = g.concat_cols(phase_scores);
        for (auto& layer : per_layer) out.fmaps.push_back(g.concat_cols(layer));
        return out;
    }
};

/// One resolution branch of the multi-scale discriminator.
template <typename S>
struct ScaleDiscriminator {
    std::vector<Conv1d<S>> convs;
    Conv1d<S> head;

    ScaleDiscriminator(ParamStore<S>& ps, const std::string& name, const std::vector<int>& channels)
        : head(ps, name + ".head", 3, channels.back(), 1, 1, 1, 1) {
        int cin = 1;
        for (std::size_t i = 0; i < channels.size(); ++i) {
            const int k = i == 0 ? 15 : 11;
            const int stride = i == 0 ? 1 : 2;
            convs.emplace_back(ps, name + ".conv" + std::to_string(i), k, cin, channels[i], stride, 1,
                               (k - 1) / 2);
            cin = channels[i];
        }
    }

    DiscriminatorOutput forward(Graph<S>& g, int audio) const {
        DiscriminatorOutput out;
        int x = audio;
        for (const auto& c : convs) {
            x = g.leaky_relu(c.forward(g, x), S(0.1));
            out.fmaps.push_back(x);
        }
        out.score = head.forward(g, x);
        out.fmaps.push_back(out.score);
        return out;
    }
};

/// The full discriminator set: one period branch per configured period plus
/// msd_scales resolution branches over progressively average-pooled audio.
template <typename S>
struct DiscriminatorSet {
    std::vector<PeriodDiscriminator<S>> periods;
    std::vector<ScaleDiscriminator<S>> scales;

    DiscriminatorSet(ParamStore<S>& ps, const std::string& name, const ArchConfig& a) {
        for (int p : a.mpd_periods)
            periods.emplace_back(ps, name + ".mpd.p" + std::to_string(p), p, a.disc_channels);
        for (int s = 0; s < a.msd_scales; ++s)
            scales.emplace_back(ps, name + ".msd.s" + std::to_string(s), a.disc_channels);
    }

    std::vector<DiscriminatorOutput> forward(Graph<S>& g, int audio) const {
        if (g.cols(audio) != 1 || g.rows(audio) < 2)
            throw ValidationError("discriminate: audio must be a non-trivial column vector");
        std::vector<DiscriminatorOutput> outs;
        outs.reserve(periods.size() + scales.size());
        for (const auto& d : periods) outs.push_back(d.forward(g, audio));
        int x = audio;
        for (std::size_t s = 0; s < scales.size(); ++s) {
            if (s > 0) x = g.avg_pool1d(x, 4, 2, 1);
            outs.push_back(scales[s].forward(g, x));
        }
        return outs;
    }
};

}  // namespace aria
