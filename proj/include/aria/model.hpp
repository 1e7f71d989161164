#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aria/autograd.hpp"
#include "aria/config.hpp"
#include "aria/error.hpp"
#include "aria/nn.hpp"
#include "aria/posterior.hpp"
#include "aria/prior.hpp"
#include "aria/rng.hpp"
#include "aria/score.hpp"
#include "aria/wav.hpp"

namespace aria {

/// The full synthesis model: score-side prior stack, posterior encoder,
/// normalizing flow, waveform decoder and adversarial discriminators.
/// Generator-side and discriminator parameters live in separate stores so the
/// alternating optimization steps can never touch each other's weights.
template <typename S>
struct Model {
    SpectrogramConfig spectro;
    ArchConfig arch;
    ParamStore<S> gen_params;
    ParamStore<S> disc_params;

    TextEncoder<S> text_encoder;
    DurationPredictor<S> duration_predictor;
    std::optional<F0Predictor<S>> f0_predictor;
    std::optional<FramePriorNetwork<S>> frame_prior;
    std::optional<Linear<S>> phoneme_gaussian_proj;  // frame-prior ablation path
    Flow<S> flow;
    std::optional<PhonemePredictor<S>> phoneme_predictor;
    PosteriorEncoder<S> posterior;
    Generator<S> generator;
    DiscriminatorSet<S> discriminators;

    static const SpectrogramConfig& validated(const SpectrogramConfig& sc, const ArchConfig& a) {
        sc.validate();
        a.validate(sc.hop_size);
        return sc;
    }

    Model(const SpectrogramConfig& sc, const ArchConfig& a, std::uint64_t seed)
        : spectro(validated(sc, a)),
          arch(a),
          gen_params(derive_seed(seed, 0x67656e)),
          disc_params(derive_seed(seed, 0x64697363)),
          text_encoder(gen_params, "text_encoder", a),
          duration_predictor(gen_params, "duration_predictor", a),
          flow(gen_params, "flow", a),
          posterior(gen_params, "posterior", sc.fft_size / 2 + 1, a),
          generator(gen_params, "generator", a),
          discriminators(disc_params, "disc", a) {
        if (!a.remove_f0_predictor) f0_predictor.emplace(gen_params, "f0_predictor", a);
        if (a.remove_frame_prior)
            phoneme_gaussian_proj.emplace(gen_params, "phoneme_gaussian_proj", a.hidden,
                                          2 * a.latent_dim, true, /*stddev=*/0.0);
        else
            frame_prior.emplace(gen_params, "frame_prior", a, /*use_lf0=*/!a.remove_f0_predictor);
        if (!a.remove_phoneme_predictor)
            phoneme_predictor.emplace(gen_params, "phoneme_predictor", a);
    }

    /// Score-side forward up to the frame-level hidden sequence.
    struct PriorHidden {
        int h_ph = -1;     // phonemes x hidden
        int r = -1;        // phonemes x 1 duration regression
        int h_text = -1;   // frames x hidden
        int lf0_pred = -1; // frames x 1, or -1 when the F0 predictor is removed
    };

    PriorHidden encode_score(Graph<S>& g, const MusicScore& score,
                             const std::vector<int>& dur) const {
        PriorHidden out;
        out.h_ph = text_encoder.forward(g, score);
        out.r = duration_predictor.forward(g, out.h_ph);
        out.h_text = length_regulator(g, out.h_ph, dur);
        if (f0_predictor) out.lf0_pred = f0_predictor->forward(g, out.h_text);
        return out;
    }

    /// Frame-level prior Gaussian. lf0 conditions the frame prior network
    /// (teacher-forced in training, predicted at synthesis); it must be -1
    /// when the F0 guidance path is disabled or the frame prior is removed.
    std::pair<int, int> prior_gaussian(Graph<S>& g, const PriorHidden& h,
                                       const std::vector<int>& dur, int lf0) const {
        if (frame_prior) return frame_prior->forward(g, h.h_text, lf0);
        if (lf0 >= 0)
            throw ValidationError("prior_gaussian: LF0 guidance unused without a frame prior network");
        const int proj = phoneme_gaussian_proj->forward(g, h.h_ph);
        const int expanded = length_regulator(g, proj, dur);
        return {g.slice_cols(expanded, 0, arch.latent_dim),
                g.slice_cols(expanded, arch.latent_dim, arch.latent_dim)};
    }

    long param_count() const { return gen_params.param_count() + disc_params.param_count(); }
};

/// Everything synthesize() produces besides the waveform.
struct SynthesisResult {
    AudioClip audio;
    std::vector<int> pred_dur;      // per-phoneme frames
    std::vector<double> pred_lf0;   // per-frame, empty when F0 predictor removed
};

/// Inference pipeline: predicted durations drive the length regulator, the
/// predicted LF0 guides the frame prior network, the prior sample is pulled
/// back through the inverse flow and decoded to a waveform.
template <typename S>
SynthesisResult synthesize(const Model<S>& model, const MusicScore& score, double noise_scale,
                           Rng& rng) {
    validate_score(score, model.arch.inventory_size());
    if (noise_scale < 0.0) throw ValidationError("synthesize: noise scale must be >= 0");

    Graph<S> g;
    const int h_ph = model.text_encoder.forward(g, score);
    const int r_node = model.duration_predictor.forward(g, h_ph);
    std::vector<double> r(score.size());
    for (std::size_t i = 0; i < score.size(); ++i)
        r[i] = static_cast<double>(g.value(r_node)(static_cast<int>(i), 0));
    const std::vector<int> dur = predicted_duration(r, score.note_dur, model.arch.note_normalization);

    typename Model<S>::PriorHidden h;
    h.h_ph = h_ph;
    h.r = r_node;
    h.h_text = length_regulator(g, h_ph, dur);
    if (model.f0_predictor) h.lf0_pred = model.f0_predictor->forward(g, h.h_text);

    const bool guide = model.frame_prior && model.frame_prior->lf0_proj.has_value();
    const auto [mu, log_sigma] = model.prior_gaussian(g, h, dur, guide ? h.lf0_pred : -1);

    const int frames = g.rows(mu);
    typename Graph<S>::Mat noise(frames, model.arch.latent_dim);
    for (int t = 0; t < frames; ++t)
        for (int d = 0; d < model.arch.latent_dim; ++d)
            noise(t, d) = static_cast<S>(noise_scale * rng.normal());
    const int u = g.add(mu, g.mul(g.exp_op(log_sigma), g.constant(std::move(noise))));
    const int z = model.flow.inverse(g, u);
    const int wav = model.generator.forward(g, z);

    SynthesisResult out;
    out.audio.sample_rate = model.spectro.sample_rate;
    out.audio.samples.resize(static_cast<std::size_t>(g.rows(wav)));
    for (int i = 0; i < g.rows(wav); ++i)
        out.audio.samples[static_cast<std::size_t>(i)] = static_cast<float>(g.value(wav)(i, 0));
    out.pred_dur = dur;
    if (h.lf0_pred >= 0) {
        out.pred_lf0.resize(static_cast<std::size_t>(frames));
        for (int t = 0; t < frames; ++t)
            out.pred_lf0[static_cast<std::size_t>(t)] = static_cast<double>(g.value(h.lf0_pred)(t, 0));
    }
    return out;
}

}  // namespace aria
