#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "aria/autograd.hpp"
#include "aria/config.hpp"
#include "aria/corpus.hpp"
#include "aria/dsp.hpp"
#include "aria/error.hpp"
#include "aria/losses.hpp"
#include "aria/model.hpp"
#include "aria/nn.hpp"
#include "aria/posterior.hpp"
#include "aria/prior.hpp"
#include "aria/rng.hpp"

namespace aria {

/// Per-step loss values (already weighted into total_g as configured).
struct LossReport {
    double recon = 0.0;
    double kl = 0.0;
    double ctc = 0.0;
    double dur = 0.0;
    double lf0 = 0.0;
    double adv_g = 0.0;
    double fm = 0.0;
    double adv_d = 0.0;
    double total_g = 0.0;

    static const char* csv_header() { return "step,recon,kl,ctc,dur,lf0,adv_g,fm,adv_d,total_g"; }

    std::string csv_row(long step) const {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", step,
                      recon, kl, ctc, dur, lf0, adv_g, fm, adv_d, total_g);
        return buf;
    }
};

/// Model plus everything needed to continue training deterministically.
template <typename S>
struct TrainState {
    Model<S> model;
    Adam<S> opt_g;
    Adam<S> opt_d;
    long step = 0;
    Rng rng;

    explicit TrainState(const RunConfig& cfg)
        : model(cfg.spectro, cfg.arch, cfg.train.seed), rng(derive_seed(cfg.train.seed, 0x73746570)) {
        for (Adam<S>* o : {&opt_g, &opt_d}) {
            o->lr = cfg.train.lr;
            o->beta1 = cfg.train.beta1;
            o->beta2 = cfg.train.beta2;
            o->eps = cfg.train.adam_eps;
        }
    }
};

/// One training example: a segment's score, audio, analysis features and CTC
/// target, all precomputed so the step loop only runs the networks.
template <typename S>
struct SegmentData {
    using Mat = typename Graph<S>::Mat;

    MusicScore score;
    AudioClip audio;
    Mat spec;  // frames x bins, trimmed to the score frame grid
    Mat lf0;   // frames x 1, interpolated ground truth
    std::vector<int> ctc_target;
    int frames = 0;
};

template <typename S>
SegmentData<S> prepare_segment(const CorpusEntry& entry, const SpectrogramConfig& cfg) {
    if (!entry.score.has_durations())
        throw ValidationError("training segment needs labeled phoneme durations");
    SegmentData<S> out;
    out.score = entry.score;
    out.audio = entry.audio;
    out.frames = static_cast<int>(entry.score.total_frames());
    if (static_cast<std::int64_t>(entry.audio.length()) < static_cast<std::int64_t>(out.frames) * cfg.hop_size)
        throw ValidationError("training segment audio shorter than its frame grid");

    const LinearSpectrogram spec = linear_spectrogram(entry.audio, cfg);
    if (spec.frames() < out.frames)
        throw ValidationError("training segment spectrogram shorter than the score frame grid");
    out.spec = spec.values.topRows(out.frames).template cast<S>();

    const F0Contour contour = contour_from_f0(entry.f0_ref, cfg);
    out.lf0.resize(out.frames, 1);
    for (int t = 0; t < out.frames; ++t)
        out.lf0(t, 0) = static_cast<S>(contour.lf0[static_cast<std::size_t>(t)]);

    out.ctc_target = entry.score.phonemes;
    return out;
}

/// Drives alternating discriminator/generator steps over random fixed-length
/// segment crops (scope "full"), or score-only duration regression steps
/// (scope "duration_only").
template <typename S>
class Trainer {
public:
    Trainer(RunConfig cfg, const std::vector<CorpusEntry>& entries)
        : cfg_(std::move(cfg)), state_(cfg_), mel_head_(cfg_.spectro) {
        cfg_.train.validate();
        if (entries.empty()) throw ValidationError("trainer: empty corpus");
        const int holdout = static_cast<int>(
            std::llround(cfg_.train.holdout_frac * static_cast<double>(entries.size())));
        const int train_n = static_cast<int>(entries.size()) - holdout;
        if (train_n < 1) throw ValidationError("trainer: holdout fraction leaves no training songs");
        for (int i = 0; i < static_cast<int>(entries.size()); ++i)
            (i < train_n ? train_entries_ : holdout_entries_).push_back(entries[static_cast<std::size_t>(i)]);

        if (cfg_.train.train_scope == "full") {
            for (const CorpusEntry& e : train_entries_)
                for (const CorpusEntry& seg :
                     split_segments(e, cfg_.train.segment_seconds, cfg_.spectro.hop_size))
                    segments_.push_back(prepare_segment<S>(seg, cfg_.spectro));
            if (segments_.empty()) throw ValidationError("trainer: no usable training segments");
        } else {
            // duration-only scope trains just the score-side duration stack
            state_.model.gen_params.set_requires_grad(false);
            state_.model.gen_params.set_requires_grad(true, "text_encoder.");
            state_.model.gen_params.set_requires_grad(true, "duration_predictor.");
            state_.model.disc_params.set_requires_grad(false);
        }
    }

    const RunConfig& config() const { return cfg_; }
    TrainState<S>& state() { return state_; }
    const std::vector<CorpusEntry>& train_entries() const { return train_entries_; }
    const std::vector<CorpusEntry>& holdout_entries() const { return holdout_entries_; }
    std::size_t segment_count() const { return segments_.size(); }

    double lr_scale() const {
        const long per_epoch = static_cast<long>(
            cfg_.train.train_scope == "full" ? segments_.size() : train_entries_.size());
        const long epoch = state_.step / std::max(1L, per_epoch);
        return std::pow(cfg_.train.lr_decay, static_cast<double>(epoch));
    }

    /// Runs one optimization step and returns the losses at this step.
    LossReport step() {
        LossReport report = cfg_.train.train_scope == "full" ? full_step() : duration_step();
        state_.step += 1;
        return report;
    }

private:
    [[noreturn]] void abort_non_finite(const char* term) const {
        throw TrainAbort("step " + std::to_string(state_.step) + ": non-finite " + term + " loss");
    }

    void check_finite(double v, const char* term) const {
        if (!std::isfinite(v)) abort_non_finite(term);
    }

    LossReport duration_step() {
        const std::size_t idx =
            state_.rng.uniform_int(0, static_cast<int>(train_entries_.size()) - 1);
        const MusicScore& score = train_entries_[idx].score;

        state_.model.gen_params.zero_grad();
        Graph<S> g;
        const int h_ph = state_.model.text_encoder.forward(g, score);
        const int r = state_.model.duration_predictor.forward(g, h_ph);
        const int dur =
            duration_loss(g, r, score.note_dur, score.phn_dur, cfg_.arch.note_normalization);
        const int total = g.scale(dur, static_cast<S>(cfg_.train.w_dur));
        LossReport report;
        report.dur = static_cast<double>(g.value(dur)(0, 0));
        report.total_g = static_cast<double>(g.value(total)(0, 0));
        check_finite(report.dur, "duration");
        g.backward(total);
        state_.opt_g.step(state_.model.gen_params, lr_scale());
        return report;
    }

    LossReport full_step() {
        Model<S>& m = state_.model;
        const TrainConfig& tc = cfg_.train;

        // one set of random decisions per step, shared by both passes
        const std::size_t idx = state_.rng.uniform_int(0, static_cast<int>(segments_.size()) - 1);
        const SegmentData<S>& seg = segments_[idx];
        const int slice_frames = std::min(tc.slice_frames, seg.frames);
        const int max_start = seg.frames - slice_frames;
        const SliceWindow window{
            max_start > 0 ? static_cast<int>(state_.rng.uniform_int(0, max_start)) : 0, slice_frames};
        typename Graph<S>::Mat noise(seg.frames, cfg_.arch.latent_dim);
        for (int t = 0; t < seg.frames; ++t)
            for (int d = 0; d < cfg_.arch.latent_dim; ++d)
                noise(t, d) = static_cast<S>(state_.rng.normal());

        LossReport report;

        // ---- discriminator pass (generator frozen = fake audio detached) --
        {
            m.gen_params.set_requires_grad(false);
            m.disc_params.zero_grad();
            Graph<S> g;
            const LatentNodes lat = m.posterior.forward(g, g.constant(seg.spec), g.constant(noise));
            const SlicedLatent sl = slice_latent(g, lat.z, window, cfg_.spectro.hop_size);
            const int fake = m.generator.forward(g, sl.z_slice);
            const int real = g.constant(audio_column(seg, sl));
            const int adv_d =
                adv_d_loss(g, m.discriminators.forward(g, real), m.discriminators.forward(g, fake));
            report.adv_d = static_cast<double>(g.value(adv_d)(0, 0));
            check_finite(report.adv_d, "adv_d");
            g.backward(adv_d);
            m.gen_params.set_requires_grad(true);
            state_.opt_d.step(m.disc_params, lr_scale());
        }

        // ---- generator pass (discriminator frozen) -----------------------
        {
            m.disc_params.set_requires_grad(false);
            m.gen_params.zero_grad();
            Graph<S> g;

            const LatentNodes lat = m.posterior.forward(g, g.constant(seg.spec), g.constant(noise));
            const auto ph = m.encode_score(g, seg.score, seg.score.phn_dur);
            const int gt_lf0 = g.constant(seg.lf0);
            const bool guided = m.frame_prior && m.frame_prior->lf0_proj.has_value();
            const auto [mu_p, log_sigma_p] =
                m.prior_gaussian(g, ph, seg.score.phn_dur, guided ? gt_lf0 : -1);
            const auto [f_z, logdet] = m.flow.forward(g, lat.z);
            const int kl =
                kl_loss(g, lat.z, lat.mu, lat.log_sigma, f_z, logdet, mu_p, log_sigma_p);

            const SlicedLatent sl = slice_latent(g, lat.z, window, cfg_.spectro.hop_size);
            const int fake = m.generator.forward(g, sl.z_slice);
            const int real = g.constant(audio_column(seg, sl));
            const int mel_ref = mel_head_.forward(g, real);
            const int mel_gen = mel_head_.forward(g, fake);
            const int recon = recon_loss(g, mel_ref, mel_gen);

            const auto d_real = m.discriminators.forward(g, real);
            const auto d_fake = m.discriminators.forward(g, fake);
            const int adv_g = adv_g_loss(g, d_fake);
            const int fm = feature_matching_loss(g, d_real, d_fake);

            const int dur = duration_loss(g, ph.r, seg.score.note_dur, seg.score.phn_dur,
                                          cfg_.arch.note_normalization);

            int total = g.add(adv_g, fm);
            total = g.add(total, g.scale(recon, static_cast<S>(tc.w_recon)));
            total = g.add(total, g.scale(kl, static_cast<S>(tc.w_kl)));
            total = g.add(total, g.scale(dur, static_cast<S>(tc.w_dur)));
            if (m.phoneme_predictor) {
                const int ctc =
                    g.ctc_loss(m.phoneme_predictor->forward(g, lat.z), seg.ctc_target);
                report.ctc = static_cast<double>(g.value(ctc)(0, 0));
                total = g.add(total, g.scale(ctc, static_cast<S>(tc.w_ctc)));
            }
            if (ph.lf0_pred >= 0) {
                const int lf0 = lf0_loss(g, ph.lf0_pred, gt_lf0);
                report.lf0 = static_cast<double>(g.value(lf0)(0, 0));
                total = g.add(total, g.scale(lf0, static_cast<S>(tc.w_lf0)));
            }

            report.recon = static_cast<double>(g.value(recon)(0, 0));
            report.kl = static_cast<double>(g.value(kl)(0, 0));
            report.dur = static_cast<double>(g.value(dur)(0, 0));
            report.adv_g = static_cast<double>(g.value(adv_g)(0, 0));
            report.fm = static_cast<double>(g.value(fm)(0, 0));
            report.total_g = static_cast<double>(g.value(total)(0, 0));
            check_finite(report.recon, "recon");
            check_finite(report.kl, "kl");
            check_finite(report.ctc, "ctc");
            check_finite(report.dur, "duration");
            check_finite(report.lf0, "lf0");
            check_finite(report.adv_g, "adv_g");
            check_finite(report.fm, "feature-matching");

            g.backward(total);
            m.disc_params.set_requires_grad(true);
            state_.opt_g.step(m.gen_params, lr_scale());
        }
        return report;
    }

    typename Graph<S>::Mat audio_column(const SegmentData<S>& seg, const SlicedLatent& sl) const {
        typename Graph<S>::Mat col(sl.sample_end - sl.sample_begin, 1);
        for (long i = sl.sample_begin; i < sl.sample_end; ++i)
            col(i - sl.sample_begin, 0) = static_cast<S>(seg.audio.samples[static_cast<std::size_t>(i)]);
        return col;
    }

    RunConfig cfg_;
    TrainState<S> state_;
    MelHead<S> mel_head_;
    std::vector<CorpusEntry> train_entries_;
    std::vector<CorpusEntry> holdout_entries_;
    std::vector<SegmentData<S>> segments_;
};

// ---- checkpointing --------------------------------------------------------

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    write_bytes(os, &v, sizeof v);
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw ParseError("checkpoint: truncated file");
}

template <typename T>
T read_pod(std::istream& is) {
    T v;
    read_bytes(is, &v, sizeof v);
    return v;
}

inline std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    if (n > (1u << 24)) throw ParseError("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (n) read_bytes(is, s.data(), n);
    return s;
}

template <typename S>
void write_param_block(std::ostream& os, const ParamStore<S>& store, std::uint64_t adam_t) {
    write_pod<std::uint64_t>(os, adam_t);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(store.all().size()));
    for (const Param<S>* p : store.all()) {
        write_string(os, p->name);
        write_pod<std::int32_t>(os, static_cast<std::int32_t>(p->value.rows()));
        write_pod<std::int32_t>(os, static_cast<std::int32_t>(p->value.cols()));
        const std::size_t bytes = static_cast<std::size_t>(p->value.size()) * sizeof(S);
        write_bytes(os, p->value.data(), bytes);
        write_bytes(os, p->m.data(), bytes);
        write_bytes(os, p->v.data(), bytes);
    }
}

template <typename S>
std::uint64_t read_param_block(std::istream& is, ParamStore<S>& store) {
    const auto adam_t = read_pod<std::uint64_t>(is);
    const auto n = read_pod<std::uint32_t>(is);
    if (n != store.all().size())
        throw ParseError("checkpoint: parameter count mismatch (different architecture?)");
    for (Param<S>* p : store.all()) {
        const std::string name = read_string(is);
        if (name != p->name)
            throw ParseError("checkpoint: parameter name mismatch: file has '" + name +
                             "', model expects '" + p->name + "'");
        const auto rows = read_pod<std::int32_t>(is);
        const auto cols = read_pod<std::int32_t>(is);
        if (rows != p->value.rows() || cols != p->value.cols())
            throw ParseError("checkpoint: shape mismatch for '" + name + "'");
        const std::size_t bytes = static_cast<std::size_t>(p->value.size()) * sizeof(S);
        read_bytes(is, p->value.data(), bytes);
        read_bytes(is, p->m.data(), bytes);
        read_bytes(is, p->v.data(), bytes);
    }
    return adam_t;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "ARIA-CKPT-1\n";

template <typename S>
void save_checkpoint(const TrainState<S>& state, std::uint64_t fingerprint,
                     const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("checkpoint: cannot open '" + path + "' for writing");
    detail::write_bytes(os, kCheckpointMagic, sizeof kCheckpointMagic - 1);
    detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(S)));
    detail::write_pod<std::uint64_t>(os, fingerprint);
    detail::write_pod<std::int64_t>(os, static_cast<std::int64_t>(state.step));
    detail::write_string(os, state.rng.serialize());
    detail::write_param_block(os, state.model.gen_params, state.opt_g.t);
    detail::write_param_block(os, state.model.disc_params, state.opt_d.t);
    if (!os) throw Error("checkpoint: write to '" + path + "' failed");
}

template <typename S>
void load_checkpoint(TrainState<S>& state, std::uint64_t fingerprint, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot open '" + path + "'");
    char magic[sizeof kCheckpointMagic - 1];
    detail::read_bytes(is, magic, sizeof magic);
    if (std::string(magic, sizeof magic) != kCheckpointMagic)
        throw ParseError("checkpoint: bad magic (not a checkpoint file?)");
    if (detail::read_pod<std::uint8_t>(is) != sizeof(S))
        throw ParseError("checkpoint: scalar width mismatch");
    const auto fp = detail::read_pod<std::uint64_t>(is);
    if (fp != fingerprint)
        throw ParseError("checkpoint: config fingerprint mismatch (file " + std::to_string(fp) +
                         ", config " + std::to_string(fingerprint) + ")");
    state.step = static_cast<long>(detail::read_pod<std::int64_t>(is));
    state.rng = Rng::deserialize(detail::read_string(is));
    state.opt_g.t = static_cast<std::int64_t>(detail::read_param_block(is, state.model.gen_params));
    state.opt_d.t = static_cast<std::int64_t>(detail::read_param_block(is, state.model.disc_params));
}

}  // namespace aria
