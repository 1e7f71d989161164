#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "aria/dsp.hpp"
#include "aria/error.hpp"
#include "aria/model.hpp"
#include "aria/rng.hpp"
#include "aria/score.hpp"
#include "aria/wav.hpp"

namespace aria {

/// Mean |f0_gen - f0_ref| in Hz over frames voiced in both contours, after
/// truncating to the shorter contour. Reference frames with f0 <= 0 count as
/// unvoiced. Throws when no frame is voiced in both.
inline double f0_mae_contours(const std::vector<double>& f0_gen, const std::vector<bool>& voiced_gen,
                              const std::vector<double>& f0_ref) {
    if (voiced_gen.size() != f0_gen.size())
        throw ValidationError("f0_mae: voicing mask length mismatch");
    const std::size_t n = std::min(f0_gen.size(), f0_ref.size());
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (!voiced_gen[t] || f0_ref[t] <= 0.0) continue;
        sum += std::abs(f0_gen[t] - f0_ref[t]);
        ++count;
    }
    if (count == 0) throw ValidationError("f0_mae: no frames voiced in both contours");
    return sum / static_cast<double>(count);
}

/// F0 MAE of a generated clip against a per-frame reference contour.
inline double f0_mae(const AudioClip& gen, const std::vector<double>& f0_ref,
                     const SpectrogramConfig& cfg) {
    const F0Contour c = extract_f0(gen, cfg);
    return f0_mae_contours(c.f0_hz, c.voiced, f0_ref);
}

/// F0 MAE between two clips; the reference's own extraction provides both the
/// reference contour and its voicing.
inline double f0_mae(const AudioClip& gen, const AudioClip& ref, const SpectrogramConfig& cfg) {
    const F0Contour cr = extract_f0(ref, cfg);
    std::vector<double> ref_contour(cr.f0_hz.size(), 0.0);
    for (std::size_t t = 0; t < cr.f0_hz.size(); ++t)
        if (cr.voiced[t]) ref_contour[t] = cr.f0_hz[t];
    return f0_mae(gen, ref_contour, cfg);
}

/// Mean |pred - gt| in frames over phonemes.
inline double dur_mae(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size()) throw ValidationError("dur_mae: sequence length mismatch");
    if (pred.empty()) throw ValidationError("dur_mae: empty sequences");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - gt[i]);
    return sum / static_cast<double>(pred.size());
}

/// Mean absolute log-mel difference, truncated to the shorter clip's frames.
inline double mel_l1(const AudioClip& a, const AudioClip& b, const SpectrogramConfig& cfg) {
    const MelSpectrogram ma = mel_spectrogram(a, cfg);
    const MelSpectrogram mb = mel_spectrogram(b, cfg);
    const int frames = std::min(ma.frames(), mb.frames());
    if (frames == 0) throw ValidationError("mel_l1: empty spectrograms");
    return (ma.values.topRows(frames) - mb.values.topRows(frames)).cwiseAbs().mean();
}

/// Pearson correlation between two equal-length sequences.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ValidationError("pearson: need two equal-length sequences of size >= 2");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) throw ValidationError("pearson: a sequence is constant");
    return sxy / std::sqrt(sxx * syy);
}

/// Metrics for one evaluated clip; absent optionals mean the metric was
/// skipped (missing labels or no comparable voiced frames) rather than zero.
struct ClipEval {
    std::string id;
    std::optional<double> f0_mae_hz;
    std::optional<double> dur_mae_frames;
    std::optional<double> mel_l1_val;
    std::string warning;
};

struct EvalReport {
    std::vector<ClipEval> rows;
    std::vector<AudioClip> generated;       // parallel to rows
    std::vector<int> dur_deviations;        // pooled per-phoneme (pred - gt)
    std::optional<double> f0_mae_hz;        // means over rows carrying the metric
    std::optional<double> dur_mae_frames;
    std::optional<double> mel_l1_val;

    void aggregate() {
        const auto mean_of = [this](std::optional<double> ClipEval::*field) {
            double sum = 0.0;
            int count = 0;
            for (const ClipEval& r : rows)
                if (r.*field) {
                    sum += (r.*field).value();
                    ++count;
                }
            return count ? std::optional<double>(sum / count) : std::nullopt;
        };
        f0_mae_hz = mean_of(&ClipEval::f0_mae_hz);
        dur_mae_frames = mean_of(&ClipEval::dur_mae_frames);
        mel_l1_val = mean_of(&ClipEval::mel_l1_val);
    }
};

/// Synthesize every test entry and score it against the labels. Per-clip
/// failures to find comparable voiced frames are recorded as warnings, not
/// fatal errors, so one degenerate clip cannot sink a whole evaluation.
template <typename S>
EvalReport evaluate(const Model<S>& model, const std::vector<CorpusEntry>& entries,
                    double noise_scale, Rng& rng) {
    if (entries.empty()) throw ValidationError("evaluate: empty test set");
    EvalReport report;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const CorpusEntry& e = entries[i];
        ClipEval row;
        row.id = "clip" + std::to_string(i);
        const SynthesisResult synth = synthesize(model, e.score, noise_scale, rng);
        if (e.score.has_durations()) {
            row.dur_mae_frames = dur_mae(synth.pred_dur, e.score.phn_dur);
            for (std::size_t p = 0; p < synth.pred_dur.size(); ++p)
                report.dur_deviations.push_back(synth.pred_dur[p] - e.score.phn_dur[p]);
        } else {
            row.warning += "no duration labels; ";
        }
        if (!e.f0_ref.empty()) {
            try {
                row.f0_mae_hz = f0_mae(synth.audio, e.f0_ref, model.spectro);
            } catch (const ValidationError& ex) {
                row.warning += std::string(ex.what()) + "; ";
            }
        } else {
            row.warning += "no F0 reference; ";
        }
        if (e.audio.length() > 0)
            row.mel_l1_val = mel_l1(synth.audio, e.audio, model.spectro);
        else
            row.warning += "no reference audio; ";
        report.rows.push_back(std::move(row));
        report.generated.push_back(std::move(synth.audio));
    }
    report.aggregate();
    return report;
}

/// CSV rendering: one row per clip plus a "mean" row, empty cells for skipped
/// metrics.
inline std::string eval_report_csv(const EvalReport& report) {
    const auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string();
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", *v);
        return std::string(buf);
    };
    std::string out = "clip,f0_mae_hz,dur_mae_frames,mel_l1\n";
    for (const ClipEval& r : report.rows)
        out += r.id + "," + cell(r.f0_mae_hz) + "," + cell(r.dur_mae_frames) + "," +
               cell(r.mel_l1_val) + "\n";
    out += "mean," + cell(report.f0_mae_hz) + "," + cell(report.dur_mae_frames) + "," +
           cell(report.mel_l1_val) + "\n";
    return out;
}

}  // namespace aria
