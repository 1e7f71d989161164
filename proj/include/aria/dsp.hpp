#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "aria/error.hpp"
#include "aria/wav.hpp"

namespace aria {

/// STFT / mel / F0 front-end parameters. One hop defines the frame grid shared
/// by spectrograms, durations and latents.
struct SpectrogramConfig {
    int sample_rate = 24000;
    int fft_size = 1024;
    int hop_size = 256;
    int win_size = 1024;
    int mel_bins = 80;
    double fmin = 40.0;
    double fmax = 12000.0;

    int bins() const { return fft_size / 2 + 1; }

    void validate() const {
        if (sample_rate <= 0) throw ConfigError("spectro: sample_rate must be positive");
        if (fft_size <= 0 || (fft_size & (fft_size - 1)) != 0)
            throw ConfigError("spectro: fft_size must be a positive power of two");
        if (!(hop_size > 0 && hop_size <= win_size && win_size <= fft_size))
            throw ConfigError("spectro: need 0 < hop_size <= win_size <= fft_size");
        if (!(fmin < fmax && fmax <= sample_rate / 2.0))
            throw ConfigError("spectro: need fmin < fmax <= sample_rate/2");
        if (mel_bins <= 0) throw ConfigError("spectro: mel_bins must be positive");
    }
};

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

/// Frames x bins non-negative magnitudes.
struct LinearSpectrogram {
    MatD values;
    int frames() const { return static_cast<int>(values.rows()); }
};

/// Frames x mel_bins log magnitudes (floored).
struct MelSpectrogram {
    MatD values;
    int frames() const { return static_cast<int>(values.rows()); }
};

/// Per-frame F0 with the everywhere-finite log contour used as the LF0 target.
struct F0Contour {
    std::vector<double> f0_hz;        // 0 = unvoiced
    std::vector<double> lf0;          // log F0, interpolated through unvoiced gaps
    std::vector<bool> voiced;         // true iff f0_hz > 0
    int frames() const { return static_cast<int>(f0_hz.size()); }
};

inline constexpr double kMelLogFloor = 1e-5;

/// The single frame-count formula shared by every module: frames are centered
/// on multiples of the hop, with fft_size/2 reflect padding on both sides.
inline int frame_count(std::int64_t n_samples, const SpectrogramConfig& cfg) {
    if (n_samples < cfg.win_size)
        throw ValidationError("frame_count: audio shorter than one window (" +
                              std::to_string(n_samples) + " < " + std::to_string(cfg.win_size) + ")");
    return 1 + static_cast<int>(n_samples / cfg.hop_size);
}

namespace detail {

/// In-place iterative radix-2 FFT. n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

/// Periodic Hann window of length win, zero-padded and centered in fft_size.
inline VecD padded_hann(int win_size, int fft_size) {
    VecD w = VecD::Zero(fft_size);
    const int off = (fft_size - win_size) / 2;
    for (int i = 0; i < win_size; ++i)
        w[off + i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / win_size));
    return w;
}

/// Reflect an out-of-range sample index back into [0, n).
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Log F0 linearly interpolated across unvoiced gaps, edge-held at the
/// boundaries; an all-unvoiced contour takes the floor value everywhere.
inline std::vector<double> interpolate_lf0(const std::vector<double>& f0_hz, double lf0_floor) {
    const int frames = static_cast<int>(f0_hz.size());
    std::vector<double> lf0(static_cast<std::size_t>(frames), lf0_floor);
    int prev = -1;
    for (int t = 0; t < frames; ++t) {
        if (!(f0_hz[static_cast<std::size_t>(t)] > 0.0)) continue;
        const double cur = std::log(f0_hz[static_cast<std::size_t>(t)]);
        if (prev < 0) {
            for (int k = 0; k <= t; ++k) lf0[static_cast<std::size_t>(k)] = cur;
        } else {
            const double prev_val = lf0[static_cast<std::size_t>(prev)];
            for (int k = prev + 1; k <= t; ++k)
                lf0[static_cast<std::size_t>(k)] =
                    prev_val + (cur - prev_val) * (k - prev) / static_cast<double>(t - prev);
        }
        prev = t;
    }
    if (prev >= 0)
        for (int k = prev + 1; k < frames; ++k) lf0[static_cast<std::size_t>(k)] = lf0[static_cast<std::size_t>(prev)];
    return lf0;
}

}  // namespace detail

/// Triangular mel filterbank, mel_bins x bins.
inline MatD mel_filterbank(const SpectrogramConfig& cfg) {
    const int bins = cfg.bins();
    MatD fb = MatD::Zero(cfg.mel_bins, bins);
    const double mel_lo = detail::hz_to_mel(cfg.fmin);
    const double mel_hi = detail::hz_to_mel(cfg.fmax);
    std::vector<double> edges(static_cast<std::size_t>(cfg.mel_bins) + 2);
    for (int m = 0; m < cfg.mel_bins + 2; ++m)
        edges[m] = detail::mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (cfg.mel_bins + 1));
    for (int m = 0; m < cfg.mel_bins; ++m) {
        const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        for (int b = 0; b < bins; ++b) {
            const double hz = static_cast<double>(b) * cfg.sample_rate / cfg.fft_size;
            if (hz <= lo || hz >= hi) continue;
            fb(m, b) = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
        }
    }
    return fb;
}

/// Magnitude STFT on the shared frame grid. Fixed, no trainable parameters.
inline LinearSpectrogram linear_spectrogram(const AudioClip& audio, const SpectrogramConfig& cfg) {
    cfg.validate();
    if (audio.sample_rate != cfg.sample_rate)
        throw ValidationError("linear_spectrogram: audio sample rate " + std::to_string(audio.sample_rate) +
                              " != config " + std::to_string(cfg.sample_rate));
    const std::int64_t n = audio.length();
    const int frames = frame_count(n, cfg);
    const int bins = cfg.bins();
    const VecD window = detail::padded_hann(cfg.win_size, cfg.fft_size);

    LinearSpectrogram out;
    out.values.resize(frames, bins);
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
    for (int t = 0; t < frames; ++t) {
        const std::int64_t start = static_cast<std::int64_t>(t) * cfg.hop_size - cfg.fft_size / 2;
        for (int j = 0; j < cfg.fft_size; ++j) {
            const std::int64_t idx = detail::reflect_index(start + j, n);
            buf[static_cast<std::size_t>(j)] = audio.samples[static_cast<std::size_t>(idx)] * window[j];
        }
        detail::fft_radix2(buf);
        for (int b = 0; b < bins; ++b) out.values(t, b) = std::abs(buf[static_cast<std::size_t>(b)]);
    }
    return out;
}

/// Mel filterbank over the magnitude STFT, then log with a fixed floor.
inline MelSpectrogram mel_spectrogram(const AudioClip& audio, const SpectrogramConfig& cfg) {
    const LinearSpectrogram lin = linear_spectrogram(audio, cfg);
    const MatD fb = mel_filterbank(cfg);
    MelSpectrogram out;
    out.values = (lin.values * fb.transpose()).cwiseMax(kMelLogFloor).array().log().matrix();
    return out;
}

/// YIN-style F0 extraction on the hop grid: cumulative-mean-normalized
/// difference search in [fmin, fmax] with parabolic refinement.
inline F0Contour extract_f0(const AudioClip& audio, const SpectrogramConfig& cfg) {
    cfg.validate();
    if (audio.sample_rate != cfg.sample_rate)
        throw ValidationError("extract_f0: sample rate mismatch");
    const std::int64_t n = audio.length();
    const int frames = n >= cfg.win_size ? frame_count(n, cfg) : 1 + static_cast<int>(n / cfg.hop_size);

    const double f0_floor = std::max(cfg.fmin, 50.0);
    const double f0_ceil = std::min(cfg.fmax, cfg.sample_rate / 2.0 - 1.0);
    const int tau_min = std::max(2, static_cast<int>(std::floor(cfg.sample_rate / f0_ceil)));
    const int tau_max = static_cast<int>(std::ceil(cfg.sample_rate / f0_floor));
    const int window = cfg.win_size;  // integration window of the difference function
    constexpr double kThreshold = 0.15;

    F0Contour out;
    out.f0_hz.assign(static_cast<std::size_t>(frames), 0.0);
    out.voiced.assign(static_cast<std::size_t>(frames), false);

    std::vector<double> x(static_cast<std::size_t>(window + tau_max));
    std::vector<double> diff(static_cast<std::size_t>(tau_max) + 1);
    std::vector<double> cmnd(static_cast<std::size_t>(tau_max) + 1);

    // CMND first-dip search over x[off .. off+w+tau_max), refined by parabolic
    // interpolation; returns the lag or -1 when no dip beats the threshold.
    const auto first_dip = [&](int off, int w, double threshold) -> double {
        for (int tau = 1; tau <= tau_max; ++tau) {
            double d = 0.0;
            for (int j = 0; j < w; ++j) {
                const double delta =
                    x[static_cast<std::size_t>(off + j)] - x[static_cast<std::size_t>(off + j + tau)];
                d += delta * delta;
            }
            diff[static_cast<std::size_t>(tau)] = d;
        }
        cmnd[0] = 1.0;
        double running = 0.0;
        for (int tau = 1; tau <= tau_max; ++tau) {
            running += diff[static_cast<std::size_t>(tau)];
            cmnd[static_cast<std::size_t>(tau)] =
                running > 0.0 ? diff[static_cast<std::size_t>(tau)] * tau / running : 1.0;
        }
        int best = -1;
        for (int tau = tau_min; tau <= tau_max; ++tau) {
            if (cmnd[static_cast<std::size_t>(tau)] < threshold) {
                while (tau + 1 <= tau_max &&
                       cmnd[static_cast<std::size_t>(tau + 1)] < cmnd[static_cast<std::size_t>(tau)])
                    ++tau;
                best = tau;
                break;
            }
        }
        if (best < 0) return -1.0;
        double tau_refined = static_cast<double>(best);
        if (best > tau_min && best < tau_max) {
            const double a = cmnd[static_cast<std::size_t>(best - 1)];
            const double b = cmnd[static_cast<std::size_t>(best)];
            const double c = cmnd[static_cast<std::size_t>(best + 1)];
            const double denom = a - 2.0 * b + c;
            if (std::abs(denom) > 1e-12) tau_refined += 0.5 * (a - c) / denom;
        }
        return tau_refined;
    };

    for (int t = 0; t < frames; ++t) {
        const std::int64_t center = static_cast<std::int64_t>(t) * cfg.hop_size;
        const std::int64_t start = center - (window + tau_max) / 2;
        double energy = 0.0;
        for (int j = 0; j < window + tau_max; ++j) {
            const std::int64_t idx = start + j;
            x[static_cast<std::size_t>(j)] =
                (idx >= 0 && idx < n) ? static_cast<double>(audio.samples[static_cast<std::size_t>(idx)]) : 0.0;
            energy += x[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
        }
        if (energy / (window + tau_max) < 1e-10) continue;  // silence

        const double tau_full = first_dip(0, window, kThreshold);
        if (tau_full < 0.0) continue;  // unvoiced

        // Stationarity gate: a pitch change inside the window can leave the
        // two-pitch mixture periodic at the lower pitch (musical intervals are
        // near-rational), so the full-window dip alone is not trustworthy.
        // Both half-windows must find the same period on their own.
        const double tau_left = first_dip(0, window / 2, 2.0 * kThreshold);
        const double tau_right = first_dip(window / 2, window / 2, 2.0 * kThreshold);
        if (tau_left < 0.0 || tau_right < 0.0) continue;
        if (std::abs(tau_left - tau_right) > 0.2 * std::min(tau_left, tau_right)) continue;

        const double f0 = cfg.sample_rate / tau_full;
        if (f0 >= f0_floor && f0 <= f0_ceil) {
            out.f0_hz[static_cast<std::size_t>(t)] = f0;
            out.voiced[static_cast<std::size_t>(t)] = true;
        }
    }

    out.lf0 = detail::interpolate_lf0(out.f0_hz, std::log(std::max(cfg.fmin, 10.0)));
    return out;
}

/// Build an F0Contour directly from a known per-frame contour (0 = unvoiced),
/// applying the same LF0 interpolation convention as extract_f0.
inline F0Contour contour_from_f0(const std::vector<double>& f0_hz, const SpectrogramConfig& cfg) {
    F0Contour out;
    out.f0_hz = f0_hz;
    const int frames = static_cast<int>(f0_hz.size());
    out.voiced.resize(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t)
        out.voiced[static_cast<std::size_t>(t)] = f0_hz[static_cast<std::size_t>(t)] > 0.0;
    out.lf0 = detail::interpolate_lf0(out.f0_hz, std::log(std::max(cfg.fmin, 10.0)));
    return out;
}

}  // namespace aria
