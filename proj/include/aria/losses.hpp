#pragma once

#include <cmath>
#include <vector>

#include "aria/autograd.hpp"
#include "aria/dsp.hpp"
#include "aria/error.hpp"
#include "aria/posterior.hpp"

namespace aria {

/// Differentiable mel-spectrogram head for the reconstruction loss. The
/// window, DFT bases and mel filterbank are precomputed constants shared
/// across steps; the per-step graph only does framing, two matmuls and the
/// magnitude/log path. Matches mel_spectrogram() from the analysis code.
template <typename S>
struct MelHead {
    using Mat = typename Graph<S>::Mat;

    SpectrogramConfig cfg;
    Mat window;    // 1 x fft
    Mat dft_cos;   // fft x bins
    Mat dft_sin;   // fft x bins (negative sin, matching exp(-i w n))
    Mat mel_fb_t;  // bins x mel

    explicit MelHead(const SpectrogramConfig& c) : cfg(c) {
        const int fft = cfg.fft_size;
        const int bins = fft / 2 + 1;
        const VecD w = detail::padded_hann(cfg.win_size, fft);
        window = Mat(1, fft);
        for (int i = 0; i < fft; ++i) window(0, i) = static_cast<S>(w(i));
        dft_cos = Mat(fft, bins);
        dft_sin = Mat(fft, bins);
        for (int n = 0; n < fft; ++n)
            for (int k = 0; k < bins; ++k) {
                const double ang = -2.0 * M_PI * static_cast<double>(k) * static_cast<double>(n) /
                                   static_cast<double>(fft);
                dft_cos(n, k) = static_cast<S>(std::cos(ang));
                dft_sin(n, k) = static_cast<S>(std::sin(ang));
            }
        const MatD fb = mel_filterbank(cfg);
        mel_fb_t = Mat(bins, cfg.mel_bins);
        for (int m = 0; m < cfg.mel_bins; ++m)
            for (int b = 0; b < bins; ++b) mel_fb_t(b, m) = static_cast<S>(fb(m, b));
    }

    /// audio: samples x 1 node -> frames x mel_bins log-mel node.
    int forward(Graph<S>& g, int audio) const {
        if (g.cols(audio) != 1) throw ValidationError("mel head: audio must be a column vector");
        const int n_frames = frame_count(g.rows(audio), cfg);
        const int frames = g.frame_signal(audio, cfg.fft_size, cfg.hop_size, n_frames);
        const int windowed = g.mul_rowvec(frames, g.constant(window));
        const int re = g.matmul(windowed, g.constant(dft_cos));
        const int im = g.matmul(windowed, g.constant(dft_sin));
        const int mag = g.sqrt_shift(g.add(g.square(re), g.square(im)), S(1e-18));
        return g.log_floor(g.matmul(mag, g.constant(mel_fb_t)), S(kMelLogFloor));
    }
};

/// Mean absolute difference between two log-mel nodes (Eq.-style L1 recon).
template <typename S>
int recon_loss(Graph<S>& g, int mel_ref, int mel_gen) {
    if (g.rows(mel_ref) != g.rows(mel_gen) || g.cols(mel_ref) != g.cols(mel_gen))
        throw ValidationError("recon_loss: mel shapes differ");
    return g.mean_all(g.abs_op(g.sub(mel_ref, mel_gen)));
}

/// Single-sample KL estimate between the posterior q(z|y) and the
/// flow-transformed prior: mean over frames and dims of
///   log sigma_p - log sigma_q - eps^2/2 + ((f(z) - mu_p)/sigma_p)^2 / 2
/// minus the flow log-determinant spread over the same element count.
template <typename S>
int kl_loss(Graph<S>& g, int z, int mu_q, int log_sigma_q, int f_z, int logdet, int mu_p,
            int log_sigma_p) {
    const int T = g.rows(z);
    const int D = g.cols(z);
    for (int n : {mu_q, log_sigma_q, f_z, mu_p, log_sigma_p})
        if (g.rows(n) != T || g.cols(n) != D)
            throw ValidationError("kl_loss: frame/dim mismatch between posterior and prior");
    const int eps = g.mul(g.sub(z, mu_q), g.exp_op(g.scale(log_sigma_q, S(-1))));
    const int whitened = g.mul(g.sub(f_z, mu_p), g.exp_op(g.scale(log_sigma_p, S(-1))));
    const int per_elem = g.add(g.sub(log_sigma_p, log_sigma_q),
                               g.scale(g.sub(g.square(whitened), g.square(eps)), S(0.5)));
    const S inv_elems = S(1) / static_cast<S>(static_cast<double>(T) * static_cast<double>(D));
    return g.sub(g.mean_all(per_elem), g.scale(logdet, inv_elems));
}

/// Least-squares GAN discriminator loss: sum over sub-discriminators of
/// mean((D(y) - 1)^2) + mean(D(G(z))^2).
template <typename S>
int adv_d_loss(Graph<S>& g, const std::vector<DiscriminatorOutput>& real,
               const std::vector<DiscriminatorOutput>& fake) {
    if (real.size() != fake.size() || real.empty())
        throw ValidationError("adv_d_loss: sub-discriminator count mismatch");
    int total = -1;
    for (std::size_t i = 0; i < real.size(); ++i) {
        const int lr = g.mean_all(g.square(g.add_scalar(real[i].score, S(-1))));
        const int lf = g.mean_all(g.square(fake[i].score));
        const int term = g.add(lr, lf);
        total = total < 0 ? term : g.add(total, term);
    }
    return total;
}

/// Least-squares GAN generator loss: sum over sub-discriminators of
/// mean((D(G(z)) - 1)^2).
template <typename S>
int adv_g_loss(Graph<S>& g, const std::vector<DiscriminatorOutput>& fake) {
    if (fake.empty()) throw ValidationError("adv_g_loss: no sub-discriminators");
    int total = -1;
    for (const auto& d : fake) {
        const int term = g.mean_all(g.square(g.add_scalar(d.score, S(-1))));
        total = total < 0 ? term : g.add(total, term);
    }
    return total;
}

/// Sum over all layers of all sub-discriminators of the mean absolute
/// difference between fake and real feature maps. Real features are re-read
/// as constants, so no gradient ever reaches the discriminator through the
/// real branch.
template <typename S>
int feature_matching_loss(Graph<S>& g, const std::vector<DiscriminatorOutput>& real,
                          const std::vector<DiscriminatorOutput>& fake) {
    if (real.size() != fake.size() || real.empty())
        throw ValidationError("feature_matching_loss: sub-discriminator count mismatch");
    int total = -1;
    for (std::size_t i = 0; i < real.size(); ++i) {
        if (real[i].fmaps.size() != fake[i].fmaps.size())
            throw ValidationError("feature_matching_loss: layer count mismatch");
        for (std::size_t l = 0; l < real[i].fmaps.size(); ++l) {
            const int ref = g.constant(g.value(real[i].fmaps[l]));
            const int term = g.mean_all(g.abs_op(g.sub(fake[i].fmaps[l], ref)));
            total = total < 0 ? term : g.add(total, term);
        }
    }
    return total;
}

}  // namespace aria
