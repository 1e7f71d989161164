#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "aria/config.hpp"
#include "aria/dsp.hpp"
#include "aria/posterior.hpp"
#include "aria/rng.hpp"
#include "support/fd.hpp"

using namespace aria;

namespace {

/// Small spectrogram/latent sizes so conv stacks stay cheap.
ArchConfig tiny_arch() {
    ArchConfig a;
    a.latent_dim = 4;
    a.posterior_layers = 2;
    a.posterior_channels = 5;
    a.posterior_kernel = 5;
    a.gen_channels = 16;
    a.upsample_rates = {8, 4, 2, 2};
    a.resblock_kernels = {3};
    a.resblock_dilations = {1, 3};
    a.mpd_periods = {2, 3};
    a.disc_channels = {2, 3};
    a.msd_scales = 2;
    return a;
}

template <typename S>
typename Graph<S>::Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    typename Graph<S>::Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = static_cast<S>(rng.normal(0.0, scale));
    return m;
}

/// Positive "magnitude" input for the posterior.
template <typename S>
typename Graph<S>::Mat random_spec(int frames, int bins, Rng& rng, double hi = 3.0) {
    typename Graph<S>::Mat m(frames, bins);
    for (int i = 0; i < frames; ++i)
        for (int j = 0; j < bins; ++j) m(i, j) = static_cast<S>(rng.uniform(0.0, hi));
    return m;
}

template <typename S>
void randomize(ParamStore<S>& ps, std::uint64_t seed, double scale = 0.2) {
    Rng rng(seed);
    for (Param<S>* p : ps.all())
        for (int i = 0; i < p->value.rows(); ++i)
            for (int j = 0; j < p->value.cols(); ++j)
                p->value(i, j) = static_cast<S>(rng.normal(0.0, scale));
}

}  // namespace

TEST_CASE("posterior starts at the standard normal and respects the noise") {
    const ArchConfig a = tiny_arch();
    const int bins = 9, T = 12;
    ParamStore<float> ps(3);
    const PosteriorEncoder<float> enc(ps, "posterior", bins, a);
    Graph<float> g;
    Rng rng(5);
    const int spec = g.constant(random_spec<float>(T, bins, rng));
    const int zero_noise = g.constant(Graph<float>::Mat::Zero(T, a.latent_dim));
    const LatentNodes lat = enc.forward(g, spec, zero_noise);
    REQUIRE(g.rows(lat.z) == T);
    REQUIRE(g.cols(lat.z) == a.latent_dim);
    // zero-init projection head: mu = 0, log_sigma = 0 exactly
    REQUIRE(g.value(lat.mu).cwiseAbs().maxCoeff() == 0.0f);
    REQUIRE(g.value(lat.log_sigma).cwiseAbs().maxCoeff() == 0.0f);
    // with zero noise the draw collapses onto the mean
    REQUIRE((g.value(lat.z) - g.value(lat.mu)).cwiseAbs().maxCoeff() == 0.0f);
    // with unit log-sigma == 0, z = mu + noise
    const auto n = random_mat<float>(T, a.latent_dim, rng);
    const LatentNodes lat2 = enc.forward(g, spec, g.constant(n));
    REQUIRE((g.value(lat2.z) - (g.value(lat2.mu) + n)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("posterior z composes mu, sigma, and noise after training starts") {
    const ArchConfig a = tiny_arch();
    const int bins = 7, T = 8;
    ParamStore<double> ps(7);
    const PosteriorEncoder<double> enc(ps, "posterior", bins, a);
    randomize(ps, 11);
    Graph<double> g;
    Rng rng(9);
    const auto noise = random_mat<double>(T, a.latent_dim, rng);
    const LatentNodes lat = enc.forward(g, g.constant(random_spec<double>(T, bins, rng)),
                                        g.constant(noise));
    const Eigen::MatrixXd expect =
        g.value(lat.mu) + g.value(lat.log_sigma).array().exp().matrix().cwiseProduct(noise);
    REQUIRE((g.value(lat.z) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("posterior stays finite on loud input thanks to log compression") {
    const ArchConfig a = tiny_arch();
    const int bins = 9, T = 10;
    ParamStore<float> ps(13);
    const PosteriorEncoder<float> enc(ps, "posterior", bins, a);
    randomize(ps, 17, 0.3);
    Graph<float> g;
    Rng rng(15);
    // raw linear magnitudes spanning silence to very loud
    auto spec = random_spec<float>(T, bins, rng, 1e4);
    spec(0, 0) = 0.0f;
    const LatentNodes lat =
        enc.forward(g, g.constant(spec), g.constant(random_mat<float>(T, a.latent_dim, rng)));
    REQUIRE(g.value(lat.z).allFinite());
    REQUIRE(g.value(lat.log_sigma).cwiseAbs().maxCoeff() < 50.0f);
}

TEST_CASE("posterior validates the noise shape") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(19);
    const PosteriorEncoder<float> enc(ps, "posterior", 6, a);
    Graph<float> g;
    Rng rng(21);
    const int spec = g.constant(random_spec<float>(10, 6, rng));
    REQUIRE_THROWS_AS(
        enc.forward(g, spec, g.constant(Graph<float>::Mat::Zero(9, a.latent_dim))),
        ValidationError);
    REQUIRE_THROWS_AS(
        enc.forward(g, spec, g.constant(Graph<float>::Mat::Zero(10, a.latent_dim + 1))),
        ValidationError);
}

TEST_CASE("slice_latent maps frames to the matching sample interval") {
    Graph<float> g;
    Rng rng(23);
    const auto z = random_mat<float>(64, 4, rng);
    const int zn = g.constant(z);
    const SlicedLatent s = slice_latent(g, zn, SliceWindow{10, 32}, 128);
    REQUIRE(g.rows(s.z_slice) == 32);
    REQUIRE(s.sample_begin == 10 * 128);
    REQUIRE(s.sample_end == 42 * 128);
    REQUIRE((g.value(s.z_slice) - z.middleRows(10, 32)).cwiseAbs().maxCoeff() == 0.0f);
    // bounds
    REQUIRE_THROWS_AS(slice_latent(g, zn, SliceWindow{-1, 8}, 128), ValidationError);
    REQUIRE_THROWS_AS(slice_latent(g, zn, SliceWindow{0, 0}, 128), ValidationError);
    REQUIRE_THROWS_AS(slice_latent(g, zn, SliceWindow{33, 32}, 128), ValidationError);
    REQUIRE_THROWS_AS(slice_latent(g, zn, SliceWindow{0, 8}, 0), ValidationError);
}

TEST_CASE("generator upsamples frames by exactly the hop size") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(29);
    const Generator<float> gen(ps, "generator", a);
    REQUIRE(gen.hop == 8 * 4 * 2 * 2);
    Graph<float> g;
    Rng rng(31);
    for (int frames : {1, 5, 32}) {
        const int audio = gen.forward(g, g.constant(random_mat<float>(frames, a.latent_dim, rng)));
        REQUIRE(g.rows(audio) == frames * gen.hop);
        REQUIRE(g.cols(audio) == 1);
        REQUIRE(g.value(audio).cwiseAbs().maxCoeff() < 1.0f);  // tanh bound
    }
}

TEST_CASE("generator doubles its output when the input doubles") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(37);
    const Generator<float> gen(ps, "generator", a);
    Graph<float> g;
    Rng rng(41);
    const int a1 = gen.forward(g, g.constant(random_mat<float>(6, a.latent_dim, rng)));
    const int a2 = gen.forward(g, g.constant(random_mat<float>(12, a.latent_dim, rng)));
    REQUIRE(g.rows(a2) == 2 * g.rows(a1));
}

TEST_CASE("generator rejects odd upsample rates") {
    ArchConfig a = tiny_arch();
    a.upsample_rates = {3, 2};
    ParamStore<float> ps(43);
    REQUIRE_THROWS_AS(Generator<float>(ps, "generator", a), ConfigError);
}

TEST_CASE("discriminator set structure matches the configuration") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(47);
    const DiscriminatorSet<float> disc(ps, "disc", a);
    Graph<float> g;
    Rng rng(53);
    const int audio = g.constant(random_mat<float>(512, 1, rng, 0.3));
    const auto outs = disc.forward(g, audio);
    REQUIRE(outs.size() == a.mpd_periods.size() + static_cast<std::size_t>(a.msd_scales));
    for (std::size_t i = 0; i < outs.size(); ++i) {
        REQUIRE(outs[i].score >= 0);
        REQUIRE(g.value(outs[i].score).allFinite());
        // one feature map per conv layer plus the score head
        REQUIRE(outs[i].fmaps.size() == a.disc_channels.size() + 1);
        const bool is_period = i < a.mpd_periods.size();
        REQUIRE(g.cols(outs[i].score) ==
                (is_period ? a.mpd_periods[i] : 1));
    }
}

TEST_CASE("discriminator set is deterministic") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(59);
    const DiscriminatorSet<float> disc(ps, "disc", a);
    Graph<float> g;
    Rng rng(61);
    const auto wav = random_mat<float>(300, 1, rng, 0.5);
    const auto out1 = disc.forward(g, g.constant(wav));
    const auto out2 = disc.forward(g, g.constant(wav));
    for (std::size_t i = 0; i < out1.size(); ++i) {
        REQUIRE(g.value(out1[i].score) == g.value(out2[i].score));
        for (std::size_t j = 0; j < out1[i].fmaps.size(); ++j)
            REQUIRE(g.value(out1[i].fmaps[j]) == g.value(out2[i].fmaps[j]));
    }
}

TEST_CASE("discriminator set rejects malformed audio") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(67);
    const DiscriminatorSet<float> disc(ps, "disc", a);
    Graph<float> g;
    REQUIRE_THROWS_AS(disc.forward(g, g.constant(Graph<float>::Mat::Zero(1, 1))), ValidationError);
    REQUIRE_THROWS_AS(disc.forward(g, g.constant(Graph<float>::Mat::Zero(64, 2))), ValidationError);
}

TEST_CASE("posterior gradients agree with finite differences") {
    ArchConfig a = tiny_arch();
    a.posterior_layers = 2;
    const int bins = 5, T = 6;
    ParamStore<double> ps(71);
    const PosteriorEncoder<double> enc(ps, "posterior", bins, a);
    randomize(ps, 73);
    Rng data_rng(79);
    const Eigen::MatrixXd spec = random_spec<double>(T, bins, data_rng);
    const Eigen::MatrixXd noise = random_mat<double>(T, a.latent_dim, data_rng);
    const Eigen::MatrixXd w = random_mat<double>(T, a.latent_dim, data_rng);
    auto build = [&](Graph<double>& g) {
        const LatentNodes lat = enc.forward(g, g.constant(spec), g.constant(noise));
        return g.sum_all(g.mul(lat.z, g.constant(w)));
    };
    Rng rng(83);
    const auto failures = fdtest::check_param_gradients(ps, build, 8, rng);
    for (const auto& f : failures)
        UNSCOPED_INFO(f.param << "[" << f.coord << "] fd=" << f.fd << " bp=" << f.bp);
    REQUIRE(failures.empty());
}

TEST_CASE("generator-discriminator gradients agree with finite differences") {
    ArchConfig a = tiny_arch();
    a.gen_channels = 8;
    a.upsample_rates = {2, 2};
    a.mpd_periods = {2};
    a.msd_scales = 1;
    ParamStore<double> ps(89);
    const Generator<double> gen(ps, "generator", a);
    const DiscriminatorSet<double> disc(ps, "disc", a);
    randomize(ps, 97, 0.15);
    Rng data_rng(101);
    const Eigen::MatrixXd z = random_mat<double>(8, a.latent_dim, data_rng);
    auto build = [&](Graph<double>& g) {
        const int audio = gen.forward(g, g.constant(z));
        const auto outs = disc.forward(g, audio);
        int loss = -1;
        for (const auto& o : outs) {
            const int term = g.add(g.sum_all(g.square(o.score)), g.sum_all(o.fmaps[0]));
            loss = loss < 0 ? term : g.add(loss, term);
        }
        return loss;
    };
    Rng rng(103);
    const auto failures = fdtest::check_param_gradients(ps, build, 6, rng, 2e-3);
    for (const auto& f : failures)
        UNSCOPED_INFO(f.param << "[" << f.coord << "] fd=" << f.fd << " bp=" << f.bp);
    REQUIRE(failures.empty());
}
