#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "aria/config.hpp"
#include "aria/prior.hpp"
#include "aria/rng.hpp"
#include "support/fd.hpp"

using namespace aria;

namespace {

/// Tiny architecture so FD sweeps stay fast.
ArchConfig tiny_arch() {
    ArchConfig a;
    a.phoneme_count = 6;
    a.hidden = 8;
    a.emb_phoneme = 4;
    a.emb_pitch = 2;
    a.emb_dur = 2;
    a.pitch_range = 16;
    a.dur_buckets = 8;
    a.heads = 2;
    a.ffn_hidden = 16;
    a.text_blocks = 1;
    a.f0_blocks = 1;
    a.frame_prior_blocks = 1;
    a.phoneme_pred_blocks = 1;
    a.latent_dim = 4;
    a.flow_depth = 2;
    a.flow_hidden = 8;
    return a;
}

MusicScore tiny_score() {
    MusicScore s;
    s.phonemes = {1, 3, 0, 5, 2};
    s.note_pitch = {7, 7, 0, 12, 9};
    s.note_dur = {4, 4, 3, 6, 2};
    s.phn_dur = {3, 1, 3, 5, 2};
    return s;
}

template <typename S>
typename Graph<S>::Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    typename Graph<S>::Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = static_cast<S>(rng.normal(0.0, scale));
    return m;
}

template <typename S>
void randomize(ParamStore<S>& ps, std::uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    for (Param<S>* p : ps.all())
        for (int i = 0; i < p->value.rows(); ++i)
            for (int j = 0; j < p->value.cols(); ++j)
                p->value(i, j) = static_cast<S>(rng.normal(0.0, scale));
}

}  // namespace

TEST_CASE("duration buckets follow the log-spaced formula") {
    // independent oracle: smallest b with 2^(b/4) > d lies one past the bucket
    for (int d = 1; d <= 400; ++d) {
        const int got = duration_bucket(d, 32);
        const int expect =
            std::min(31, static_cast<int>(std::floor(4.0 * std::log2(static_cast<double>(d)))));
        REQUIRE(got == expect);
        REQUIRE(got >= 0);
        REQUIRE(got < 32);
    }
    REQUIRE(duration_bucket(1, 32) == 0);
    REQUIRE(duration_bucket(2, 32) == 4);
    REQUIRE(duration_bucket(256, 32) == 31);  // would be 32, clamps to the top bucket
    REQUIRE_THROWS_AS(duration_bucket(0, 32), ValidationError);
}

TEST_CASE("duration buckets are monotone in the duration") {
    int prev = 0;
    for (int d = 1; d <= 1000; ++d) {
        const int b = duration_bucket(d, 32);
        REQUIRE(b >= prev);
        prev = b;
    }
}

TEST_CASE("text encoder emits one hidden row per phoneme") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(5);
    const TextEncoder<float> enc(ps, "text_encoder", a);
    const MusicScore s = tiny_score();
    Graph<float> g;
    const int h = enc.forward(g, s);
    REQUIRE(g.rows(h) == s.size());
    REQUIRE(g.cols(h) == a.hidden);
    REQUIRE(g.value(h).allFinite());
}

TEST_CASE("text encoder rejects out-of-range ids") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(5);
    const TextEncoder<float> enc(ps, "text_encoder", a);
    MusicScore s = tiny_score();
    s.phonemes[2] = a.inventory_size();  // one past the table
    Graph<float> g;
    REQUIRE_THROWS_AS(enc.forward(g, s), ValidationError);
}

TEST_CASE("duration predictor is exactly zero at initialization") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(7);
    const TextEncoder<float> enc(ps, "text_encoder", a);
    const DurationPredictor<float> dp(ps, "duration_predictor", a);
    Graph<float> g;
    const int r = dp.forward(g, enc.forward(g, tiny_score()));
    REQUIRE(g.rows(r) == tiny_score().size());
    REQUIRE(g.cols(r) == 1);
    REQUIRE(g.value(r).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("predicted_duration scales, rounds, and clamps") {
    // note-normalized: frames = round(r * note), floored at one frame
    REQUIRE(predicted_duration({0.3}, {10}) == std::vector<int>{3});
    REQUIRE(predicted_duration({0.55}, {10}) == std::vector<int>{6});
    REQUIRE(predicted_duration({0.04}, {10}) == std::vector<int>{1});   // rounds to 0, clamps
    REQUIRE(predicted_duration({-2.0}, {10}) == std::vector<int>{1});   // negative clamps
    REQUIRE(predicted_duration({1.0, 2.0}, {7, 3}) == std::vector<int>({7, 6}));
    // raw mode ignores the note length
    REQUIRE(predicted_duration({7.4}, {10}, false) == std::vector<int>{7});
    REQUIRE(predicted_duration({7.5}, {10}, false) == std::vector<int>{8});
    REQUIRE_THROWS_AS(predicted_duration({1.0}, {2, 3}), ValidationError);
    REQUIRE_THROWS_AS(predicted_duration({1.0}, {0}), ValidationError);
}

TEST_CASE("predicted_duration is monotone in the regression output") {
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        const int note = static_cast<int>(rng.uniform_int(1, 80));
        int prev = 0;
        for (double r = -0.5; r < 3.0; r += 0.05) {
            const int d = predicted_duration({r}, {note})[0];
            REQUIRE(d >= prev);
            REQUIRE(d >= 1);
            prev = d;
        }
    }
}

TEST_CASE("duration loss closed forms") {
    Graph<double> g;
    // r=1 on a 10-frame note labeled 7 frames: |10-7| = 3
    const int r1 = g.constant(Eigen::MatrixXd::Ones(1, 1));
    REQUIRE(g.value(duration_loss(g, r1, {10}, {7}))(0, 0) == Catch::Approx(3.0).epsilon(1e-9));
    // perfect prediction floors at sqrt(1e-12)
    Eigen::MatrixXd exact(2, 1);
    exact << 0.5, 2.0;
    const int r2 = g.constant(exact);
    REQUIRE(g.value(duration_loss(g, r2, {10, 3}, {5, 6}))(0, 0) ==
            Catch::Approx(1e-6).epsilon(1e-6));
    // one frame off on each of N phonemes: sqrt(N)
    const int n = 9;
    const int r3 = g.constant(Eigen::MatrixXd::Ones(n, 1));
    std::vector<int> notes(n, 4), labels(n, 5);
    REQUIRE(g.value(duration_loss(g, r3, notes, labels))(0, 0) ==
            Catch::Approx(std::sqrt(static_cast<double>(n))).epsilon(1e-9));
    // raw mode compares r directly to the label
    Eigen::MatrixXd raw(1, 1);
    raw << 4.0;
    REQUIRE(g.value(duration_loss(g, g.constant(raw), {99}, {6}, false))(0, 0) ==
            Catch::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("duration loss validates shapes") {
    Graph<double> g;
    const int wide = g.constant(Eigen::MatrixXd::Ones(3, 2));
    REQUIRE_THROWS_AS(duration_loss(g, wide, {1, 1, 1}, {1, 1, 1}), ValidationError);
    const int ok = g.constant(Eigen::MatrixXd::Ones(3, 1));
    REQUIRE_THROWS_AS(duration_loss(g, ok, {1, 1}, {1, 1, 1}), ValidationError);
}

TEST_CASE("length regulator repeats rows per duration") {
    Graph<double> g;
    Eigen::MatrixXd h(3, 2);
    h << 1, 2, 3, 4, 5, 6;
    const int out = length_regulator(g, g.constant(h), {2, 1, 3});
    // independent expansion
    Eigen::MatrixXd expect(6, 2);
    int row = 0;
    const std::vector<int> dur = {2, 1, 3};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < dur[static_cast<std::size_t>(i)]; ++k) expect.row(row++) = h.row(i);
    REQUIRE(g.value(out) == expect);
}

TEST_CASE("length regulator validates durations") {
    Graph<double> g;
    const int h = g.constant(Eigen::MatrixXd::Ones(3, 2));
    REQUIRE_THROWS_AS(length_regulator(g, h, {1, 2}), ValidationError);
    REQUIRE_THROWS_AS(length_regulator(g, h, {1, 0, 2}), ValidationError);
}

TEST_CASE("f0 predictor starts at the all-zero contour") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(9);
    const F0Predictor<float> f0(ps, "f0_predictor", a);
    Graph<float> g;
    Rng rng(3);
    const int h = g.constant(random_mat<float>(20, a.hidden, rng));
    const int out = f0.forward(g, h);
    REQUIRE(g.rows(out) == 20);
    REQUIRE(g.cols(out) == 1);
    REQUIRE(g.value(out).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("lf0 loss closed forms and validation") {
    Graph<double> g;
    Rng rng(4);
    const Eigen::MatrixXd c = random_mat<double>(12, 1, rng);
    const int a = g.constant(c);
    REQUIRE(g.value(lf0_loss(g, a, g.constant(c)))(0, 0) == Catch::Approx(1e-6).epsilon(1e-6));
    const int shifted = g.constant(Eigen::MatrixXd(c.array() + 1.0));
    REQUIRE(g.value(lf0_loss(g, a, shifted))(0, 0) ==
            Catch::Approx(std::sqrt(12.0)).epsilon(1e-9));
    REQUIRE_THROWS_AS(lf0_loss(g, a, g.constant(Eigen::MatrixXd::Zero(5, 1))), ValidationError);
    REQUIRE_THROWS_AS(lf0_loss(g, a, g.constant(Eigen::MatrixXd::Zero(12, 2))), ValidationError);
}

TEST_CASE("frame prior network shape and zero-init contract") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(11);
    const FramePriorNetwork<float> fpn(ps, "frame_prior", a);
    Graph<float> g;
    Rng rng(6);
    const int T = 14;
    const int h = g.constant(random_mat<float>(T, a.hidden, rng));
    const int lf0 = g.constant(random_mat<float>(T, 1, rng));
    const auto [mu, log_sigma] = fpn.forward(g, h, lf0);
    REQUIRE(g.rows(mu) == T);
    REQUIRE(g.cols(mu) == a.latent_dim);
    REQUIRE(g.rows(log_sigma) == T);
    REQUIRE(g.cols(log_sigma) == a.latent_dim);
    // zero-init gaussian head: the untrained prior is exactly N(0, I)
    REQUIRE(g.value(mu).cwiseAbs().maxCoeff() == 0.0f);
    REQUIRE(g.value(log_sigma).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("frame prior network actually uses the lf0 guidance") {
    const ArchConfig a = tiny_arch();
    ParamStore<double> ps(13);
    const FramePriorNetwork<double> fpn(ps, "frame_prior", a);
    randomize(ps, 23);
    Graph<double> g;
    Rng rng(8);
    const int T = 10;
    const Eigen::MatrixXd hmat = random_mat<double>(T, a.hidden, rng);
    const Eigen::MatrixXd lf0a = random_mat<double>(T, 1, rng);
    const Eigen::MatrixXd lf0b = lf0a.array() + 0.5;
    const auto [mu_a, ls_a] = fpn.forward(g, g.constant(hmat), g.constant(lf0a));
    const auto [mu_b, ls_b] = fpn.forward(g, g.constant(hmat), g.constant(lf0b));
    (void)ls_a;
    (void)ls_b;
    REQUIRE((g.value(mu_a) - g.value(mu_b)).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("frame prior network lf0 plumbing is validated") {
    const ArchConfig a = tiny_arch();
    ParamStore<double> ps(15);
    const FramePriorNetwork<double> with_lf0(ps, "frame_prior", a);
    ParamStore<double> ps2(15);
    const FramePriorNetwork<double> without_lf0(ps2, "frame_prior", a, /*use_lf0=*/false);
    Graph<double> g;
    Rng rng(9);
    const int h = g.constant(random_mat<double>(6, a.hidden, rng));
    const int lf0 = g.constant(random_mat<double>(6, 1, rng));
    const int lf0_short = g.constant(random_mat<double>(4, 1, rng));
    REQUIRE_THROWS_AS(with_lf0.forward(g, h, -1), ValidationError);
    REQUIRE_THROWS_AS(with_lf0.forward(g, h, lf0_short), ValidationError);
    REQUIRE_THROWS_AS(without_lf0.forward(g, h, lf0), ValidationError);
    REQUIRE_NOTHROW(without_lf0.forward(g, h, -1));
}

TEST_CASE("frame prior network conv variant runs and has no attention blocks") {
    ArchConfig a = tiny_arch();
    a.frame_prior_conv = true;
    ParamStore<double> ps(17);
    const FramePriorNetwork<double> fpn(ps, "frame_prior", a);
    REQUIRE(fpn.fft_blocks.empty());
    REQUIRE(fpn.conv_blocks.size() == static_cast<std::size_t>(a.frame_prior_blocks));
    randomize(ps, 29);
    Graph<double> g;
    Rng rng(10);
    const int T = 9;
    const auto [mu, log_sigma] = fpn.forward(g, g.constant(random_mat<double>(T, a.hidden, rng)),
                                             g.constant(random_mat<double>(T, 1, rng)));
    REQUIRE(g.rows(mu) == T);
    REQUIRE(g.cols(log_sigma) == a.latent_dim);
    REQUIRE(g.value(mu).allFinite());
}

TEST_CASE("phoneme predictor emits inventory-plus-blank logits") {
    const ArchConfig a = tiny_arch();
    ParamStore<float> ps(19);
    const PhonemePredictor<float> pp(ps, "phoneme_predictor", a);
    Graph<float> g;
    Rng rng(11);
    const int z = g.constant(random_mat<float>(13, a.latent_dim, rng));
    const int logits = pp.forward(g, z);
    REQUIRE(g.rows(logits) == 13);
    REQUIRE(g.cols(logits) == a.ctc_classes());
    REQUIRE(a.ctc_classes() == a.phoneme_count + 2);
}

TEST_CASE("score-side gradients agree with finite differences") {
    const ArchConfig a = tiny_arch();
    ParamStore<double> ps(31);
    const TextEncoder<double> enc(ps, "text_encoder", a);
    const DurationPredictor<double> dp(ps, "duration_predictor", a);
    randomize(ps, 37, 0.2);
    const MusicScore s = tiny_score();
    auto build = [&](Graph<double>& g) {
        const int h = enc.forward(g, s);
        const int r = dp.forward(g, h);
        return duration_loss(g, r, s.note_dur, s.phn_dur);
    };
    Rng rng(41);
    const auto failures = fdtest::check_param_gradients(ps, build, 8, rng);
    for (const auto& f : failures)
        UNSCOPED_INFO(f.param << "[" << f.coord << "] fd=" << f.fd << " bp=" << f.bp);
    REQUIRE(failures.empty());
}

TEST_CASE("frame prior and f0 gradients agree with finite differences") {
    const ArchConfig a = tiny_arch();
    ParamStore<double> ps(43);
    const F0Predictor<double> f0(ps, "f0_predictor", a);
    const FramePriorNetwork<double> fpn(ps, "frame_prior", a);
    randomize(ps, 47, 0.2);
    Rng data_rng(51);
    const int T = 7;
    const Eigen::MatrixXd hmat = random_mat<double>(T, a.hidden, data_rng);
    const Eigen::MatrixXd gt = random_mat<double>(T, 1, data_rng);
    const Eigen::MatrixXd w_mu = random_mat<double>(T, a.latent_dim, data_rng);
    const Eigen::MatrixXd w_ls = random_mat<double>(T, a.latent_dim, data_rng);
    auto build = [&](Graph<double>& g) {
        const int h = g.constant(hmat);
        const int pred = f0.forward(g, h);
        const auto [mu, log_sigma] = fpn.forward(g, h, pred);
        const int head = g.add(g.sum_all(g.mul(mu, g.constant(w_mu))),
                               g.sum_all(g.mul(log_sigma, g.constant(w_ls))));
        return g.add(head, lf0_loss(g, pred, g.constant(gt)));
    };
    Rng rng(53);
    const auto failures = fdtest::check_param_gradients(ps, build, 8, rng);
    for (const auto& f : failures)
        UNSCOPED_INFO(f.param << "[" << f.coord << "] fd=" << f.fd << " bp=" << f.bp);
    REQUIRE(failures.empty());
}
