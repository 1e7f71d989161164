#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "aria/autograd.hpp"
#include "aria/nn.hpp"
#include "aria/rng.hpp"
#include "support/fd.hpp"

using namespace aria;
using Mat = Graph<double>::Mat;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
    return m;
}

/// Run an FD check for a loss built from a single parameter matrix.
template <typename F>
void fd_single(int rows, int cols, F&& make_loss, std::uint64_t seed = 1, double init_scale = 0.7) {
    ParamStore<double> ps(seed);
    Param<double>& p = ps.create("x", rows, cols, init_scale);
    Rng rng(seed + 100);
    const auto failures = fdtest::check_param_gradients(
        ps, [&](Graph<double>& g) { return make_loss(g, g.param(p)); }, 24, rng);
    for (const auto& f : failures)
        UNSCOPED_INFO(f.param << "[" << f.coord << "] fd=" << f.fd << " bp=" << f.bp);
    REQUIRE(failures.empty());
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(7);
    const Mat other = random_mat(5, 4, rng);

    fd_single(5, 4, [&](Graph<double>& g, int x) {
        const int c = g.constant(other);
        return g.mean_all(g.square(g.add(g.mul(x, c), g.sub(x, c))));
    });
    fd_single(5, 4, [&](Graph<double>& g, int x) {
        return g.sum_all(g.mul(g.scale(x, 1.7), g.add_scalar(x, 0.3)));
    });
    fd_single(5, 4, [&](Graph<double>& g, int x) {
        return g.mean_all(g.square(g.tanh_op(g.sigmoid(g.scale(x, 0.8)))));
    });
    fd_single(5, 4, [&](Graph<double>& g, int x) { return g.sum_all(g.exp_op(g.scale(x, 0.5))); });
    fd_single(5, 4, [&](Graph<double>& g, int x) { return g.sum_all(g.leaky_relu(x, 0.1)); });
    fd_single(5, 4, [&](Graph<double>& g, int x) {
        return g.sum_all(g.sqrt_shift(g.square(x), 1e-3));
    });
    fd_single(5, 4, [&](Graph<double>& g, int x) {
        // keep values above the floor so the kink is not sampled
        return g.sum_all(g.log_floor(g.add_scalar(g.square(x), 0.5), 1e-5));
    });
    fd_single(5, 4, [&](Graph<double>& g, int x) {
        // |x| at random continuous values never lands on 0
        return g.mean_all(g.abs_op(x));
    });
}

TEST_CASE("broadcast op gradients match finite differences") {
    Rng rng(8);
    const Mat base = random_mat(6, 3, rng);
    fd_single(1, 3, [&](Graph<double>& g, int v) {
        return g.mean_all(g.square(g.add_rowvec(g.constant(base), v)));
    });
    fd_single(1, 3, [&](Graph<double>& g, int v) {
        return g.mean_all(g.square(g.mul_rowvec(g.constant(base), v)));
    });
    const Mat vec = random_mat(1, 3, rng);
    fd_single(6, 3, [&](Graph<double>& g, int x) {
        const int v = g.constant(vec);
        return g.sum_all(g.mul_rowvec(g.add_rowvec(x, v), v));
    });
}

TEST_CASE("matmul gradients for every transpose combination") {
    Rng rng(9);
    for (const bool ta : {false, true})
        for (const bool tb : {false, true}) {
            // a is a 6x3 logical operand: pick storage dims so each view works
            const int ar = ta ? 3 : 6, ac = ta ? 6 : 3;
            const Mat bm = tb ? random_mat(5, 3, rng) : random_mat(3, 5, rng);
            fd_single(ar, ac, [&](Graph<double>& g, int x) {
                return g.mean_all(g.square(g.matmul(x, g.constant(bm), ta, tb)));
            });
        }
}

TEST_CASE("shape op gradients: slice, concat, pad, repeat, gather") {
    fd_single(7, 5, [&](Graph<double>& g, int x) {
        return g.sum_all(g.square(g.slice_rows(x, 2, 3)));
    });
    fd_single(7, 5, [&](Graph<double>& g, int x) {
        return g.sum_all(g.square(g.slice_cols(x, 1, 3)));
    });
    fd_single(4, 3, [&](Graph<double>& g, int x) {
        const int y = g.concat_cols({x, g.scale(x, 2.0), g.slice_cols(x, 0, 1)});
        return g.mean_all(g.square(y));
    });
    fd_single(4, 3, [&](Graph<double>& g, int x) {
        const int y = g.concat_rows({x, g.scale(x, -1.0)});
        return g.mean_all(g.square(y));
    });
    fd_single(4, 3, [&](Graph<double>& g, int x) {
        return g.mean_all(g.square(g.pad_rows(x, 2, 1)));
    });
    fd_single(3, 4, [&](Graph<double>& g, int x) {
        return g.mean_all(g.square(g.repeat_rows(x, {2, 1, 3})));
    });
    fd_single(6, 4, [&](Graph<double>& g, int x) {
        return g.mean_all(g.square(g.gather_rows(x, {0, 5, 2, 2, 1})));
    });
}

TEST_CASE("softmax and layer norm gradients") {
    Rng rng(4);
    const Mat probe = random_mat(5, 6, rng);
    fd_single(5, 6, [&](Graph<double>& g, int x) {
        const int sm = g.row_softmax(x);
        return g.mean_all(g.mul(sm, g.constant(probe)));
    });
    ParamStore<double> ps(11);
    Param<double>& x = ps.create("x", 5, 6, 0.9);
    Param<double>& gamma = ps.create("gamma", 1, 6, 0.5);
    Param<double>& beta = ps.create("beta", 1, 6, 0.5);
    Rng coord_rng(12);
    const auto failures = fdtest::check_param_gradients(
        ps,
        [&](Graph<double>& g) {
            const int ln = g.layer_norm(g.param(x), g.param(gamma), g.param(beta));
            return g.mean_all(g.mul(ln, g.constant(probe)));
        },
        24, coord_rng);
    REQUIRE(failures.empty());
}

TEST_CASE("conv1d gradients across stride, dilation and padding") {
    Rng rng(5);
    struct Case {
        int k, cin, cout, stride, dil, pad, T;
    };
    for (const Case c : {Case{3, 4, 5, 1, 1, 1, 9}, Case{5, 3, 2, 1, 2, 4, 12}, Case{5, 2, 3, 3, 1, 2, 14},
                         Case{1, 4, 4, 1, 1, 0, 6}}) {
        ParamStore<double> ps(21);
        Param<double>& x = ps.create("x", c.T, c.cin, 0.8);
        Param<double>& w = ps.create("w", c.k * c.cin, c.cout, 0.5);
        Rng coord_rng(22);
        const auto failures = fdtest::check_param_gradients(
            ps,
            [&](Graph<double>& g) {
                return g.mean_all(
                    g.square(g.conv1d(g.param(x), g.param(w), c.k, c.cin, c.stride, c.dil, c.pad)));
            },
            20, coord_rng);
        for (const auto& f : failures)
            UNSCOPED_INFO(f.param << "[" << f.coord << "] fd=" << f.fd << " bp=" << f.bp);
        REQUIRE(failures.empty());
    }
}

TEST_CASE("conv_transpose1d upsamples by exactly the stride and backprops") {
    ParamStore<double> ps(31);
    const int T = 6, cin = 3, cout = 2, r = 4;
    Param<double>& x = ps.create("x", T, cin, 0.8);
    Param<double>& w = ps.create("w", cin, 2 * r * cout, 0.5);
    {
        Graph<double> g;
        const int y = g.conv_transpose1d(g.param(x), g.param(w), 2 * r, cout, r, r / 2);
        REQUIRE(g.rows(y) == T * r);
        REQUIRE(g.cols(y) == cout);
    }
    Rng coord_rng(32);
    const auto failures = fdtest::check_param_gradients(
        ps,
        [&](Graph<double>& g) {
            return g.mean_all(g.square(g.conv_transpose1d(g.param(x), g.param(w), 2 * r, cout, r, r / 2)));
        },
        20, coord_rng);
    REQUIRE(failures.empty());
}

TEST_CASE("pooling, phase split and framing gradients") {
    fd_single(13, 3, [&](Graph<double>& g, int x) {
        return g.mean_all(g.square(g.avg_pool1d(x, 4, 2, 1)));
    });
    fd_single(11, 1, [&](Graph<double>& g, int x) {
        return g.mean_all(g.square(g.phase_split(x, 3)));
    });
    fd_single(40, 1, [&](Graph<double>& g, int x) {
        return g.mean_all(g.square(g.frame_signal(x, 16, 8, 1 + 40 / 8)));
    });
}

TEST_CASE("phase_split lays out phases like the brute-force reshape") {
    Graph<double> g;
    Mat x(7, 1);
    for (int i = 0; i < 7; ++i) x(i, 0) = i + 1;
    const int y = g.phase_split(g.constant(x), 3);
    REQUIRE(g.rows(y) == 3);
    REQUIRE(g.cols(y) == 3);
    REQUIRE(g.value(y)(0, 0) == 1.0);
    REQUIRE(g.value(y)(0, 2) == 3.0);
    REQUIRE(g.value(y)(2, 0) == 7.0);
    REQUIRE(g.value(y)(2, 1) == 0.0);  // zero padded
}

TEST_CASE("frame_signal matches the dsp reflect-framing convention") {
    Graph<double> g;
    Mat x(20, 1);
    for (int i = 0; i < 20; ++i) x(i, 0) = i;
    const int fft = 8, hop = 4;
    const int y = g.frame_signal(g.constant(x), fft, hop, 1 + 20 / hop);
    REQUIRE(g.rows(y) == 6);
    // frame t=1 centered at sample 4: positions 0..7
    for (int j = 0; j < fft; ++j) REQUIRE(g.value(y)(1, j) == static_cast<double>(j));
    // frame t=0 centered at 0: positions -4..3 reflect to 4,3,2,1,0,1,2,3
    REQUIRE(g.value(y)(0, 0) == 4.0);
    REQUIRE(g.value(y)(0, 3) == 1.0);
    REQUIRE(g.value(y)(0, 4) == 0.0);
    REQUIRE(g.value(y)(0, 7) == 3.0);
}

TEST_CASE("no gradients flow when parameters are frozen") {
    ParamStore<double> ps(41);
    Param<double>& p = ps.create("p", 3, 3, 0.5);
    ps.set_requires_grad(false);
    ps.zero_grad();
    Graph<double> g;
    const int loss = g.mean_all(g.square(g.param(p)));
    REQUIRE_FALSE(g.needs_grad(loss));
    g.backward(loss);  // no-op
    REQUIRE(p.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a parameter used twice accumulates both contributions") {
    ParamStore<double> ps(42);
    Param<double>& p = ps.create("p", 2, 2, 0.5);
    ps.zero_grad();
    Graph<double> g;
    const int a = g.param(p);
    const int b = g.param(p);  // second leaf over the same storage
    const int loss = g.sum_all(g.add(g.scale(a, 2.0), g.scale(b, 3.0)));
    g.backward(loss);
    REQUIRE(p.grad(0, 0) == Catch::Approx(5.0));
    REQUIRE(p.grad(1, 1) == Catch::Approx(5.0));
}

TEST_CASE("ctc loss: hand-checked single-frame case") {
    // one frame, one symbol, 3 classes (blank = 2): loss = -log softmax(symbol)
    Graph<double> g;
    Mat logits(1, 3);
    logits << 2.0, -1.0, 0.5;
    const int loss = g.ctc_loss(g.constant(logits), {0});
    const double z = std::exp(2.0) + std::exp(-1.0) + std::exp(0.5);
    REQUIRE(g.value(loss)(0, 0) == Catch::Approx(-std::log(std::exp(2.0) / z)).epsilon(1e-10));
}

TEST_CASE("ctc loss: empty target rides the blank path") {
    // only all-blank paths collapse to nothing, so loss = -T * log p(blank)
    Graph<double> g;
    Mat logits(4, 3);
    logits.setZero();
    logits.col(2).setConstant(8.0);
    const int loss = g.ctc_loss(g.constant(logits), {});
    const double p_blank = std::exp(8.0) / (std::exp(8.0) + 2.0);
    REQUIRE(g.value(loss)(0, 0) == Catch::Approx(-4.0 * std::log(p_blank)).margin(1e-10));
}

namespace {

/// Exhaustive CTC oracle: sum softmax path products over all frame labelings
/// that collapse (dedupe then drop blanks) to the target.
double ctc_bruteforce(const Mat& logits, const std::vector<int>& target) {
    const int T = static_cast<int>(logits.rows());
    const int C = static_cast<int>(logits.cols());
    const int blank = C - 1;
    Mat p(T, C);
    for (int t = 0; t < T; ++t) {
        double z = 0.0;
        for (int k = 0; k < C; ++k) z += std::exp(logits(t, k));
        for (int k = 0; k < C; ++k) p(t, k) = std::exp(logits(t, k)) / z;
    }
    double total = 0.0;
    std::vector<int> path(static_cast<std::size_t>(T), 0);
    const std::int64_t n_paths = static_cast<std::int64_t>(std::pow(C, T));
    for (std::int64_t code = 0; code < n_paths; ++code) {
        std::int64_t c = code;
        for (int t = 0; t < T; ++t, c /= C) path[static_cast<std::size_t>(t)] = static_cast<int>(c % C);
        std::vector<int> collapsed;
        for (int t = 0; t < T; ++t) {
            const int s = path[static_cast<std::size_t>(t)];
            if (t > 0 && s == path[static_cast<std::size_t>(t) - 1]) continue;
            if (s != blank) collapsed.push_back(s);
        }
        if (collapsed != target) continue;
        double prob = 1.0;
        for (int t = 0; t < T; ++t) prob *= p(t, path[static_cast<std::size_t>(t)]);
        total += prob;
    }
    return -std::log(total);
}

}  // namespace

TEST_CASE("ctc loss matches the exhaustive path-sum oracle") {
    Rng rng(77);
    for (const std::vector<int> target :
         {std::vector<int>{0, 1}, {1, 0}, {0, 0}, {1, 1}, {0}, {0, 1, 0}}) {
        for (int rep = 0; rep < 5; ++rep) {
            const Mat logits = random_mat(4, 3, rng, 1.5);
            Graph<double> g;
            const int loss = g.ctc_loss(g.constant(logits), target);
            REQUIRE(g.value(loss)(0, 0) ==
                    Catch::Approx(ctc_bruteforce(logits, target)).margin(1e-9));
        }
    }
}

TEST_CASE("ctc loss rejects infeasible and invalid targets") {
    Graph<double> g;
    const int logits = g.constant(Mat::Zero(2, 3));
    REQUIRE_THROWS_AS(g.ctc_loss(logits, {0, 0}), ValidationError);       // needs 3 frames
    REQUIRE_THROWS_AS(g.ctc_loss(logits, {0, 1, 0}), ValidationError);    // needs 3 frames
    REQUIRE_THROWS_AS(g.ctc_loss(logits, {2}), ValidationError);          // blank as target
    REQUIRE_THROWS_AS(g.ctc_loss(logits, {-1}), ValidationError);
}

TEST_CASE("ctc gradient matches finite differences") {
    ParamStore<double> ps(51);
    Param<double>& logits = ps.create("logits", 6, 4, 1.0);
    Rng coord_rng(52);
    const auto failures = fdtest::check_param_gradients(
        ps, [&](Graph<double>& g) { return g.ctc_loss(g.param(logits), {0, 2, 1}); }, 24, coord_rng);
    for (const auto& f : failures)
        UNSCOPED_INFO(f.param << "[" << f.coord << "] fd=" << f.fd << " bp=" << f.bp);
    REQUIRE(failures.empty());
}

TEST_CASE("nn layers: linear + layer norm + attention stack backprops") {
    ParamStore<double> ps(61);
    FFTStack<double> stack(ps, "enc", 2, 8, 2, 12);
    Rng rng(62);
    const Mat input = random_mat(5, 8, rng, 0.8);
    const Mat probe = random_mat(5, 8, rng, 1.0);
    Rng coord_rng(63);
    const auto failures = fdtest::check_param_gradients(
        ps,
        [&](Graph<double>& g) {
            return g.mean_all(g.mul(stack.forward(g, g.constant(input)), g.constant(probe)));
        },
        6, coord_rng, 2e-3);
    for (const auto& f : failures)
        UNSCOPED_INFO(f.param << "[" << f.coord << "] fd=" << f.fd << " bp=" << f.bp);
    REQUIRE(failures.empty());
}

TEST_CASE("adam minimizes a quadratic deterministically") {
    const auto run = [] {
        ParamStore<double> ps(71);
        Param<double>& p = ps.create("p", 4, 4, 1.0);
        Adam<double> opt;
        opt.lr = 0.05;
        std::vector<double> losses;
        for (int step = 0; step < 300; ++step) {
            ps.zero_grad();
            Graph<double> g;
            const int loss = g.mean_all(g.square(g.add_scalar(g.param(p), -2.0)));
            g.backward(loss);
            opt.step(ps);
            losses.push_back(g.value(loss)(0, 0));
        }
        return std::pair{losses, ps.param_count()};
    };
    const auto [losses_a, count_a] = run();
    const auto [losses_b, count_b] = run();
    REQUIRE(losses_a == losses_b);  // bit-identical across runs
    REQUIRE(count_a == 16);
    REQUIRE(losses_a.front() > 1.0);
    REQUIRE(losses_a.back() < 1e-4);
}

TEST_CASE("embedding lookups train end to end") {
    ParamStore<double> ps(81);
    Embedding<double> emb(ps, "tok", 10, 6);
    Linear<double> head(ps, "head", 6, 1);
    Adam<double> opt;
    opt.lr = 0.02;
    const std::vector<int> ids = {1, 4, 7, 4};
    Mat target(4, 1);
    target << 1.0, -1.0, 0.5, -1.0;
    double final_loss = 1e9;
    for (int step = 0; step < 400; ++step) {
        ps.zero_grad();
        Graph<double> g;
        const int y = head.forward(g, emb.forward(g, ids));
        const int loss = g.mean_all(g.square(g.sub(y, g.constant(target))));
        g.backward(loss);
        opt.step(ps);
        final_loss = g.value(loss)(0, 0);
    }
    REQUIRE(final_loss < 1e-4);
}
