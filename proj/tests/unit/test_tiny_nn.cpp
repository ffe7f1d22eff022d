#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "avr/tiny_nn.hpp"

using namespace avr;
using namespace avr::nn;

namespace {

using MatD = Mat<double>;

MatD random_matrix(int rows, int cols, SeededRng& rng) {
    MatD m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = rng.normal();
    return m;
}

// Scalar loss used by the finite-difference checks: weighted sum of outputs.
double probe_loss(const Mlp<double>& p, const MatD& x, const MatD& weights, double rate, std::uint64_t mask_seed) {
    SeededRng rng(mask_seed);
    return (mlp_forward(p, x, rate, &rng, rate > 0).array() * weights.array()).sum();
}

double max_rel_error(Mlp<double> p, const MatD& x, const MatD& weights, double rate) {
    SeededRng rng(99);
    ForwardCache<double> cache;
    mlp_forward(p, x, rate, &rng, rate > 0, &cache);
    auto grads = Gradients<double>::like(p);
    backprop(p, cache, weights, grads);
    const double h = 1e-5;
    double worst = 0;
    auto check = [&](double& param, double analytic) {
        const double keep = param;
        param = keep + h;
        const double up = probe_loss(p, x, weights, rate, 99);
        param = keep - h;
        const double down = probe_loss(p, x, weights, rate, 99);
        param = keep;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
    };
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& layer = p.layers[l];
        for (Eigen::Index i = 0; i < layer.w.size(); ++i) check(layer.w.data()[i], grads.layers[l].w.data()[i]);
        for (Eigen::Index i = 0; i < layer.b.size(); ++i) check(layer.b.data()[i], grads.layers[l].b.data()[i]);
    }
    return worst;
}

}  // namespace

TEST_CASE("zero network outputs zero") {
    const auto p = Mlp<double>::zeros({4, 8, 3});
    SeededRng rng(1);
    CHECK(mlp_forward(p, random_matrix(4, 5, rng)).isZero());
}

TEST_CASE("dropout only acts in train mode") {
    SeededRng rng(2);
    const auto p = Mlp<double>::init({5, 16, 16, 2}, rng);
    const auto x = random_matrix(5, 7, rng);
    SeededRng a(3), b(3);
    CHECK(mlp_forward(p, x, 0.0, &a, true) == mlp_forward(p, x));
    CHECK(mlp_forward(p, x, 0.5, &b, false) == mlp_forward(p, x));
    SeededRng c(3);
    CHECK(mlp_forward(p, x, 0.5, &c, true) != mlp_forward(p, x));
}

TEST_CASE("eval forward matches straight-line arithmetic") {
    SeededRng rng(4);
    const auto p = Mlp<double>::init({6, 10, 9, 3}, rng);
    const auto x = random_matrix(6, 4, rng);
    const auto out = mlp_forward(p, x);
    for (int c = 0; c < 4; ++c) {
        std::vector<double> h(x.col(c).data(), x.col(c).data() + 6);
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            const auto& L = p.layers[l];
            std::vector<double> next(static_cast<std::size_t>(L.w.rows()));
            for (Eigen::Index r = 0; r < L.w.rows(); ++r) {
                double acc = L.b[r];
                for (Eigen::Index k = 0; k < L.w.cols(); ++k) acc += L.w(r, k) * h[static_cast<std::size_t>(k)];
                next[static_cast<std::size_t>(r)] = l + 1 < p.layers.size() ? std::max(acc, 0.0) : acc;
            }
            h = next;
        }
        for (int r = 0; r < 3; ++r) CHECK(std::abs(out(r, c) - h[static_cast<std::size_t>(r)]) < 1e-12);
    }
}

TEST_CASE("shape mismatch names the layer") {
    SeededRng rng(5);
    auto p = Mlp<double>::init({3, 4, 2}, rng);
    CHECK_THROWS_WITH(mlp_forward(p, MatD(MatD::Zero(5, 1))), doctest::Contains("layer 0"));
    p.layers[1].w = MatD(MatD::Zero(2, 7));
    CHECK_THROWS_WITH(mlp_forward(p, MatD(MatD::Zero(3, 1))), doctest::Contains("layer 1"));
}

TEST_CASE("single linear layer gradient is the outer product") {
    SeededRng rng(6);
    const auto p = Mlp<double>::init({4, 3}, rng);
    const auto x = random_matrix(4, 1, rng);
    const auto up = random_matrix(3, 1, rng);
    ForwardCache<double> cache;
    mlp_forward(p, x, 0.0, nullptr, false, &cache);
    auto g = Gradients<double>::like(p);
    const auto dx = backprop(p, cache, up, g);
    CHECK((g.layers[0].w - up * x.transpose()).norm() < 1e-14);
    CHECK((g.layers[0].b - up).norm() < 1e-14);
    CHECK((dx - p.layers[0].w.transpose() * up).norm() < 1e-14);
}

TEST_CASE("finite-difference gradient checks") {
    SeededRng rng(7);
    SUBCASE("two-layer net") {
        const auto p = Mlp<double>::init({5, 16, 3}, rng);
        CHECK(max_rel_error(p, random_matrix(5, 6, rng), random_matrix(3, 6, rng), 0.0) < 1e-4);
    }
    SUBCASE("deeper nets, rectified output, dropout") {
        for (const auto& sizes : std::vector<std::vector<int>>{{8, 16, 16, 4}, {6, 32, 32, 32, 16, 1}}) {
            auto p = Mlp<double>::init(sizes, rng, sizes.back() != 1);
            CHECK(max_rel_error(p, random_matrix(sizes[0], 5, rng), random_matrix(sizes.back(), 5, rng), 0.0) < 1e-4);
            CHECK(max_rel_error(p, random_matrix(sizes[0], 5, rng), random_matrix(sizes.back(), 5, rng), 0.5) < 1e-4);
        }
    }
    SUBCASE("input gradient") {
        const auto p = Mlp<double>::init({4, 16, 2}, rng);
        MatD x = random_matrix(4, 3, rng);
        const auto w = random_matrix(2, 3, rng);
        ForwardCache<double> cache;
        mlp_forward(p, x, 0.0, nullptr, false, &cache);
        auto g = Gradients<double>::like(p);
        const auto dx = backprop(p, cache, w, g);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double keep = x.data()[i];
            x.data()[i] = keep + 1e-5;
            const double up = (mlp_forward(p, x).array() * w.array()).sum();
            x.data()[i] = keep - 1e-5;
            const double down = (mlp_forward(p, x).array() * w.array()).sum();
            x.data()[i] = keep;
            CHECK(std::abs((up - down) / 2e-5 - dx.data()[i]) < 1e-6);
        }
    }
}

TEST_CASE("dropped units receive zero gradient") {
    SeededRng rng(8);
    const auto p = Mlp<double>::init({3, 12, 2}, rng);
    const auto x = random_matrix(3, 1, rng);
    ForwardCache<double> cache;
    SeededRng drop(1);
    mlp_forward(p, x, 0.5, &drop, true, &cache);
    REQUIRE(cache.dropout_mask.size() == 12);
    auto g = Gradients<double>::like(p);
    backprop(p, cache, random_matrix(2, 1, rng), g);
    int dropped = 0;
    for (int u = 0; u < 12; ++u)
        if (cache.dropout_mask(u, 0) == 0) {
            ++dropped;
            CHECK(g.layers[0].w.row(u).isZero());
            CHECK(g.layers[0].b[u] == 0);
            CHECK(g.layers[1].w.col(u).isZero());
        }
    CHECK(dropped > 0);
}

TEST_CASE("stale caches are rejected") {
    SeededRng rng(9);
    auto p = Mlp<double>::init({2, 4, 1}, rng);
    ForwardCache<double> cache;
    mlp_forward(p, MatD(MatD::Ones(2, 1)), 0.0, nullptr, false, &cache);
    auto g = Gradients<double>::like(p);
    auto state = AdamState<double>::like(p, {});
    adam_step(state, p, g);
    CHECK_THROWS_AS(backprop(p, cache, MatD(MatD::Ones(1, 1)), g), std::logic_error);
    ForwardCache<double> empty;
    CHECK_THROWS_AS(backprop(p, empty, MatD(MatD::Ones(1, 1)), g), std::logic_error);
}

TEST_CASE("softmax cross-entropy") {
    MatD logits = MatD(MatD::Zero(6, 2));
    const auto res = softmax_cross_entropy(logits, {0, 5});
    CHECK(res.loss == doctest::Approx(std::log(6.0)).epsilon(1e-14));
    CHECK(std::abs(res.probs.col(1).sum() - 1.0) < 1e-12);
    // Gradient is (p - onehot) / batch.
    CHECK(res.dlogits(0, 0) == doctest::Approx((1.0 / 6 - 1) / 2));
    CHECK(res.dlogits(3, 1) == doctest::Approx(1.0 / 12));
    MatD big(2, 1);
    big << 1000, 0;
    CHECK(softmax_cross_entropy(big, {1}).loss == doctest::Approx(1000));
    CHECK_THROWS(softmax_cross_entropy(big, {2}));
}

TEST_CASE("adam") {
    SeededRng rng(10);
    SUBCASE("zero gradients leave parameters unchanged") {
        auto p = Mlp<double>::init({3, 4, 2}, rng);
        const auto before = p.layers[0].w;
        auto state = AdamState<double>::like(p, {0.01});
        adam_step(state, p, Gradients<double>::like(p));
        CHECK(p.layers[0].w == before);
        CHECK(state.step == 1);
    }
    SUBCASE("first step matches the hand-expanded update") {
        auto p = Mlp<double>::init({2, 1}, rng);
        const auto w0 = p.layers[0].w;
        auto g = Gradients<double>::like(p);
        g.layers[0].w << 0.3, -2e-9;
        auto state = AdamState<double>::like(p, {0.001});
        adam_step(state, p, g);
        // m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps).
        for (int i = 0; i < 2; ++i) {
            const double gi = g.layers[0].w(0, i);
            CHECK(p.layers[0].w(0, i) - w0(0, i) == doctest::Approx(-0.001 * gi / (std::abs(gi) + 1e-8)).epsilon(1e-12));
        }
        // Second step with the same gradient, expanded by hand.
        adam_step(state, p, g);
        const double gi = 0.3;
        const double m = 0.9 * 0.1 * gi + 0.1 * gi, v = 0.999 * 0.001 * gi * gi + 0.001 * gi * gi;
        const double step2 = -0.001 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
        CHECK(p.layers[0].w(0, 0) - w0(0, 0) == doctest::Approx(-0.001 * gi / (gi + 1e-8) + step2).epsilon(1e-12));
    }
    SUBCASE("non-finite gradient names the parameter") {
        auto p = Mlp<double>::init({2, 3, 1}, rng);
        auto g = Gradients<double>::like(p);
        g.layers[1].b[0] = std::nan("");
        auto state = AdamState<double>::like(p, {});
        CHECK_THROWS_WITH(adam_step(state, p, g, "f"), doctest::Contains("f.layer1.b"));
    }
}

TEST_CASE("training: determinism and loss decrease on a separable toy batch") {
    auto run = [](std::uint64_t seed, int steps, double* first_loss) {
        SeededRng rng(seed);
        auto p = Mlp<double>::init({2, 16, 3}, rng);
        auto state = AdamState<double>::like(p, {0.01});
        MatD x(2, 30);
        std::vector<int> y(30);
        for (int i = 0; i < 30; ++i) {
            y[static_cast<std::size_t>(i)] = i % 3;
            const double ang = 2.0944 * (i % 3);
            x(0, i) = 3 * std::cos(ang) + 0.3 * rng.normal();
            x(1, i) = 3 * std::sin(ang) + 0.3 * rng.normal();
        }
        double loss = 0;
        auto g = Gradients<double>::like(p);
        for (int s = 0; s < steps; ++s) {
            ForwardCache<double> cache;
            SeededRng drop(static_cast<std::uint64_t>(s));
            const auto logits = mlp_forward(p, x, 0.25, &drop, true, &cache);
            const auto res = softmax_cross_entropy(logits, y);
            if (s == 0 && first_loss) *first_loss = res.loss;
            loss = res.loss;
            g.set_zero();
            backprop(p, cache, res.dlogits, g, false);
            adam_step(state, p, g);
        }
        return std::make_pair(p, loss);
    };
    double initial = 0;
    const auto [p1, final_loss] = run(11, 200, &initial);
    CHECK(final_loss <= 0.5 * initial);
    const auto [p2, again] = run(11, 100, nullptr);
    const auto [p3, again2] = run(11, 100, nullptr);
    for (std::size_t l = 0; l < p2.layers.size(); ++l) {
        CHECK(p2.layers[l].w == p3.layers[l].w);
        CHECK(p2.layers[l].b == p3.layers[l].b);
    }
    CHECK(again == again2);
}

TEST_CASE("float instantiation tracks double") {
    SeededRng rng(12);
    const auto p = Mlp<double>::init({4, 32, 32, 1}, rng);
    const auto x = random_matrix(4, 8, rng);
    const auto pf = p.cast<float>();
    const Mat<float> of = mlp_forward(pf, Mat<float>(x.cast<float>()));
    CHECK((of.cast<double>() - mlp_forward(p, x)).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("checkpoint round trip") {
    SeededRng rng(13);
    const auto g = Mlp<double>::init({6, 8, 8}, rng, true);
    const auto f = Mlp<double>::init({8, 5, 1}, rng);
    const auto path = std::filesystem::temp_directory_path() / "avr_ckpt_test.bin";
    save_checkpoint(path, {{"g", &g}, {"f", &f}});
    CHECK(std::filesystem::file_size(path) == 8 * (g.num_params() + f.num_params()));
    const auto back = load_checkpoint(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].first == "g");
    CHECK(back[0].second.relu_output);
    CHECK_FALSE(back[1].second.relu_output);
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
        CHECK(back[0].second.layers[l].w == g.layers[l].w);
        CHECK(back[0].second.layers[l].b == g.layers[l].b);
    }
    CHECK(back[1].second.layers[1].w == f.layers[1].w);
}
