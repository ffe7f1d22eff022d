#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "avr/wren.hpp"
#include "oracles.hpp"

using namespace avr;
using nn::Mat;

namespace {

struct Fixture {
    std::array<Eigen::VectorXd, 8> context;
    std::array<Eigen::VectorXd, 6> answers;
    Mat<double> codes;  // 14 columns
};

Fixture random_fixture(std::size_t d, SeededRng& rng) {
    Fixture fx;
    fx.codes.resize(static_cast<Eigen::Index>(d), 14);
    for (int p = 0; p < 14; ++p) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(d));
        for (auto& x : v) x = rng.uniform01();
        fx.codes.col(p) = v;
        if (p < 8)
            fx.context[static_cast<std::size_t>(p)] = v;
        else
            fx.answers[static_cast<std::size_t>(p - 8)] = v;
    }
    return fx;
}

WrenConfig small_config(int edge_layers, int graph_layers, bool tags) {
    WrenConfig c;
    c.edge_layers = edge_layers;
    c.graph_layers = graph_layers;
    c.seed = 1000 + 10 * edge_layers + graph_layers;
    c.position_tags = tags;
    return c;
}

double batch_loss(const WrenParams<double>& p, const Mat<double>& codes, const std::vector<int>& labels,
                  double dropout, std::uint64_t mask_seed) {
    SeededRng rng(mask_seed);
    return nn::softmax_cross_entropy(wren_logits(p, codes, dropout, &rng, dropout > 0), labels).loss;
}

}  // namespace

TEST_CASE("zeroed edge output gives a constant field") {
    SeededRng rng(1);
    auto p = init_wren<double>(small_config(2, 1, true), 6, 16, 16);
    p.g.layers.back().w.setZero();
    p.g.layers.back().b.setZero();
    const auto fx = random_fixture(6, rng);
    const Mat<double> zero = Mat<double>::Zero(16, 1);
    const double f0 = nn::mlp_forward(p.f, zero)(0, 0);
    const auto out = wren_forward(p, fx.context, fx.answers);
    for (int a = 0; a < 6; ++a) {
        CHECK(out.logits[static_cast<std::size_t>(a)] == f0);
        CHECK(out.probs[static_cast<std::size_t>(a)] == doctest::Approx(1.0 / 6).epsilon(1e-14));
    }
    CHECK(out.prediction == 0);
    const auto logits = wren_logits(p, fx.codes);
    CHECK(nn::softmax_cross_entropy(logits, {3}).loss == doctest::Approx(std::log(6.0)).epsilon(1e-14));
}

TEST_CASE("scores and probabilities") {
    SeededRng rng(2);
    const auto p = init_wren<double>(small_config(3, 2, true), 6, 16, 16);
    const auto fx = random_fixture(6, rng);
    const auto out = wren_forward(p, fx.context, fx.answers);
    double total = 0;
    for (double q : out.probs) total += q;
    CHECK(std::abs(total - 1.0) < 1e-12);
    int best = 0;
    for (int a = 1; a < 6; ++a)
        if (out.logits[static_cast<std::size_t>(a)] > out.logits[static_cast<std::size_t>(best)]) best = a;
    CHECK(out.prediction == best);

    Mat<double> tied(6, 2);
    tied << 1, 0, 3, 0, 3, 0, 2, 0, 0, 0, -1, 0;
    CHECK(predictions(tied) == std::vector<int>{1, 0});

    // Dimension mismatch is rejected.
    auto ctx = fx.context;
    ctx[4] = Eigen::VectorXd::Zero(5);
    CHECK_THROWS_AS(wren_score(p, ctx, fx.answers[0]), std::invalid_argument);
}

TEST_CASE("batched logits match the reference path") {
    SeededRng rng(3);
    for (bool tags : {false, true}) {
        const auto p = init_wren<double>(small_config(2, 2, tags), 7, 32, 16);
        Mat<double> codes(7, 14 * 3);
        std::vector<Fixture> fxs;
        for (int b = 0; b < 3; ++b) {
            fxs.push_back(random_fixture(7, rng));
            codes.middleCols(14 * b, 14) = fxs.back().codes;
        }
        const auto logits = wren_logits(p, codes);
        REQUIRE(logits.rows() == 6);
        REQUIRE(logits.cols() == 3);
        for (int b = 0; b < 3; ++b)
            for (int a = 0; a < 6; ++a)
                CHECK(std::abs(logits(a, b) - wren_score(p, fxs[static_cast<std::size_t>(b)].context,
                                                         fxs[static_cast<std::size_t>(b)].answers[static_cast<std::size_t>(a)])) <
                      1e-10);
    }
}

TEST_CASE("context permutation invariance without position tags") {
    SeededRng rng(4);
    const auto p = init_wren<double>(small_config(2, 1, false), 6, 16, 16);
    const auto fx = random_fixture(6, rng);
    auto swapped = fx.context;
    std::swap(swapped[1], swapped[6]);
    for (int a = 0; a < 6; ++a) {
        const double s0 = wren_score(p, fx.context, fx.answers[static_cast<std::size_t>(a)]);
        const double s1 = wren_score(p, swapped, fx.answers[static_cast<std::size_t>(a)]);
        CHECK(std::abs(s0 - s1) <= 1e-12 * std::max(1.0, std::abs(s0)));
    }
    // With tags the panel slot matters, as intended.
    const auto pt = init_wren<double>(small_config(2, 1, true), 6, 16, 16);
    CHECK(wren_score(pt, fx.context, fx.answers[0]) != wren_score(pt, swapped, fx.answers[0]));
}

TEST_CASE("relabelling answers permutes logits") {
    SeededRng rng(5);
    const auto p = init_wren<double>(small_config(2, 1, true), 6, 16, 16);
    const auto fx = random_fixture(6, rng);
    const std::array<int, 6> perm{4, 2, 0, 5, 1, 3};
    Mat<double> permuted = fx.codes;
    for (int a = 0; a < 6; ++a) permuted.col(8 + a) = fx.codes.col(8 + perm[static_cast<std::size_t>(a)]);
    const auto l0 = wren_logits(p, fx.codes);
    const auto l1 = wren_logits(p, permuted);
    for (int a = 0; a < 6; ++a) CHECK(l1(a, 0) == l0(perm[static_cast<std::size_t>(a)], 0));
}

TEST_CASE("composite gradient matches finite differences across the layer grid") {
    SeededRng rng(6);
    Mat<double> codes(6, 14 * 2);
    for (int b = 0; b < 2; ++b) codes.middleCols(14 * b, 14) = random_fixture(6, rng).codes;
    const std::vector<int> labels{2, 5};
    for (int el : {2, 3, 4})
        for (int gl : {1, 2})
            for (double dropout : {0.0, 0.5}) {
                CAPTURE(el);
                CAPTURE(gl);
                CAPTURE(dropout);
                auto p = init_wren<double>(small_config(el, gl, true), 6, 16, 32);
                WrenCache<double> cache;
                SeededRng mask(77);
                const auto logits = wren_logits(p, codes, dropout, &mask, dropout > 0, &cache);
                const auto loss = nn::softmax_cross_entropy(logits, labels);
                auto grads = WrenGrads<double>::like(p);
                wren_backward(p, cache, loss.dlogits, grads);

                double worst = 0;
                // 152 pair columns per instance put some units within 1e-5 of a kink.
                const double h = 1e-6;
                auto check_net = [&](nn::Mlp<double>& net, nn::Gradients<double>& g) {
                    for (std::size_t l = 0; l < net.layers.size(); ++l) {
                        auto probe = [&](double* param, double analytic) {
                            const double keep = *param;
                            *param = keep + h;
                            const double up = batch_loss(p, codes, labels, dropout, 77);
                            *param = keep - h;
                            const double down = batch_loss(p, codes, labels, dropout, 77);
                            *param = keep;
                            const double num = (up - down) / (2 * h);
                            // Absolute floor keeps kinks of exactly-zero gradients from dominating.
                            const double denom = std::max({std::abs(num), std::abs(analytic), 1e-4});
                            worst = std::max(worst, std::abs(num - analytic) / denom);
                        };
                        auto& L = net.layers[l];
                        // Every bias, and a strided subset of weights to bound runtime.
                        for (Eigen::Index i = 0; i < L.b.size(); ++i) probe(&L.b[i], g.layers[l].b[i]);
                        for (Eigen::Index i = 0; i < L.w.size(); i += 7) probe(L.w.data() + i, g.layers[l].w.data()[i]);
                    }
                };
                check_net(p.g, grads.g);
                check_net(p.f, grads.f);
                CHECK(worst < 1e-4);
            }
}

TEST_CASE("sample_config") {
    SeededRng rng(7);
    std::vector<std::uint64_t> lr_counts(3, 0);
    for (int i = 0; i < 10000; ++i) {
        const auto c = sample_config(rng);
        CHECK_NOTHROW(c.validate());
        for (std::size_t k = 0; k < 3; ++k) lr_counts[k] += c.lr == kLrChoices[k];
    }
    CHECK(lr_counts[0] + lr_counts[1] + lr_counts[2] == 10000);
    CHECK(oracle::chi_square_uniform_p(lr_counts) > 0.01);
    CHECK(sample_config(42).to_json() == sample_config(42).to_json());
    CHECK(sample_config(42).digest() != sample_config(43).digest());
    const auto c = sample_config(9);
    CHECK(WrenConfig::from_json(nlohmann::json::parse(c.to_json().dump())).digest() == c.digest());
    auto bad = c;
    bad.edge_units = 300;
    CHECK_THROWS_WITH(bad.validate(), doctest::Contains("edge_units"));
}

TEST_CASE("training protocol") {
    const auto space = make_space(SpaceId::dsprites_reasoning);
    const auto src = RepresentationSource::gt_integer(space);
    auto cfg = sample_config(3);
    cfg.edge_units = 256;
    cfg.edge_layers = 2;

    CHECK(std::set<int>(kCheckpointSteps.begin(), kCheckpointSteps.end()) ==
          std::set<int>{1000, 2000, 5000, 10000, 20000, 50000, 100000});

    SUBCASE("untrained accuracy is at chance") {
        const auto p = init_wren<double>(cfg, src.code_dim());
        CHECK(std::abs(evaluate_wren(p, space, src, 5, 0, 100, 32) - 1.0 / 6) <= 0.02);
    }
    SUBCASE("short runs are deterministic and record every eval step") {
        TrainOptions opt;
        opt.steps = 20;
        opt.eval_every = 10;
        opt.eval_batches = 2;
        opt.checkpoint_steps = {10};
        opt.checkpoint_dir = std::filesystem::temp_directory_path() / "avr_wren_ckpt";
        std::filesystem::remove_all(opt.checkpoint_dir);
        const auto a = train_wren(cfg, space, src, 11, opt);
        opt.checkpoint_dir.clear();
        const auto b = train_wren(cfg, space, src, 11, opt);
        REQUIRE(a.records.size() == 3);
        CHECK(a.records[0].step == 0);
        CHECK(a.records[2].step == 20);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(a.records[i].eval_accuracy == b.records[i].eval_accuracy);
            CHECK(a.records[i].eval_accuracy >= 0.0);
            CHECK(a.records[i].eval_accuracy <= 1.0);
        }
        CHECK(a.params.g.layers[0].w == b.params.g.layers[0].w);
        CHECK(std::filesystem::exists(std::filesystem::temp_directory_path() / "avr_wren_ckpt" / "step_10.bin"));
        const auto other = train_wren(cfg, space, src, 12, opt);
        CHECK(other.params.g.layers[0].w != a.params.g.layers[0].w);

        std::ostringstream csv;
        write_curve_csv(csv, "gt_integer@cfg0-seed11", a.records);
        CHECK(csv.str().rfind("model_id,step,accuracy\ngt_integer@cfg0-seed11,0,", 0) == 0);
    }
    SUBCASE("double precision path runs the same protocol") {
        TrainOptions opt;
        opt.steps = 5;
        opt.eval_every = 5;
        opt.eval_batches = 1;
        opt.single_precision = false;
        CHECK(train_wren(cfg, space, src, 1, opt).records.size() == 2);
    }
    SUBCASE("non-finite loss aborts with step and config digest") {
        RepresentationTable all_nan(space.id(), 1);
        for (std::uint64_t i = 0; i < space.size(); ++i) all_nan.add(assignment_from_index(space, i), {std::nan("")});
        TrainOptions opt;
        opt.steps = 3;
        opt.eval_batches = 1;
        try {
            (void)train_wren(cfg, space, RepresentationSource::external(std::move(all_nan)), 1, opt);
            FAIL("expected an abort");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("step 1") != std::string::npos);
            CHECK(std::string(e.what()).find(cfg.digest()) != std::string::npos);
        }
    }
}
