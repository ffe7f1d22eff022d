#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "avr/metrics.hpp"
#include "avr/trees.hpp"
#include "oracles.hpp"

using namespace avr;

namespace {

const FactorSpace& dsprites() {
    static const FactorSpace s = make_space(SpaceId::dsprites_reasoning);
    return s;
}

RepresentationSource constant_source(const FactorSpace& space, std::size_t d) {
    RepresentationTable t(space.id(), d);
    for (std::uint64_t i = 0; i < space.size(); ++i) t.add(assignment_from_index(space, i), std::vector<double>(d, 0.0));
    return RepresentationSource::external(std::move(t));
}

// Codes of `base` with dimensions reordered by `perm` and multiplied by `scale`.
RepresentationSource permuted_copy(const FactorSpace& space, const RepresentationSource& base,
                                   const std::vector<int>& perm, const std::vector<double>& scale) {
    RepresentationTable t(space.id(), base.code_dim());
    for (std::uint64_t i = 0; i < space.size(); ++i) {
        const auto z = base.encode_index(i);
        std::vector<double> out(perm.size());
        for (std::size_t j = 0; j < perm.size(); ++j) out[j] = scale[j] * z[perm[j]];
        t.add(assignment_from_index(space, i), out);
    }
    return RepresentationSource::external(std::move(t));
}

// Equal-width binning and joint-count MI, written out independently.
std::vector<int> bin_row(const Eigen::MatrixXd& codes, Eigen::Index j, int bins) {
    double lo = codes(j, 0), hi = codes(j, 0);
    for (Eigen::Index i = 0; i < codes.cols(); ++i) lo = std::min(lo, codes(j, i)), hi = std::max(hi, codes(j, i));
    std::vector<int> out(codes.cols(), 0);
    if (hi > lo)
        for (Eigen::Index i = 0; i < codes.cols(); ++i)
            out[i] = std::min(bins - 1, static_cast<int>(std::floor((codes(j, i) - lo) / (hi - lo) * bins)));
    return out;
}

double mean_chance(const FactorSpace& space) {
    double c = 0;
    for (auto k : space.cardinalities()) c += 1.0 / k;
    return c / static_cast<double>(space.num_factors());
}

}  // namespace

TEST_CASE("dci_disentanglement matches hand-expanded values") {
    Eigen::MatrixXd r(3, 2);
    r << 0.5, 0.5, 1, 0, 0, 1;
    // Row entropies in base 2: 1, 0, 0; row masses: 1, 1, 1.
    CHECK(dci_disentanglement(r) == doctest::Approx(1.0 / 3 * 0 + 1.0 / 3 * 1 + 1.0 / 3 * 1).epsilon(1e-15));

    Eigen::MatrixXd perm = Eigen::MatrixXd::Zero(3, 3);
    perm(0, 2) = 0.2, perm(1, 0) = 0.7, perm(2, 1) = 0.1;
    CHECK(dci_disentanglement(perm) == doctest::Approx(1.0));
    CHECK(dci_disentanglement(Eigen::MatrixXd::Constant(4, 3, 0.3)) == doctest::Approx(0.0).epsilon(1e-12));

    Eigen::MatrixXd with_dead(3, 2);
    with_dead << 0, 0, 2, 0, 0, 1;
    CHECK(dci_disentanglement(with_dead) == doctest::Approx(1.0));

    std::vector<std::string> w;
    CHECK(dci_disentanglement(Eigen::MatrixXd::Zero(3, 2), &w) == 0.0);
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("all zero") != std::string::npos);
}

TEST_CASE("discretized_mi equals joint-count MI on full-space sources") {
    const auto& space = dsprites();
    const std::vector<RepresentationSource> sources{
        RepresentationSource::gt_integer(space), RepresentationSource::gt_onehot(space),
        RepresentationSource::permuted_scaled(space, 5), RepresentationSource::linear_mixed(space, 0.5, 9),
        RepresentationSource::linear_mixed(space, 1.0, 9, 9)};
    for (const auto& src : sources) {
        CAPTURE(src.describe());
        const auto sample = enumerate_codes(space, src);
        const auto m = discretized_mi(sample, 20);
        for (Eigen::Index k = 0; k < sample.factors.rows(); ++k) {
            std::vector<int> vk(sample.factors.cols());
            for (Eigen::Index i = 0; i < sample.factors.cols(); ++i) vk[i] = sample.factors(k, i);
            CHECK(std::abs(m.entropy[k] - oracle::entropy_of(vk)) < 1e-9);
            for (Eigen::Index j = 0; j < sample.codes.rows(); ++j) {
                const double expect = oracle::joint_count_mi(bin_row(sample.codes, j, 20), vk);
                CHECK(std::abs(m.mi(j, k) - expect) < 1e-9);
                CHECK(m.mi(j, k) >= 0);
                CHECK(m.mi(j, k) <= m.entropy[k] + 1e-9);
            }
        }
    }
}

TEST_CASE("discretized_mi examples") {
    const auto& space = dsprites();
    const auto m = discretized_mi(enumerate_codes(space, RepresentationSource::gt_integer(space)), 20);
    CHECK(space.cardinality(0) == 3);
    CHECK(m.mi(0, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(m.entropy[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // Uniform noise against an independent 6-valued factor.
    SeededRng rng(4);
    CodeSample s;
    const int n = 100000;
    s.codes.resize(1, n);
    s.factors.resize(1, n);
    for (int i = 0; i < n; ++i) {
        s.codes(0, i) = rng.uniform01();
        s.factors(0, i) = static_cast<int>(rng.uniform_index(6));
    }
    CHECK(discretized_mi(s, 20).mi(0, 0) <= 0.01);

    // Zero-width dimension.
    const auto c = discretized_mi(enumerate_codes(space, constant_source(space, 2)), 20);
    CHECK((c.mi.array() == 0).all());
}

TEST_CASE("mig") {
    const auto& space = dsprites();
    CHECK(std::abs(mig_score(space, RepresentationSource::permuted_scaled(space, 3), 0).value - 1.0) < 1e-9);
    CHECK(std::abs(mig_score(space, RepresentationSource::gt_integer(space), 0).value - 1.0) < 1e-9);

    // z0 = z1 = v0, then the remaining factors one-to-one: factor 0 gap is 0.
    Eigen::MatrixXd map = Eigen::MatrixXd::Zero(7, 6);
    map(0, 0) = map(1, 0) = 1;
    for (int k = 1; k < 6; ++k) map(k + 1, k) = 1;
    const auto dup = RepresentationSource::linear(space, map, 0.0, 0);
    CHECK(std::abs(mig_score(space, dup, 0).value - 5.0 / 6.0) < 1e-9);

    CHECK(mig_score(space, constant_source(space, 3), 0).value == 0.0);
}

TEST_CASE("factor_vae") {
    const auto& space = dsprites();
    CHECK(factor_vae_score(space, RepresentationSource::permuted_scaled(space, 3), 1).value == 1.0);
    CHECK_THROWS_WITH_AS(factor_vae_score(space, constant_source(space, 4), 1), doctest::Contains("no active dimensions"),
                         MetricError);

    // Independent vote loop against the library on a half-mixed source.
    const auto src = RepresentationSource::linear_mixed(space, 0.5, 11);
    const auto all = enumerate_codes(space, src);
    const Eigen::VectorXd mean = all.codes.rowwise().mean();
    Eigen::VectorXd sd(all.codes.rows());
    for (Eigen::Index j = 0; j < sd.size(); ++j) sd[j] = std::sqrt((all.codes.row(j).array() - mean[j]).square().mean());
    SeededRng rng(99);
    const auto vote = [&] {
        const auto k = static_cast<int>(rng.uniform_index(space.num_factors()));
        const int v = static_cast<int>(rng.uniform_index(space.cardinality(k)));
        std::vector<Eigen::VectorXd> batch;
        for (int b = 0; b < 64; ++b) {
            auto a = sample_assignment(space, rng);
            a[k] = v;
            batch.push_back(src.encode(a).cwiseQuotient(sd));
        }
        int best = 0;
        double best_var = 1e300;
        for (Eigen::Index j = 0; j < sd.size(); ++j) {
            double m = 0, q = 0;
            for (const auto& z : batch) m += z[j];
            m /= 64;
            for (const auto& z : batch) q += (z[j] - m) * (z[j] - m);
            if (q / 64 < best_var) best_var = q / 64, best = static_cast<int>(j);
        }
        return std::pair{best, k};
    };
    std::map<int, std::map<int, int>> counts;
    for (int i = 0; i < 10000; ++i) {
        const auto [j, k] = vote();
        ++counts[j][k];
    }
    std::map<int, int> majority;
    for (const auto& [j, row] : counts) {
        int best = -1;
        for (const auto& [k, c] : row)
            if (best < 0 || c > row.at(best)) best = k;
        majority[j] = best;
    }
    int correct = 0;
    for (int i = 0; i < 5000; ++i) {
        const auto [j, k] = vote();
        correct += majority.count(j) ? majority[j] == k : k == 0;
    }
    const double expect = correct / 5000.0;
    const double got = factor_vae_score(space, src, 5).value;
    CAPTURE(expect);
    CHECK(std::abs(got - expect) < 0.03);
}

TEST_CASE("beta_vae") {
    const auto& space = dsprites();
    CHECK(beta_vae_score(space, RepresentationSource::gt_onehot(space), 2).value >= 0.99);
    CHECK(std::abs(beta_vae_score(space, constant_source(space, 6), 2).value - 1.0 / 6) <= 0.02);
    const auto ladder = make_entanglement_ladder(space, 2, 7);
    CHECK(beta_vae_score(space, ladder[0], 2).value > beta_vae_score(space, ladder[1], 2).value);
}

TEST_CASE("interval classifier and balanced accuracy") {
    CHECK(balanced_accuracy({0, 0, 0, 1}, {0, 0, 0, 0}, 2) == doctest::Approx(0.5));
    CHECK(balanced_accuracy({0, 1, 1, 2}, {0, 1, 0, 2}, 3) == doctest::Approx((1 + 0.5 + 1) / 3.0));

    // Three ordered classes with an unbalanced middle class.
    Eigen::VectorXd x(10);
    Eigen::VectorXi y(10);
    x << 0, 0.1, 0.2, 0.45, 0.5, 0.55, 0.6, 0.65, 0.9, 1.0;
    y << 0, 0, 0, 1, 1, 1, 1, 1, 2, 2;
    const auto clf = IntervalClassifier::fit(x, y, 3, 20);
    std::vector<int> truth(y.data(), y.data() + 10), pred;
    for (auto v : x) pred.push_back(clf.predict(v));
    CHECK(balanced_accuracy(truth, pred, 3) == 1.0);

    // Two intervals at most for a binary target, even when three would fit better.
    Eigen::VectorXd x2(6);
    Eigen::VectorXi y2(6);
    x2 << 0, 0.1, 0.5, 0.6, 0.9, 1.0;
    y2 << 0, 0, 1, 1, 0, 0;
    const auto c2 = IntervalClassifier::fit(x2, y2, 2, 20);
    int changes = 0;
    for (int b = 1; b < c2.bins; ++b) changes += c2.bin_label[b] != c2.bin_label[b - 1];
    CHECK(changes <= 1);
}

TEST_CASE("sap") {
    const auto& space = dsprites();
    CHECK(sap_score(space, RepresentationSource::permuted_scaled(space, 3), 0).value >= 0.75);
    CHECK(sap_score(space, constant_source(space, 6), 0).value <= 0.02);

    Eigen::MatrixXd map = Eigen::MatrixXd::Zero(7, 6);
    map(0, 0) = map(1, 0) = 1;
    for (int k = 1; k < 6; ++k) map(k + 1, k) = 1;
    const double dup = sap_score(space, RepresentationSource::linear(space, map, 0.0, 0), 0).value;
    const double plain = sap_score(space, RepresentationSource::gt_integer(space), 0).value;
    // Factor 0 loses its whole gap, the other five are unchanged in expectation.
    CHECK(dup == doctest::Approx(plain * 5.0 / 6.0).epsilon(0.02));
}

TEST_CASE("tree importances sum to the total impurity decrease") {
    SeededRng rng(8);
    Eigen::MatrixXd x(4, 500);
    std::vector<int> y(500);
    for (int i = 0; i < 500; ++i) {
        for (int f = 0; f < 4; ++f) x(f, i) = rng.uniform01();
        y[i] = (x(0, i) > 0.5) + (x(2, i) > 0.3 ? 1 : 0);
    }
    const auto data = trees::apply(trees::Binning::fit(x), x);
    const auto forest = trees::fit_forest(data, y, 3, {}, rng);
    for (const auto& t : forest.trees) {
        double sum = 0;
        for (double v : t.importance) sum += v;
        CHECK(sum == doctest::Approx(t.total_decrease).epsilon(1e-12));
        CHECK(t.total_decrease > 0);
        // Root Gini of the training rows bounds the total decrease.
        CHECK(t.total_decrease <= 1.0);
    }
    const auto imp = forest.importances();
    CHECK(imp[0] + imp[2] > 0.9);
    int hit = 0;
    for (int i = 0; i < 500; ++i) hit += forest.predict(data, i) == y[i];
    CHECK(hit > 480);
}

TEST_CASE("dci importance") {
    const auto& space = dsprites();
    const auto r = dci_importance(space, RepresentationSource::gt_integer(space), 3);
    for (Eigen::Index k = 0; k < r.cols(); ++k) {
        CAPTURE(k);
        CHECK(r(k, k) / r.col(k).sum() >= 0.95);
    }
    CHECK((r.array() >= 0).all());

    std::vector<std::string> w;
    const auto zero = dci_importance(space, constant_source(space, 3), 3, {}, &w);
    CHECK(zero.isZero(0));
    CHECK(w.size() == space.num_factors());

    CHECK(dci_score(space, RepresentationSource::permuted_scaled(space, 3), 3).value >= 0.95);
}

TEST_CASE("informativeness probes") {
    const auto& space = dsprites();
    CHECK(lr_informativeness(space, RepresentationSource::gt_onehot(space), 4).value >= 0.99);
    const auto constant = constant_source(space, 3);
    CHECK(std::abs(lr_informativeness(space, constant, 4).value - mean_chance(space)) < 0.02);
    CHECK(std::abs(gbt_informativeness(space, constant, 4).value - mean_chance(space)) < 0.02);

    const auto mixed = RepresentationSource::linear_mixed(space, 1.0, 7);
    const double lr = lr_informativeness(space, mixed, 4).value;
    const double gbt = gbt_informativeness(space, mixed, 4).value;
    CAPTURE(lr);
    CAPTURE(gbt);
    CHECK(gbt >= lr - 0.05);
}

TEST_CASE("permutation and scaling invariance") {
    const auto& space = dsprites();
    const auto base = RepresentationSource::linear_mixed(space, 0.5, 13);
    const auto moved = permuted_copy(space, base, {4, 2, 0, 5, 1, 3}, {2.5, -0.5, 3.0, -7.0, 0.25, 1.5});
    CHECK(factor_vae_score(space, base, 6).value == factor_vae_score(space, moved, 6).value);
    CHECK(mig_score(space, base, 6).value == doctest::Approx(mig_score(space, moved, 6).value).epsilon(1e-12));
    CHECK(std::abs(sap_score(space, base, 6).value - sap_score(space, moved, 6).value) < 1e-6);
    CHECK(std::abs(dci_score(space, base, 6).value - dci_score(space, moved, 6).value) < 1e-6);
}

TEST_CASE("scores are deterministic and in range") {
    const auto& space = dsprites();
    const auto src = RepresentationSource::linear_mixed(space, 0.25, 3);
    MetricParams p;
    p.beta_vae.train_points = 1000;
    p.beta_vae.eval_points = 500;
    p.lr.train_points = p.gbt.train_points = 2000;
    p.lr.test_points = p.gbt.test_points = 1000;
    p.gbt.rounds = 20;
    for (auto m : kAllMetrics) {
        CAPTURE(to_string(m));
        const auto a = compute_metric(m, space, src, 21, p);
        const auto b = compute_metric(m, space, src, 21, p);
        CHECK(a.value == b.value);
        CHECK(a.params_digest == b.params_digest);
        CHECK(a.value >= 0);
        CHECK(a.value <= 1);
        CHECK(compute_metric(m, space, src, 22, p).params_digest != a.params_digest);
        CHECK(parse_metric(to_string(m)) == m);
    }
}

TEST_CASE("metric parameters") {
    MetricParams p;
    const auto before = mig_score(dsprites(), RepresentationSource::gt_integer(dsprites()), 0, p.mig).params_digest;
    p.set("mig.bins", "30");
    CHECK(p.mig.bins == 30);
    CHECK(mig_score(dsprites(), RepresentationSource::gt_integer(dsprites()), 0, p.mig).params_digest != before);
    p.set("gbt.learning_rate", "0.2");
    CHECK(p.gbt.learning_rate == 0.2);
    CHECK_THROWS_WITH_AS(p.set("mig.nope", "1"), doctest::Contains("mig.nope"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(p.set("dci.trees", "2.5"), doctest::Contains("integer"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(p.set("bogus.x", "1"), doctest::Contains("bogus"), std::invalid_argument);
    CHECK_THROWS_AS(parse_metric("modularity"), std::invalid_argument);
}

TEST_CASE("scores csv") {
    MetricScore s{MetricKind::mig, 0.5, "00ff", 7, {}};
    std::ostringstream out;
    write_scores_csv(out, "gt_integer", {s});
    CHECK(out.str() == "model_id,metric,value,params_digest,seed\ngt_integer,mig,0.500000,00ff,7\n");
}
