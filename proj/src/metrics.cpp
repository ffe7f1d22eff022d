#include "avr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "avr/csv.hpp"
#include "avr/digest.hpp"
#include "avr/tiny_nn.hpp"
#include "avr/trees.hpp"

namespace avr {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BetaVaeParams, batch, train_points, eval_points, probe_steps, probe_lr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FactorVaeParams, batch, train_votes, eval_votes, variance_samples, variance_floor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MigParams, bins, samples)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SapParams, train_points, test_points, bins)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DciParams, train_points, trees, max_depth)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LrParams, train_points, test_points, steps, lr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GbtParams, train_points, test_points, rounds, max_depth, learning_rate, lambda)

template <class P>
nlohmann::ordered_json as_json(const P& p) {
    // Keys come out sorted, which keeps digests independent of field order.
    const nlohmann::json j = p;
    return nlohmann::ordered_json(j);
}

nlohmann::ordered_json BetaVaeParams::to_json() const { return as_json(*this); }
nlohmann::ordered_json FactorVaeParams::to_json() const { return as_json(*this); }
nlohmann::ordered_json MigParams::to_json() const { return as_json(*this); }
nlohmann::ordered_json SapParams::to_json() const { return as_json(*this); }
nlohmann::ordered_json DciParams::to_json() const { return as_json(*this); }
nlohmann::ordered_json LrParams::to_json() const { return as_json(*this); }
nlohmann::ordered_json GbtParams::to_json() const { return as_json(*this); }

namespace {

constexpr std::uint64_t kEnumerateLimit = 1'000'000;

template <class P>
void set_field(P& params, std::string_view metric, std::string_view field, std::string_view value) {
    nlohmann::json j = params;
    if (!j.contains(field))
        throw std::invalid_argument("unknown metric parameter " + std::string(metric) + "." + std::string(field));
    nlohmann::json v;
    try {
        v = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
        throw std::invalid_argument("metric parameter " + std::string(metric) + "." + std::string(field) +
                                    " expects a number, got '" + std::string(value) + "'");
    }
    auto& slot = j[std::string(field)];
    if (!v.is_number() || (slot.is_number_integer() && !v.is_number_integer()))
        throw std::invalid_argument("metric parameter " + std::string(metric) + "." + std::string(field) +
                                    " expects " + (slot.is_number_integer() ? "an integer" : "a number") +
                                    ", got '" + std::string(value) + "'");
    slot = v;
    j.get_to(params);
}

std::string digest_of(MetricKind m, const nlohmann::ordered_json& params, std::uint64_t seed) {
    return hex_digest(std::string(to_string(m)) + ":" + params.dump() + ":" + std::to_string(seed));
}

MetricScore make_score(MetricKind m, double value, const nlohmann::ordered_json& params, std::uint64_t seed) {
    MetricScore s;
    s.metric = m;
    s.value = value;
    s.params_digest = digest_of(m, params, seed);
    s.seed = seed;
    return s;
}

// Draws coded assignments: uniform over the space for synthetic sources,
// uniform over the coded rows for sampled external tables.
class Pool {
public:
    Pool(const FactorSpace& space, const RepresentationSource& source) : space_(space), source_(source) {
        if (source.full_coverage()) return;
        const auto& idx = source.sampled_indices();
        if (idx.empty()) throw MetricError("representation has no coded assignments");
        groups_.resize(space.num_factors());
        for (std::size_t k = 0; k < space.num_factors(); ++k) groups_[k].resize(space.cardinality(k));
        for (auto flat : idx) {
            const auto a = assignment_from_index(space, flat);
            for (std::size_t k = 0; k < a.size(); ++k) groups_[k][a[k]].push_back(flat);
        }
    }

    std::uint64_t draw(Rng& rng) const {
        if (source_.full_coverage()) return rng.uniform_index(space_.size());
        const auto& idx = source_.sampled_indices();
        return idx[rng.uniform_index(idx.size())];
    }

    std::uint64_t draw_fixed(Rng& rng, std::size_t k, int value) const {
        if (source_.full_coverage()) {
            auto a = sample_assignment(space_, rng);
            a[k] = value;
            return assignment_index(space_, a);
        }
        const auto& g = groups_[k][value];
        if (g.empty())
            throw MetricError("no coded assignment with " + space_.factor(k).name + " = " + std::to_string(value));
        return g[rng.uniform_index(g.size())];
    }

    void encode(std::uint64_t flat, double* out) const { source_.encode_into(flat, out); }

private:
    const FactorSpace& space_;
    const RepresentationSource& source_;
    std::vector<std::vector<std::vector<std::uint64_t>>> groups_;
};

CodeSample collect(const FactorSpace& space, const RepresentationSource& source,
                   const std::vector<std::uint64_t>& flats) {
    CodeSample s;
    const auto n = static_cast<Eigen::Index>(flats.size());
    s.codes.resize(static_cast<Eigen::Index>(source.code_dim()), n);
    s.factors.resize(static_cast<Eigen::Index>(space.num_factors()), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        source.encode_into(flats[i], s.codes.col(i).data());
        const auto a = assignment_from_index(space, flats[i]);
        for (std::size_t k = 0; k < a.size(); ++k) s.factors(static_cast<Eigen::Index>(k), i) = a[k];
    }
    return s;
}

bool can_enumerate(const FactorSpace& space, const RepresentationSource& source) {
    return source.full_coverage() && space.size() <= kEnumerateLimit;
}

// Population variance per row.
Eigen::VectorXd row_variance(const Eigen::MatrixXd& x) {
    const Eigen::VectorXd mean = x.rowwise().mean();
    return (x.colwise() - mean).array().square().rowwise().mean();
}

double accuracy(const Eigen::VectorXi& truth, const Eigen::VectorXi& pred) {
    return static_cast<double>((truth.array() == pred.array()).count()) / static_cast<double>(truth.size());
}

}  // namespace

std::string_view to_string(MetricKind m) {
    switch (m) {
        case MetricKind::beta_vae: return "beta_vae";
        case MetricKind::factor_vae: return "factor_vae";
        case MetricKind::mig: return "mig";
        case MetricKind::sap: return "sap";
        case MetricKind::dci_disentanglement: return "dci_disentanglement";
        case MetricKind::lr_informativeness: return "lr_informativeness";
        case MetricKind::gbt_informativeness: return "gbt_informativeness";
    }
    return "?";
}

MetricKind parse_metric(std::string_view name) {
    for (auto m : kAllMetrics)
        if (to_string(m) == name) return m;
    throw std::invalid_argument("unknown metric '" + std::string(name) + "'");
}

void MetricParams::set(std::string_view key, std::string_view value) {
    const auto dot = key.find('.');
    if (dot == std::string_view::npos)
        throw std::invalid_argument("metric parameter '" + std::string(key) + "' must look like metric.field");
    const auto metric = key.substr(0, dot), field = key.substr(dot + 1);
    if (metric == "beta_vae") return set_field(beta_vae, metric, field, value);
    if (metric == "factor_vae") return set_field(factor_vae, metric, field, value);
    if (metric == "mig") return set_field(mig, metric, field, value);
    if (metric == "sap") return set_field(sap, metric, field, value);
    if (metric == "dci" || metric == "dci_disentanglement") return set_field(dci, "dci", field, value);
    if (metric == "lr" || metric == "lr_informativeness") return set_field(lr, "lr", field, value);
    if (metric == "gbt" || metric == "gbt_informativeness") return set_field(gbt, "gbt", field, value);
    throw std::invalid_argument("unknown metric '" + std::string(metric) + "' in parameter " + std::string(key));
}

CodeSample sample_codes(const FactorSpace& space, const RepresentationSource& source, std::size_t n, Rng& rng) {
    const Pool pool(space, source);
    std::vector<std::uint64_t> flats(n);
    for (auto& f : flats) f = pool.draw(rng);
    return collect(space, source, flats);
}

CodeSample enumerate_codes(const FactorSpace& space, const RepresentationSource& source) {
    std::vector<std::uint64_t> flats(space.size());
    std::iota(flats.begin(), flats.end(), std::uint64_t{0});
    return collect(space, source, flats);
}

// Linear probe.

LinearProbe LinearProbe::fit(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, int classes, int steps, double lr) {
    LinearProbe p;
    p.mean = x.rowwise().mean();
    p.scale = row_variance(x).cwiseSqrt();
    for (auto& s : p.scale)
        if (s < 1e-12) s = 1;
    const Eigen::MatrixXd z = (x.colwise() - p.mean).array().colwise() / p.scale.array();

    auto net = nn::Mlp<double>::zeros({static_cast<int>(x.rows()), classes});
    auto state = nn::AdamState<double>::like(net, {lr});
    auto grads = nn::Gradients<double>::like(net);
    const std::vector<int> labels(y.data(), y.data() + y.size());
    nn::ForwardCache<double> cache;
    for (int s = 0; s < steps; ++s) {
        const auto logits = nn::mlp_forward(net, z, 0.0, nullptr, false, &cache);
        const auto loss = nn::softmax_cross_entropy(logits, labels);
        grads.set_zero();
        nn::backprop(net, cache, loss.dlogits, grads, false);
        nn::adam_step(state, net, grads, "linear_probe");
    }
    p.w = net.layers[0].w;
    p.b = net.layers[0].b;
    return p;
}

Eigen::VectorXi LinearProbe::predict(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd z = (x.colwise() - mean).array().colwise() / scale.array();
    const Eigen::MatrixXd logits = (w * z).colwise() + b;
    Eigen::VectorXi out(logits.cols());
    for (Eigen::Index i = 0; i < logits.cols(); ++i) logits.col(i).maxCoeff(&out[i]);
    return out;
}

// BetaVAE: a linear probe predicts which factor was held fixed across a batch
// of pairs from the mean absolute code difference.

MetricScore beta_vae_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                           const BetaVaeParams& params) {
    SeededRng rng(seed, 0x42564145);
    const Pool pool(space, source);
    const auto d = static_cast<Eigen::Index>(source.code_dim());
    const auto K = space.num_factors();
    std::vector<double> z1(d), z2(d);

    const auto points = [&](int n, Eigen::MatrixXd& x, Eigen::VectorXi& y) {
        x.setZero(d, n);
        y.resize(n);
        for (int i = 0; i < n; ++i) {
            const auto k = static_cast<std::size_t>(rng.uniform_index(K));
            for (int b = 0; b < params.batch; ++b) {
                const auto first = pool.draw(rng);
                const int v = assignment_from_index(space, first)[k];
                pool.encode(first, z1.data());
                pool.encode(pool.draw_fixed(rng, k, v), z2.data());
                for (Eigen::Index j = 0; j < d; ++j) x(j, i) += std::abs(z1[j] - z2[j]);
            }
            x.col(i) /= params.batch;
            y[i] = static_cast<int>(k);
        }
    };
    Eigen::MatrixXd xt, xe;
    Eigen::VectorXi yt, ye;
    points(params.train_points, xt, yt);
    points(params.eval_points, xe, ye);
    const auto probe = LinearProbe::fit(xt, yt, static_cast<int>(K), params.probe_steps, params.probe_lr);
    return make_score(MetricKind::beta_vae, accuracy(ye, probe.predict(xe)), params.to_json(), seed);
}

// FactorVAE: majority-vote classifier from the lowest-variance normalised
// dimension to the fixed factor.

MetricScore factor_vae_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                             const FactorVaeParams& params) {
    SeededRng rng(seed, 0x46564145);
    const Pool pool(space, source);
    const auto d = static_cast<Eigen::Index>(source.code_dim());
    const auto K = space.num_factors();

    const CodeSample global = can_enumerate(space, source)
                                  ? enumerate_codes(space, source)
                                  : sample_codes(space, source, static_cast<std::size_t>(params.variance_samples), rng);
    const Eigen::VectorXd var = row_variance(global.codes);
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < d; ++j)
        if (var[j] >= params.variance_floor) active.push_back(j);
    if (active.empty()) throw MetricError("factor_vae: no active dimensions (all variances below floor)");
    const auto A = static_cast<Eigen::Index>(active.size());

    Eigen::MatrixXd batch(A, params.batch);
    std::vector<double> z(d);
    const auto vote = [&]() -> std::pair<Eigen::Index, std::size_t> {
        const auto k = static_cast<std::size_t>(rng.uniform_index(K));
        const int v = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(space.cardinality(k))));
        for (int b = 0; b < params.batch; ++b) {
            pool.encode(pool.draw_fixed(rng, k, v), z.data());
            for (Eigen::Index a = 0; a < A; ++a) batch(a, b) = z[active[a]] / std::sqrt(var[active[a]]);
        }
        Eigen::Index arg = 0;
        row_variance(batch).minCoeff(&arg);
        return {arg, k};
    };

    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(A, static_cast<Eigen::Index>(K));
    for (int i = 0; i < params.train_votes; ++i) {
        const auto [a, k] = vote();
        ++counts(a, static_cast<Eigen::Index>(k));
    }
    std::vector<Eigen::Index> majority(A);
    for (Eigen::Index a = 0; a < A; ++a) counts.row(a).maxCoeff(&majority[a]);
    int correct = 0;
    for (int i = 0; i < params.eval_votes; ++i) {
        const auto [a, k] = vote();
        correct += majority[a] == static_cast<Eigen::Index>(k);
    }
    auto s = make_score(MetricKind::factor_vae, static_cast<double>(correct) / params.eval_votes, params.to_json(),
                        seed);
    if (A < d) s.warnings.push_back(std::to_string(d - A) + " inactive dimension(s) dropped");
    return s;
}

// Mutual information.

Eigen::MatrixXi discretize(const Eigen::MatrixXd& codes, int bins) {
    Eigen::MatrixXi out(codes.rows(), codes.cols());
    for (Eigen::Index j = 0; j < codes.rows(); ++j) {
        const double lo = codes.row(j).minCoeff(), hi = codes.row(j).maxCoeff();
        for (Eigen::Index i = 0; i < codes.cols(); ++i) {
            if (hi <= lo) {
                out(j, i) = 0;
                continue;
            }
            const auto b = static_cast<int>(std::floor((codes(j, i) - lo) / (hi - lo) * bins));
            out(j, i) = std::clamp(b, 0, bins - 1);
        }
    }
    return out;
}

MiMatrix discretized_mi(const CodeSample& sample, int bins) {
    const auto binned = discretize(sample.codes, bins);
    const auto d = sample.codes.rows(), K = sample.factors.rows(), n = sample.codes.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    MiMatrix out;
    out.mi.setZero(d, K);
    out.entropy.setZero(K);
    std::vector<Eigen::VectorXd> pz(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        pz[j].setZero(bins);
        for (Eigen::Index i = 0; i < n; ++i) pz[j][binned(j, i)] += inv_n;
    }
    for (Eigen::Index k = 0; k < K; ++k) {
        const int card = sample.factors.row(k).maxCoeff() + 1;
        Eigen::VectorXd pv = Eigen::VectorXd::Zero(card);
        for (Eigen::Index i = 0; i < n; ++i) pv[sample.factors(k, i)] += inv_n;
        for (double p : pv)
            if (p > 0) out.entropy[k] -= p * std::log(p);
        for (Eigen::Index j = 0; j < d; ++j) {
            Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(bins, card);
            for (Eigen::Index i = 0; i < n; ++i) joint(binned(j, i), sample.factors(k, i)) += inv_n;
            double mi = 0;
            if (sample.codes.row(j).maxCoeff() > sample.codes.row(j).minCoeff())
                for (int b = 0; b < bins; ++b)
                    for (int v = 0; v < card; ++v)
                        if (joint(b, v) > 0) mi += joint(b, v) * std::log(joint(b, v) / (pz[j][b] * pv[v]));
            out.mi(j, k) = std::max(mi, 0.0);
        }
    }
    return out;
}

MetricScore mig_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                      const MigParams& params) {
    SeededRng rng(seed, 0x4D4947);
    CodeSample sample;
    if (params.samples == 0 && can_enumerate(space, source))
        sample = enumerate_codes(space, source);
    else
        sample = sample_codes(space, source, static_cast<std::size_t>(params.samples > 0 ? params.samples : 10000), rng);
    const auto m = discretized_mi(sample, params.bins);
    double total = 0;
    int counted = 0;
    for (Eigen::Index k = 0; k < m.mi.cols(); ++k) {
        if (m.entropy[k] <= 0) continue;
        std::vector<double> col(m.mi.col(k).data(), m.mi.col(k).data() + m.mi.rows());
        std::sort(col.begin(), col.end(), std::greater<>());
        const double gap = col[0] - (col.size() > 1 ? col[1] : 0.0);
        total += gap / m.entropy[k];
        ++counted;
    }
    auto s = make_score(MetricKind::mig, counted ? total / counted : 0.0, params.to_json(), seed);
    if (counted < m.mi.cols()) s.warnings.push_back("factors with zero entropy in the sample were skipped");
    return s;
}

// SAP.

IntervalClassifier IntervalClassifier::fit(const Eigen::VectorXd& x, const Eigen::VectorXi& y, int classes, int bins) {
    IntervalClassifier c;
    c.lo = x.minCoeff();
    const double hi = x.maxCoeff();
    c.bins = hi > c.lo ? bins : 1;
    c.width = hi > c.lo ? (hi - c.lo) / bins : 0;

    std::vector<double> count(classes, 0.0);
    for (auto v : y) count[v] += 1;
    // Each sample is worth 1 / (classes_present * n_class) of balanced accuracy.
    int present = 0;
    for (double n : count) present += n > 0;
    const int B = c.bins;
    Eigen::MatrixXd prefix = Eigen::MatrixXd::Zero(B + 1, classes);
    for (Eigen::Index i = 0; i < x.size(); ++i) prefix(c.bin_of(x[i]) + 1, y[i]) += 1.0 / (present * count[y[i]]);
    for (int b = 1; b <= B; ++b) prefix.row(b) += prefix.row(b - 1);

    const auto segment = [&](int a, int b, int& label) {
        Eigen::Index l = 0;
        const double g = (prefix.row(b) - prefix.row(a)).maxCoeff(&l);
        label = static_cast<int>(l);
        return g;
    };
    const int M = std::min(classes, B);
    constexpr double kNeg = -1e300;
    // dp[m][b]: best credit covering bins [0, b) with m intervals.
    std::vector<std::vector<double>> dp(M + 1, std::vector<double>(B + 1, kNeg));
    std::vector<std::vector<int>> from(M + 1, std::vector<int>(B + 1, -1));
    dp[0][0] = 0;
    for (int m = 1; m <= M; ++m)
        for (int b = 1; b <= B; ++b)
            for (int a = m - 1; a < b; ++a) {
                if (dp[m - 1][a] == kNeg) continue;
                int label = 0;
                const double v = dp[m - 1][a] + segment(a, b, label);
                if (v > dp[m][b] + 1e-15) {
                    dp[m][b] = v;
                    from[m][b] = a;
                }
            }
    int best_m = 1;
    for (int m = 2; m <= M; ++m)
        if (dp[m][B] > dp[best_m][B] + 1e-15) best_m = m;
    c.bin_label.assign(B, 0);
    for (int m = best_m, b = B; m > 0; --m) {
        const int a = from[m][b];
        int label = 0;
        segment(a, b, label);
        for (int i = a; i < b; ++i) c.bin_label[i] = label;
        b = a;
    }
    return c;
}

int IntervalClassifier::bin_of(double v) const {
    if (width <= 0) return 0;
    return std::clamp(static_cast<int>(std::floor((v - lo) / width)), 0, bins - 1);
}

int IntervalClassifier::predict(double v) const { return bin_label[bin_of(v)]; }

double balanced_accuracy(const std::vector<int>& truth, const std::vector<int>& predicted, int classes) {
    std::vector<double> n(classes, 0.0), hit(classes, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        n[truth[i]] += 1;
        hit[truth[i]] += truth[i] == predicted[i];
    }
    double total = 0;
    int present = 0;
    for (int c = 0; c < classes; ++c)
        if (n[c] > 0) {
            total += hit[c] / n[c];
            ++present;
        }
    return present ? total / present : 0.0;
}

MetricScore sap_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                      const SapParams& params) {
    SeededRng rng(seed, 0x534150);
    const auto train = sample_codes(space, source, static_cast<std::size_t>(params.train_points), rng);
    const auto test = sample_codes(space, source, static_cast<std::size_t>(params.test_points), rng);
    const auto d = train.codes.rows(), K = train.factors.rows();
    Eigen::MatrixXd score = Eigen::MatrixXd::Zero(d, K);
    std::vector<int> truth(test.codes.cols()), pred(test.codes.cols());
    for (Eigen::Index k = 0; k < K; ++k) {
        const int classes = space.cardinality(static_cast<std::size_t>(k));
        for (Eigen::Index i = 0; i < test.codes.cols(); ++i) truth[i] = test.factors(k, i);
        for (Eigen::Index j = 0; j < d; ++j) {
            const auto clf = IntervalClassifier::fit(train.codes.row(j).transpose(),
                                                     train.factors.row(k).transpose(), classes, params.bins);
            for (Eigen::Index i = 0; i < test.codes.cols(); ++i) pred[i] = clf.predict(test.codes(j, i));
            const double chance = 1.0 / classes;
            const double bacc = balanced_accuracy(truth, pred, classes);
            score(j, k) = std::max(0.0, (bacc - chance) / (1 - chance));
        }
    }
    double total = 0;
    for (Eigen::Index k = 0; k < K; ++k) {
        std::vector<double> col(score.col(k).data(), score.col(k).data() + d);
        std::sort(col.begin(), col.end(), std::greater<>());
        total += col[0] - (d > 1 ? col[1] : 0.0);
    }
    return make_score(MetricKind::sap, total / static_cast<double>(K), params.to_json(), seed);
}

// DCI.

Eigen::MatrixXd dci_importance(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                               const DciParams& params, std::vector<std::string>* warnings) {
    SeededRng rng(seed, 0x444349);
    const auto train = sample_codes(space, source, static_cast<std::size_t>(params.train_points), rng);
    const auto binned = trees::apply(trees::Binning::fit(train.codes), train.codes);
    const auto K = train.factors.rows();
    Eigen::MatrixXd R(train.codes.rows(), K);
    std::vector<int> labels(train.codes.cols());
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index i = 0; i < train.codes.cols(); ++i) labels[i] = train.factors(k, i);
        auto tree_rng = rng.split(0x100 + static_cast<std::uint64_t>(k));
        const auto forest = trees::fit_forest(binned, labels, space.cardinality(static_cast<std::size_t>(k)),
                                              {params.trees, params.max_depth, true}, tree_rng);
        const auto imp = forest.importances();
        for (Eigen::Index j = 0; j < R.rows(); ++j) R(j, k) = imp[j];
        if (warnings && R.col(k).sum() <= 0)
            warnings->push_back("no informative split for factor " + space.factor(static_cast<std::size_t>(k)).name);
    }
    return R;
}

double dci_disentanglement(const Eigen::MatrixXd& R, std::vector<std::string>* warnings) {
    if ((R.array() < 0).any()) throw std::invalid_argument("importance matrix has negative entries");
    const double total = R.sum();
    if (total <= 0) {
        if (warnings) warnings->push_back("importance matrix is all zero");
        return 0.0;
    }
    const auto K = R.cols();
    double score = 0;
    for (Eigen::Index j = 0; j < R.rows(); ++j) {
        const double mass = R.row(j).sum();
        if (mass <= 0) continue;
        double h = 0;
        for (Eigen::Index k = 0; k < K; ++k) {
            const double p = R(j, k) / mass;
            if (p > 0) h -= p * std::log(p);
        }
        const double d = K > 1 ? 1 - h / std::log(static_cast<double>(K)) : 1.0;
        score += mass / total * d;
    }
    return score;
}

MetricScore dci_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                      const DciParams& params) {
    std::vector<std::string> warnings;
    const auto R = dci_importance(space, source, seed, params, &warnings);
    auto s = make_score(MetricKind::dci_disentanglement, dci_disentanglement(R, &warnings), params.to_json(), seed);
    s.warnings = std::move(warnings);
    return s;
}

// Informativeness.

MetricScore lr_informativeness(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                               const LrParams& params) {
    SeededRng rng(seed, 0x4C52);
    const auto train = sample_codes(space, source, static_cast<std::size_t>(params.train_points), rng);
    const auto test = sample_codes(space, source, static_cast<std::size_t>(params.test_points), rng);
    double total = 0;
    for (Eigen::Index k = 0; k < train.factors.rows(); ++k) {
        const auto probe = LinearProbe::fit(train.codes, train.factors.row(k).transpose(),
                                            space.cardinality(static_cast<std::size_t>(k)), params.steps, params.lr);
        total += accuracy(test.factors.row(k).transpose(), probe.predict(test.codes));
    }
    return make_score(MetricKind::lr_informativeness, total / static_cast<double>(train.factors.rows()),
                      params.to_json(), seed);
}

MetricScore gbt_informativeness(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                                const GbtParams& params) {
    SeededRng rng(seed, 0x474254);
    const auto train = sample_codes(space, source, static_cast<std::size_t>(params.train_points), rng);
    const auto test = sample_codes(space, source, static_cast<std::size_t>(params.test_points), rng);
    const auto binning = trees::Binning::fit(train.codes);
    const auto xtr = trees::apply(binning, train.codes), xte = trees::apply(binning, test.codes);
    const trees::BoostParams bp{params.rounds, params.max_depth, params.learning_rate, params.lambda, 1.0};
    double total = 0;
    std::vector<int> labels(train.codes.cols());
    for (Eigen::Index k = 0; k < train.factors.rows(); ++k) {
        for (Eigen::Index i = 0; i < train.codes.cols(); ++i) labels[i] = train.factors(k, i);
        const auto model = trees::fit_boosted(xtr, labels, space.cardinality(static_cast<std::size_t>(k)), bp);
        int hit = 0;
        for (std::size_t i = 0; i < xte.samples; ++i)
            hit += model.predict(xte, i) == test.factors(k, static_cast<Eigen::Index>(i));
        total += static_cast<double>(hit) / static_cast<double>(xte.samples);
    }
    return make_score(MetricKind::gbt_informativeness, total / static_cast<double>(train.factors.rows()),
                      params.to_json(), seed);
}

MetricScore compute_metric(MetricKind metric, const FactorSpace& space, const RepresentationSource& source,
                           std::uint64_t seed, const MetricParams& params) {
    switch (metric) {
        case MetricKind::beta_vae: return beta_vae_score(space, source, seed, params.beta_vae);
        case MetricKind::factor_vae: return factor_vae_score(space, source, seed, params.factor_vae);
        case MetricKind::mig: return mig_score(space, source, seed, params.mig);
        case MetricKind::sap: return sap_score(space, source, seed, params.sap);
        case MetricKind::dci_disentanglement: return dci_score(space, source, seed, params.dci);
        case MetricKind::lr_informativeness: return lr_informativeness(space, source, seed, params.lr);
        case MetricKind::gbt_informativeness: return gbt_informativeness(space, source, seed, params.gbt);
    }
    throw std::invalid_argument("unknown metric");
}

void write_scores_csv(std::ostream& out, const std::string& model_id, const std::vector<MetricScore>& scores,
                      bool header) {
    if (header) out << "model_id,metric,value,params_digest,seed\n";
    char buf[32];
    for (const auto& s : scores) {
        std::snprintf(buf, sizeof buf, "%.6f", s.value);
        out << csv_field(model_id) << ',' << to_string(s.metric) << ',' << buf << ',' << s.params_digest << ',' << s.seed << '\n';
    }
}

}  // namespace avr
