#include "avr/trees.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace avr::trees {

Binning Binning::fit(const Eigen::MatrixXd& x) {
    Binning b;
    b.cuts.resize(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index f = 0; f < x.rows(); ++f) {
        std::vector<double> v(x.cols());
        for (Eigen::Index s = 0; s < x.cols(); ++s) v[s] = x(f, s);
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        // Cuts sit midway between distinct values at rank boundaries that are
        // symmetric under reversal, so monotone rescaling (including sign
        // flips) yields the same partitions.
        auto& cuts = b.cuts[f];
        const std::size_t n = v.size();
        const std::size_t bins = std::min<std::size_t>(n, kMaxBins);
        for (std::size_t i = 1; i < bins; ++i) {
            if (2 * i == bins && n % 2 == 1) continue;
            const std::size_t r = 2 * i <= bins ? i * n / bins : n - (bins - i) * n / bins;
            cuts.push_back(0.5 * (v[r - 1] + v[r]));
        }
    }
    return b;
}

int Binning::bin(std::size_t feature, double v) const {
    const auto& c = cuts[feature];
    return static_cast<int>(std::lower_bound(c.begin(), c.end(), v) - c.begin());
}

BinnedData apply(const Binning& binning, const Eigen::MatrixXd& x) {
    if (static_cast<std::size_t>(x.rows()) != binning.cuts.size())
        throw std::invalid_argument("binning fitted on " + std::to_string(binning.cuts.size()) +
                                    " features, data has " + std::to_string(x.rows()));
    BinnedData d;
    d.features = static_cast<std::size_t>(x.rows());
    d.samples = static_cast<std::size_t>(x.cols());
    d.codes.resize(d.features * d.samples);
    for (std::size_t s = 0; s < d.samples; ++s)
        for (std::size_t f = 0; f < d.features; ++f)
            d.codes[s * d.features + f] = static_cast<std::uint8_t>(binning.bin(f, x(f, s)));
    return d;
}

const Node& Tree::leaf_for(const BinnedData& data, std::size_t sample) const {
    const Node* n = &nodes[0];
    while (n->feature >= 0) n = &nodes[data.at(n->feature, sample) <= n->threshold ? n->left : n->right];
    return *n;
}

namespace {

// Histograms only need the maximum bin count over features.
int max_bins(const BinnedData& data) {
    int m = 1;
    for (std::size_t i = 0; i < data.codes.size(); ++i) m = std::max(m, data.codes[i] + 1);
    return m;
}

double gini_mass(const double* counts, int classes, double n) {
    // n * gini = n - sum c^2 / n
    if (n <= 0) return 0;
    double sq = 0;
    for (int c = 0; c < classes; ++c) sq += counts[c] * counts[c];
    return n - sq / n;
}

struct Pending {
    int node;
    std::vector<std::size_t> rows;
    int depth;
};

}  // namespace

Tree fit_classification_tree(const BinnedData& data, const std::vector<int>& labels, int classes,
                             const std::vector<std::size_t>& rows, int max_depth) {
    Tree tree;
    tree.importance.assign(data.features, 0.0);
    if (rows.empty()) throw std::invalid_argument("classification tree needs at least one row");
    const int nb = max_bins(data);
    const double n_root = static_cast<double>(rows.size());
    std::vector<double> hist(static_cast<std::size_t>(nb) * classes);
    std::vector<double> left(classes), total(classes);

    tree.nodes.emplace_back();
    std::vector<Pending> stack;
    stack.push_back({0, rows, 0});
    while (!stack.empty()) {
        Pending p = std::move(stack.back());
        stack.pop_back();
        std::fill(total.begin(), total.end(), 0.0);
        for (auto r : p.rows) total[labels[r]] += 1;
        const double n = static_cast<double>(p.rows.size());
        const double node_mass = gini_mass(total.data(), classes, n);

        // Candidates within rounding of the best gain. Exact ties are common
        // in small nodes; they are resolved by a hash of the row partition
        // rather than by feature order, and the credit is shared among the
        // features producing that partition.
        std::vector<std::pair<int, int>> tied;
        double best_gain = 1e-12;
        if (p.depth < max_depth && node_mass > 1e-12) {
            for (std::size_t f = 0; f < data.features; ++f) {
                std::fill(hist.begin(), hist.end(), 0.0);
                int top = 0;
                for (auto r : p.rows) {
                    const int b = data.at(f, r);
                    hist[static_cast<std::size_t>(b) * classes + labels[r]] += 1;
                    top = std::max(top, b);
                }
                std::fill(left.begin(), left.end(), 0.0);
                double nl = 0;
                for (int b = 0; b < top; ++b) {
                    for (int c = 0; c < classes; ++c) {
                        left[c] += hist[static_cast<std::size_t>(b) * classes + c];
                        nl += hist[static_cast<std::size_t>(b) * classes + c];
                    }
                    if (nl <= 0 || nl >= n) continue;
                    double right_sq = 0, left_sq = 0;
                    for (int c = 0; c < classes; ++c) {
                        left_sq += left[c] * left[c];
                        const double rc = total[c] - left[c];
                        right_sq += rc * rc;
                    }
                    const double gain = node_mass - ((nl - left_sq / nl) + ((n - nl) - right_sq / (n - nl)));
                    const double tol = 1e-12 * std::max(1.0, best_gain);
                    if (gain > best_gain + tol) {
                        best_gain = gain;
                        tied.assign(1, {static_cast<int>(f), b});
                    } else if (gain >= best_gain - tol && !tied.empty()) {
                        tied.emplace_back(static_cast<int>(f), b);
                    }
                }
            }
        }

        if (tied.empty()) {
            tree.nodes[p.node].value = total;
            continue;
        }
        int best_f = tied[0].first, best_t = tied[0].second;
        std::vector<int> credited{best_f};
        if (tied.size() > 1) {
            const auto key = [&](int f, int t) {
                std::uint64_t lh = 0, rh = 0;
                for (auto r : p.rows) (data.at(f, r) <= t ? lh : rh) += mix64(r + 1);
                return std::min(lh, rh);
            };
            std::vector<std::uint64_t> keys;
            for (auto [f, t] : tied) keys.push_back(key(f, t));
            const auto best = *std::min_element(keys.begin(), keys.end());
            credited.clear();
            best_f = -1;
            for (std::size_t i = 0; i < tied.size(); ++i) {
                if (keys[i] != best) continue;
                if (best_f < 0) best_f = tied[i].first, best_t = tied[i].second;
                if (std::find(credited.begin(), credited.end(), tied[i].first) == credited.end())
                    credited.push_back(tied[i].first);
            }
        }
        for (int f : credited) tree.importance[f] += best_gain / n_root / static_cast<double>(credited.size());
        tree.total_decrease += best_gain / n_root;
        std::vector<std::size_t> lrows, rrows;
        for (auto r : p.rows) (data.at(best_f, r) <= best_t ? lrows : rrows).push_back(r);
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        Node& node = tree.nodes[p.node];
        node.feature = best_f;
        node.threshold = best_t;
        node.left = l;
        node.right = l + 1;
        stack.push_back({l + 1, std::move(rrows), p.depth + 1});
        stack.push_back({l, std::move(lrows), p.depth + 1});
    }
    return tree;
}

int Forest::predict(const BinnedData& data, std::size_t sample) const {
    std::vector<double> votes(classes, 0.0);
    for (const auto& t : trees) {
        const auto& v = t.leaf_for(data, sample).value;
        double n = 0;
        for (double c : v) n += c;
        for (int c = 0; c < classes; ++c) votes[c] += v[c] / n;
    }
    return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

std::vector<double> Forest::importances() const {
    std::vector<double> out;
    if (trees.empty()) return out;
    out.assign(trees.front().importance.size(), 0.0);
    for (const auto& t : trees) {
        if (t.total_decrease <= 0) continue;
        for (std::size_t f = 0; f < out.size(); ++f) out[f] += t.importance[f] / t.total_decrease;
    }
    for (auto& v : out) v /= static_cast<double>(trees.size());
    return out;
}

Forest fit_forest(const BinnedData& data, const std::vector<int>& labels, int classes, const ForestParams& params,
                  Rng& rng) {
    if (labels.size() != data.samples) throw std::invalid_argument("forest labels do not match sample count");
    Forest forest;
    forest.classes = classes;
    std::vector<std::size_t> rows(data.samples);
    for (int t = 0; t < params.trees; ++t) {
        for (std::size_t i = 0; i < rows.size(); ++i)
            rows[i] = params.bootstrap ? static_cast<std::size_t>(rng.uniform_index(data.samples)) : i;
        forest.trees.push_back(fit_classification_tree(data, labels, classes, rows, params.max_depth));
    }
    return forest;
}

namespace {

Tree fit_regression_tree(const BinnedData& data, const std::vector<double>& g, const std::vector<double>& h,
                         const BoostParams& params, int nb) {
    Tree tree;
    tree.importance.assign(data.features, 0.0);
    std::vector<double> hg(nb), hh(nb);
    std::vector<std::size_t> all(data.samples);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    tree.nodes.emplace_back();
    std::vector<Pending> stack;
    stack.push_back({0, std::move(all), 0});
    const double lambda = params.lambda;
    while (!stack.empty()) {
        Pending p = std::move(stack.back());
        stack.pop_back();
        double G = 0, H = 0;
        for (auto r : p.rows) {
            G += g[r];
            H += h[r];
        }
        const double parent = G * G / (H + lambda);
        int best_f = -1, best_t = 0;
        double best_gain = 1e-12;
        if (p.depth < params.max_depth) {
            for (std::size_t f = 0; f < data.features; ++f) {
                std::fill(hg.begin(), hg.end(), 0.0);
                std::fill(hh.begin(), hh.end(), 0.0);
                int top = 0;
                for (auto r : p.rows) {
                    const int b = data.at(f, r);
                    hg[b] += g[r];
                    hh[b] += h[r];
                    top = std::max(top, b);
                }
                double gl = 0, hl = 0;
                for (int b = 0; b < top; ++b) {
                    gl += hg[b];
                    hl += hh[b];
                    const double gr = G - gl, hr = H - hl;
                    if (hl < params.min_child_weight || hr < params.min_child_weight) continue;
                    const double gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_f = static_cast<int>(f);
                        best_t = b;
                    }
                }
            }
        }
        if (best_f < 0) {
            tree.nodes[p.node].value = {-G / (H + lambda)};
            continue;
        }
        tree.importance[best_f] += best_gain;
        tree.total_decrease += best_gain;
        std::vector<std::size_t> lrows, rrows;
        for (auto r : p.rows) (data.at(best_f, r) <= best_t ? lrows : rrows).push_back(r);
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        Node& node = tree.nodes[p.node];
        node.feature = best_f;
        node.threshold = best_t;
        node.left = l;
        node.right = l + 1;
        stack.push_back({l + 1, std::move(rrows), p.depth + 1});
        stack.push_back({l, std::move(lrows), p.depth + 1});
    }
    return tree;
}

}  // namespace

std::vector<double> BoostedModel::margins(const BinnedData& data, std::size_t sample) const {
    std::vector<double> m(classes, 0.0);
    for (const auto& round : rounds)
        for (int c = 0; c < classes; ++c) m[c] += learning_rate * round[c].leaf_for(data, sample).value[0];
    return m;
}

int BoostedModel::predict(const BinnedData& data, std::size_t sample) const {
    const auto m = margins(data, sample);
    return static_cast<int>(std::max_element(m.begin(), m.end()) - m.begin());
}

BoostedModel fit_boosted(const BinnedData& data, const std::vector<int>& labels, int classes,
                         const BoostParams& params) {
    if (labels.size() != data.samples) throw std::invalid_argument("boosting labels do not match sample count");
    BoostedModel model;
    model.classes = classes;
    model.learning_rate = params.learning_rate;
    const std::size_t n = data.samples;
    const int nb = max_bins(data);
    std::vector<double> margin(n * classes, 0.0), prob(n * classes);
    std::vector<double> g(n), h(n);
    for (int r = 0; r < params.rounds; ++r) {
        for (std::size_t s = 0; s < n; ++s) {
            const double* m = &margin[s * classes];
            const double mx = *std::max_element(m, m + classes);
            double z = 0;
            for (int c = 0; c < classes; ++c) z += (prob[s * classes + c] = std::exp(m[c] - mx));
            for (int c = 0; c < classes; ++c) prob[s * classes + c] /= z;
        }
        std::vector<Tree> round;
        for (int c = 0; c < classes; ++c) {
            for (std::size_t s = 0; s < n; ++s) {
                const double p = prob[s * classes + c];
                g[s] = p - (labels[s] == c ? 1.0 : 0.0);
                h[s] = std::max(p * (1 - p), 1e-16);
            }
            round.push_back(fit_regression_tree(data, g, h, params, nb));
            for (std::size_t s = 0; s < n; ++s)
                margin[s * classes + c] += params.learning_rate * round.back().leaf_for(data, s).value[0];
        }
        model.rounds.push_back(std::move(round));
    }
    return model;
}

}  // namespace avr::trees
