#pragma once

// Histogram decision trees over pre-binned features: Gini classification
// trees (random-forest importances) and second-order regression trees
// (softmax gradient boosting).

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "avr/rng.hpp"

namespace avr::trees {

inline constexpr int kMaxBins = 64;

/// Per-feature cut points. A value x falls into bin b = #{cuts < x}, so a
/// split "bin <= b" equals "x <= cuts[b]". Features with at most kMaxBins
/// distinct values get one bin per value, others kMaxBins equal-width bins.
struct Binning {
    std::vector<std::vector<double>> cuts;

    static Binning fit(const Eigen::MatrixXd& x);  // x: features x samples
    [[nodiscard]] int bins(std::size_t feature) const { return static_cast<int>(cuts[feature].size()) + 1; }
    [[nodiscard]] int bin(std::size_t feature, double v) const;
};

/// Column-major bin codes, features x samples.
struct BinnedData {
    std::size_t features = 0, samples = 0;
    std::vector<std::uint8_t> codes;  // codes[s * features + f]
    [[nodiscard]] std::uint8_t at(std::size_t f, std::size_t s) const { return codes[s * features + f]; }
};
BinnedData apply(const Binning& binning, const Eigen::MatrixXd& x);

struct Node {
    int feature = -1;  // -1 marks a leaf
    int threshold = 0; // go left when bin <= threshold
    int left = -1, right = -1;
    std::vector<double> value;  // leaf: class counts (classification) or {weight} (regression)
};

struct Tree {
    std::vector<Node> nodes;
    /// Impurity decrease per feature summed over this tree's splits, each
    /// weighted by node sample share.
    std::vector<double> importance;
    double total_decrease = 0;

    [[nodiscard]] const Node& leaf_for(const BinnedData& data, std::size_t sample) const;
};

struct ForestParams {
    int trees = 10;
    int max_depth = 8;
    bool bootstrap = true;
};

/// Gini classification tree on `rows` (may repeat, bootstrap style).
Tree fit_classification_tree(const BinnedData& data, const std::vector<int>& labels, int classes,
                             const std::vector<std::size_t>& rows, int max_depth);

struct Forest {
    std::vector<Tree> trees;
    int classes = 0;
    [[nodiscard]] int predict(const BinnedData& data, std::size_t sample) const;
    /// Mean over trees of per-tree importances normalised to unit sum;
    /// trees without splits contribute zeros.
    [[nodiscard]] std::vector<double> importances() const;
};

Forest fit_forest(const BinnedData& data, const std::vector<int>& labels, int classes, const ForestParams& params,
                  Rng& rng);

struct BoostParams {
    int rounds = 100;
    int max_depth = 3;
    double learning_rate = 0.1;
    double lambda = 1.0;
    double min_child_weight = 1.0;
};

/// Softmax gradient boosting: one regression tree per class per round.
struct BoostedModel {
    std::vector<std::vector<Tree>> rounds;  // rounds[r][class]
    int classes = 0;
    double learning_rate = 0.1;
    [[nodiscard]] std::vector<double> margins(const BinnedData& data, std::size_t sample) const;
    [[nodiscard]] int predict(const BinnedData& data, std::size_t sample) const;
};

BoostedModel fit_boosted(const BinnedData& data, const std::vector<int>& labels, int classes, const BoostParams& params);

}  // namespace avr::trees
