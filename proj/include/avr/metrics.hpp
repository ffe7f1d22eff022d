#pragma once

// Disentanglement and informativeness scores of a representation source over
// a factor space. Every metric samples assignments uniformly from the space
// (or enumerates it), encodes them with the source and reports one scalar.

#include <Eigen/Dense>

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "avr/factor_space.hpp"
#include "avr/representation.hpp"
#include "avr/rng.hpp"

namespace avr {

enum class MetricKind {
    beta_vae,
    factor_vae,
    mig,
    sap,
    dci_disentanglement,
    lr_informativeness,
    gbt_informativeness,
};

inline constexpr MetricKind kAllMetrics[] = {
    MetricKind::beta_vae, MetricKind::factor_vae,          MetricKind::mig,
    MetricKind::sap,      MetricKind::dci_disentanglement, MetricKind::lr_informativeness,
    MetricKind::gbt_informativeness,
};

std::string_view to_string(MetricKind m);
MetricKind parse_metric(std::string_view name);

/// Raised when a metric is undefined for the given codes.
class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct MetricScore {
    MetricKind metric{};
    double value = 0;
    std::string params_digest;  // hash of metric name, parameters and seed
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

// Parameter sets. `to_json` feeds the params digest.

struct BetaVaeParams {
    int batch = 64;
    int train_points = 10000;
    int eval_points = 5000;
    int probe_steps = 1000;
    double probe_lr = 0.05;
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct FactorVaeParams {
    int batch = 64;
    int train_votes = 10000;
    int eval_votes = 5000;
    int variance_samples = 10000;  // used when the space is too large to enumerate
    double variance_floor = 1e-6;
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct MigParams {
    int bins = 20;
    int samples = 0;  // 0: enumerate when feasible, else 10000 draws
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct SapParams {
    int train_points = 10000;
    int test_points = 5000;
    int bins = 20;
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct DciParams {
    int train_points = 8000;
    int trees = 10;
    int max_depth = 8;
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct LrParams {
    int train_points = 10000;
    int test_points = 5000;
    int steps = 1000;
    double lr = 0.05;
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct GbtParams {
    int train_points = 10000;
    int test_points = 5000;
    int rounds = 100;
    int max_depth = 3;
    double learning_rate = 0.1;
    double lambda = 1.0;
    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

struct MetricParams {
    BetaVaeParams beta_vae;
    FactorVaeParams factor_vae;
    MigParams mig;
    SapParams sap;
    DciParams dci;
    LrParams lr;
    GbtParams gbt;
    /// Applies `metric.key=value` overrides; unknown keys throw.
    void set(std::string_view key, std::string_view value);
};

/// Codes (d x n) and factor values (K x n) of sampled assignments.
struct CodeSample {
    Eigen::MatrixXd codes;
    Eigen::MatrixXi factors;
};

CodeSample sample_codes(const FactorSpace& space, const RepresentationSource& source, std::size_t n, Rng& rng);
/// Every assignment of the space, in flat-index order.
CodeSample enumerate_codes(const FactorSpace& space, const RepresentationSource& source);

// Individual metrics.

MetricScore beta_vae_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                           const BetaVaeParams& params = {});
MetricScore factor_vae_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                             const FactorVaeParams& params = {});

/// Plug-in mutual information (nats) between equal-width-binned code
/// dimensions and factors.
struct MiMatrix {
    Eigen::MatrixXd mi;         // d x K
    Eigen::VectorXd entropy;    // K, factor entropies in the same sample
};
/// Bin index of every code entry: equal-width bins over each dimension's
/// observed range; a zero-width dimension maps to bin 0.
Eigen::MatrixXi discretize(const Eigen::MatrixXd& codes, int bins);
MiMatrix discretized_mi(const CodeSample& sample, int bins);
MetricScore mig_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                      const MigParams& params = {});

/// 1-D interval classifier: at most `classes` intervals over `bins`
/// equal-width bins of the training range, maximising balanced accuracy.
struct IntervalClassifier {
    double lo = 0, width = 0;
    int bins = 1;
    std::vector<int> bin_label;
    static IntervalClassifier fit(const Eigen::VectorXd& x, const Eigen::VectorXi& y, int classes, int bins);
    [[nodiscard]] int bin_of(double x) const;
    [[nodiscard]] int predict(double x) const;
};
double balanced_accuracy(const std::vector<int>& truth, const std::vector<int>& predicted, int classes);
MetricScore sap_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                      const SapParams& params = {});

/// Importance matrix R (d x K): column k holds random-forest impurity
/// importances of each code dimension when predicting factor k.
Eigen::MatrixXd dci_importance(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                               const DciParams& params = {}, std::vector<std::string>* warnings = nullptr);
/// Importance-weighted mean over code dimensions of 1 - H_K(row). Rows with
/// no importance are skipped; an all-zero matrix scores 0 with a warning.
double dci_disentanglement(const Eigen::MatrixXd& importance, std::vector<std::string>* warnings = nullptr);
MetricScore dci_score(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                      const DciParams& params = {});

/// Multinomial logistic regression on standardised features, full-batch Adam.
struct LinearProbe {
    Eigen::MatrixXd w;  // classes x d
    Eigen::VectorXd b;
    Eigen::VectorXd mean, scale;
    static LinearProbe fit(const Eigen::MatrixXd& x, const Eigen::VectorXi& y, int classes, int steps, double lr);
    [[nodiscard]] Eigen::VectorXi predict(const Eigen::MatrixXd& x) const;
};

MetricScore lr_informativeness(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                               const LrParams& params = {});
MetricScore gbt_informativeness(const FactorSpace& space, const RepresentationSource& source, std::uint64_t seed,
                                const GbtParams& params = {});

MetricScore compute_metric(MetricKind metric, const FactorSpace& space, const RepresentationSource& source,
                           std::uint64_t seed, const MetricParams& params = {});

/// Scores CSV `model_id,metric,value,params_digest,seed`.
void write_scores_csv(std::ostream& out, const std::string& model_id, const std::vector<MetricScore>& scores,
                      bool header = true);

}  // namespace avr
