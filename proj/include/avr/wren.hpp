#pragma once

// Wild Relation Network over precomputed panel codes.
//
// Panels 0..7 are the context (row-major), panel 8 is the candidate answer.
// The relation sum runs over the 72 ordered pairs (i, j), i != j, of the nine
// panel embeddings; g sees [e_i; e_j]. In batched form the 56 context-context
// pairs are evaluated once per instance and shared by all six candidates, and
// each candidate adds its 16 pairs (i, 8) and (8, i), i = 0..7.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avr/factor_space.hpp"
#include "avr/representation.hpp"
#include "avr/rpm.hpp"
#include "avr/tiny_nn.hpp"

namespace avr {

struct WrenConfig {
    double lr = 1e-3;
    int edge_units = 256;
    int edge_layers = 2;
    int graph_units = 128;
    int graph_layers = 1;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    // One-hot panel position (9 dims) appended to every embedding.
    bool position_tags = true;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    static WrenConfig from_json(const nlohmann::json& j);
    /// Hex digest of the canonical JSON form.
    [[nodiscard]] std::string digest() const;
    /// Throws unless every searched field is in its allowed set.
    void validate() const;
};

inline constexpr std::array<double, 3> kLrChoices{0.01, 0.001, 0.0001};
inline constexpr std::array<int, 2> kEdgeUnitChoices{256, 512};
inline constexpr std::array<int, 3> kEdgeLayerChoices{2, 3, 4};
inline constexpr std::array<int, 2> kGraphUnitChoices{128, 256};
inline constexpr std::array<int, 2> kGraphLayerChoices{1, 2};
inline constexpr std::array<double, 4> kDropoutChoices{0.0, 0.25, 0.5, 0.75};
inline constexpr int kPositionTagDim = 9;

/// Independent uniform draw of every searched field; the config's own seed is
/// drawn last.
WrenConfig sample_config(Rng& rng);
/// sample_config on SeededRng(config_seed), sweep convenience.
WrenConfig sample_config(std::uint64_t config_seed);

template <class T>
struct WrenParams {
    nn::Mlp<T> g;  // 2 * embed_dim -> edge_units (x edge_layers), rectified output
    nn::Mlp<T> f;  // edge_units -> graph_units (x graph_layers) -> 1
    std::size_t code_dim = 0;
    bool position_tags = true;

    [[nodiscard]] std::size_t embed_dim() const { return code_dim + (position_tags ? kPositionTagDim : 0); }
    template <class U>
    [[nodiscard]] WrenParams<U> cast() const {
        return {g.template cast<U>(), f.template cast<U>(), code_dim, position_tags};
    }
};

template <class T>
WrenParams<T> init_wren(const WrenConfig& config, std::size_t code_dim);
/// Widths overridden, for reduced-size checks.
template <class T>
WrenParams<T> init_wren(const WrenConfig& config, std::size_t code_dim, int edge_units, int graph_units);

// Single-instance reference path.

/// Score of one candidate: f(sum over ordered pairs of g(e_i, e_j)).
double wren_score(const WrenParams<double>& params, const std::array<Eigen::VectorXd, 8>& context,
                  const Eigen::VectorXd& answer, double dropout = 0.0, Rng* rng = nullptr, bool train = false);

struct WrenPrediction {
    std::array<double, 6> logits{};
    std::array<double, 6> probs{};
    int prediction = 0;  // argmax, lowest index on ties
};

WrenPrediction wren_forward(const WrenParams<double>& params, const std::array<Eigen::VectorXd, 8>& context,
                            const std::array<Eigen::VectorXd, 6>& answers);

// Batched path. `codes` holds 14 columns per instance: 8 context codes then
// 6 answer codes.

template <class T>
struct WrenCache {
    nn::ForwardCache<T> g, f;
    int batch = 0;
};

template <class T>
struct WrenGrads {
    nn::Gradients<T> g, f;
    static WrenGrads like(const WrenParams<T>& p) {
        return {nn::Gradients<T>::like(p.g), nn::Gradients<T>::like(p.f)};
    }
    void set_zero() {
        g.set_zero();
        f.set_zero();
    }
};

/// Logits, 6 x batch.
template <class T>
nn::Mat<T> wren_logits(const WrenParams<T>& params, const nn::Mat<T>& codes, double dropout = 0.0, Rng* rng = nullptr,
                       bool train = false, WrenCache<T>* cache = nullptr);

template <class T>
void wren_backward(const WrenParams<T>& params, const WrenCache<T>& cache, const nn::Mat<T>& dlogits,
                   WrenGrads<T>& grads);

/// Argmax per column, lowest index on ties.
template <class T>
std::vector<int> predictions(const nn::Mat<T>& logits);

// Training.

struct TrainRecord {
    int step = 0;
    double eval_accuracy = 0;
    double train_loss = 0;  // mean training loss since the previous record; NaN at step 0
};

inline const std::vector<int> kCheckpointSteps{1000, 2000, 5000, 10000, 20000, 50000, 100000};

struct TrainOptions {
    int steps = 100000;
    int batch = 32;
    int eval_every = 1000;
    int eval_batches = 100;
    // Parameters are written at these steps when checkpoint_dir is set.
    std::vector<int> checkpoint_steps = kCheckpointSteps;
    std::filesystem::path checkpoint_dir;
    // float32 arithmetic inside the training loop; double otherwise.
    bool single_precision = true;
    bool strict_instances = false;
    std::function<void(const TrainRecord&)> on_record;
};

struct TrainResult {
    std::vector<TrainRecord> records;  // step 0 (untrained) and every eval_every steps
    WrenParams<double> params;
};

/// Fresh instances every step; evaluation on eval_batches fresh mini-batches
/// with dropout disabled. Throws on a non-finite loss, naming the step and
/// the config digest.
TrainResult train_wren(const WrenConfig& config, const FactorSpace& space, const RepresentationSource& source,
                       std::uint64_t generator_seed, const TrainOptions& options = {});

/// Accuracy of `params` on `batches` x `batch` instances of the eval stream
/// of `generator_seed` starting at round `round`.
double evaluate_wren(const WrenParams<double>& params, const FactorSpace& space, const RepresentationSource& source,
                     std::uint64_t generator_seed, int round, int batches, int batch);

/// Codes for every panel of `instances`, 14 columns each.
template <class T>
nn::Mat<T> instance_codes(const FactorSpace& space, const RepresentationSource& source,
                          const std::vector<RpmInstance>& instances);

/// Curve CSV `model_id,step,accuracy`.
void write_curve_csv(std::ostream& out, const std::string& model_id, const std::vector<TrainRecord>& records,
                     bool header = true);

}  // namespace avr
