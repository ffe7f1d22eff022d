#pragma once

// Dense rectifier networks with hand-written reverse mode, inverted dropout,
// softmax cross-entropy, and Adam. Samples are columns throughout.
// Instantiated for float and double.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avr/rng.hpp"

namespace avr::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
struct Dense {
    Mat<T> w;  // out x in
    Vec<T> b;
};

template <class T>
struct Mlp {
    std::vector<Dense<T>> layers;
    bool relu_output = false;  // rectify the last layer too
    // Bumped on every parameter update so stale caches are detected.
    std::uint64_t version = 0;

    /// sizes = {in, hidden..., out}; weights and biases uniform in
    /// +-1/sqrt(fan_in).
    static Mlp init(const std::vector<int>& sizes, Rng& rng, bool relu_output = false);
    static Mlp zeros(const std::vector<int>& sizes, bool relu_output = false);

    [[nodiscard]] int input_dim() const { return static_cast<int>(layers.front().w.cols()); }
    [[nodiscard]] int output_dim() const { return static_cast<int>(layers.back().w.rows()); }
    [[nodiscard]] std::size_t num_params() const;
    [[nodiscard]] std::vector<int> sizes() const;

    template <class U>
    [[nodiscard]] Mlp<U> cast() const {
        Mlp<U> out;
        out.relu_output = relu_output;
        for (const auto& l : layers) out.layers.push_back({l.w.template cast<U>(), l.b.template cast<U>()});
        return out;
    }
};

template <class T>
struct ForwardCache {
    const Mlp<T>* params = nullptr;
    std::uint64_t version = 0;
    std::vector<Mat<T>> inputs;  // inputs[l] is what layer l multiplied (post-dropout)
    Mat<T> dropout_mask;         // scaled keep mask on the final layer's input; empty if unused
    Mat<T> output;
};

/// Forward pass over a batch of columns. Dropout with `dropout_rate` hits the
/// inputs of the final layer, only when `train` is set (rng then required).
template <class T>
Mat<T> mlp_forward(const Mlp<T>& p, const Mat<T>& x, double dropout_rate = 0.0, Rng* rng = nullptr,
                   bool train = false, ForwardCache<T>* cache = nullptr);

template <class T>
struct Gradients {
    std::vector<Dense<T>> layers;

    static Gradients like(const Mlp<T>& p);
    void set_zero();
};

/// Reverse pass for a cached forward call. Gradients are added into `grads`.
/// Returns d loss / d x when `want_input_grad` is set, else an empty matrix.
template <class T>
Mat<T> backprop(const Mlp<T>& p, const ForwardCache<T>& cache, const Mat<T>& upstream, Gradients<T>& grads,
                bool want_input_grad = true);

template <class T>
struct SoftmaxLoss {
    double loss = 0;   // mean over columns
    Mat<T> probs;      // classes x batch
    Mat<T> dlogits;    // gradient of the mean loss
};

/// Column-wise softmax with numerically stable log-sum-exp.
template <class T>
Mat<T> softmax(const Mat<T>& logits);

template <class T>
SoftmaxLoss<T> softmax_cross_entropy(const Mat<T>& logits, const std::vector<int>& labels);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<Dense<T>> m, v;

    static AdamState like(const Mlp<T>& p, AdamConfig config);
};

/// One bias-corrected Adam update. Throws on a non-finite gradient, naming
/// the offending parameter (`name` prefixes the path, e.g. "g.layer1.w").
template <class T>
void adam_step(AdamState<T>& state, Mlp<T>& params, const Gradients<T>& grads, const std::string& name = "mlp");

/// Checkpoint: `bin` holds every tensor as little-endian float64, row-major,
/// in manifest order; the manifest (`bin` with extension .json) lists names,
/// shapes, and offsets.
struct NamedMlp {
    std::string name;
    const Mlp<double>* mlp;
};
void save_checkpoint(const std::filesystem::path& bin, const std::vector<NamedMlp>& nets);
/// Loads nets in manifest order; sizes and activation flags come from the manifest.
std::vector<std::pair<std::string, Mlp<double>>> load_checkpoint(const std::filesystem::path& bin);

}  // namespace avr::nn
