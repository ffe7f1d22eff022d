#include "avr/tiny_nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace avr::nn {

template <class T>
Mlp<T> Mlp<T>::zeros(const std::vector<int>& sizes, bool relu_output) {
    if (sizes.size() < 2) throw std::invalid_argument("an mlp needs at least an input and an output size");
    Mlp<T> p;
    p.relu_output = relu_output;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        if (sizes[l] <= 0 || sizes[l + 1] <= 0) throw std::invalid_argument("layer sizes must be positive");
        p.layers.push_back({Mat<T>::Zero(sizes[l + 1], sizes[l]), Vec<T>::Zero(sizes[l + 1])});
    }
    return p;
}

template <class T>
Mlp<T> Mlp<T>::init(const std::vector<int>& sizes, Rng& rng, bool relu_output) {
    auto p = zeros(sizes, relu_output);
    for (auto& l : p.layers) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.w.cols()));
        for (Eigen::Index c = 0; c < l.w.cols(); ++c)
            for (Eigen::Index r = 0; r < l.w.rows(); ++r) l.w(r, c) = static_cast<T>(rng.uniform(-bound, bound));
        for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = static_cast<T>(rng.uniform(-bound, bound));
    }
    return p;
}

template <class T>
std::size_t Mlp<T>::num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
}

template <class T>
std::vector<int> Mlp<T>::sizes() const {
    std::vector<int> s{input_dim()};
    for (const auto& l : layers) s.push_back(static_cast<int>(l.w.rows()));
    return s;
}

template <class T>
Mat<T> mlp_forward(const Mlp<T>& p, const Mat<T>& x, double dropout_rate, Rng* rng, bool train,
                   ForwardCache<T>* cache) {
    const std::size_t n_layers = p.layers.size();
    const bool use_dropout = train && dropout_rate > 0.0;
    if (use_dropout && (!rng || dropout_rate >= 1.0))
        throw std::invalid_argument("dropout needs an rng and a rate below 1");
    if (cache) {
        cache->params = &p;
        cache->version = p.version;
        cache->inputs.clear();
        cache->dropout_mask.resize(0, 0);
    }
    Mat<T> h = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = p.layers[l];
        if (h.rows() != layer.w.cols())
            throw std::invalid_argument("layer " + std::to_string(l) + " expects input of size " +
                                        std::to_string(layer.w.cols()) + ", got " + std::to_string(h.rows()));
        if (l + 1 == n_layers && use_dropout) {
            const T scale = static_cast<T>(1.0 / (1.0 - dropout_rate));
            Mat<T> mask(h.rows(), h.cols());
            for (Eigen::Index c = 0; c < mask.cols(); ++c)
                for (Eigen::Index r = 0; r < mask.rows(); ++r)
                    mask(r, c) = rng->bernoulli(dropout_rate) ? T(0) : scale;
            h.array() *= mask.array();
            if (cache) cache->dropout_mask = std::move(mask);
        }
        Mat<T> z(layer.w.rows(), h.cols());
        z.noalias() = layer.w * h;
        z.colwise() += layer.b;
        if (l + 1 < n_layers || p.relu_output) z = z.cwiseMax(T(0));
        if (cache) cache->inputs.push_back(std::move(h));
        h = std::move(z);
    }
    if (cache) cache->output = h;
    return h;
}

template <class T>
Gradients<T> Gradients<T>::like(const Mlp<T>& p) {
    Gradients<T> g;
    for (const auto& l : p.layers)
        g.layers.push_back({Mat<T>::Zero(l.w.rows(), l.w.cols()), Vec<T>::Zero(l.b.size())});
    return g;
}

template <class T>
void Gradients<T>::set_zero() {
    for (auto& l : layers) {
        l.w.setZero();
        l.b.setZero();
    }
}

template <class T>
Mat<T> backprop(const Mlp<T>& p, const ForwardCache<T>& cache, const Mat<T>& upstream, Gradients<T>& grads,
                bool want_input_grad) {
    if (cache.params != &p || cache.version != p.version || cache.inputs.size() != p.layers.size())
        throw std::logic_error("stale forward cache: parameters changed since the forward pass");
    if (upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols())
        throw std::invalid_argument("upstream gradient shape does not match the forward output");
    Mat<T> delta = upstream;
    if (p.relu_output) delta = (cache.output.array() > T(0)).select(delta, T(0));
    for (std::size_t l = p.layers.size(); l-- > 0;) {
        const auto& x = cache.inputs[l];
        grads.layers[l].w.noalias() += delta * x.transpose();
        grads.layers[l].b += delta.rowwise().sum();
        if (l == 0 && !want_input_grad) return {};
        Mat<T> d(x.rows(), x.cols());
        d.noalias() = p.layers[l].w.transpose() * delta;
        if (l + 1 == p.layers.size() && cache.dropout_mask.size() > 0) d.array() *= cache.dropout_mask.array();
        // Rectifier derivative: the stored input is positive exactly where the
        // unit was active (and kept).
        if (l > 0) d = (x.array() > T(0)).select(d, T(0));
        delta = std::move(d);
    }
    return delta;
}

template <class T>
Mat<T> softmax(const Mat<T>& logits) {
    Mat<T> out(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const T m = logits.col(c).maxCoeff();
        out.col(c) = (logits.col(c).array() - m).exp();
        out.col(c) /= out.col(c).sum();
    }
    return out;
}

template <class T>
SoftmaxLoss<T> softmax_cross_entropy(const Mat<T>& logits, const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
        throw std::invalid_argument("one label per column required");
    SoftmaxLoss<T> out;
    out.probs = softmax(logits);
    out.dlogits = out.probs;
    const auto n = static_cast<double>(labels.size());
    double total = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const int y = labels[static_cast<std::size_t>(c)];
        if (y < 0 || y >= logits.rows()) throw std::out_of_range("label " + std::to_string(y) + " out of range");
        const double m = logits.col(c).maxCoeff();
        double lse = 0;
        for (Eigen::Index r = 0; r < logits.rows(); ++r) lse += std::exp(static_cast<double>(logits(r, c)) - m);
        total += m + std::log(lse) - static_cast<double>(logits(y, c));
        out.dlogits(y, c) -= T(1);
    }
    out.loss = total / n;
    out.dlogits /= static_cast<T>(n);
    return out;
}

template <class T>
AdamState<T> AdamState<T>::like(const Mlp<T>& p, AdamConfig config) {
    AdamState<T> s;
    s.config = config;
    for (const auto& l : p.layers) {
        s.m.push_back({Mat<T>::Zero(l.w.rows(), l.w.cols()), Vec<T>::Zero(l.b.size())});
        s.v.push_back(s.m.back());
    }
    return s;
}

template <class T>
void adam_step(AdamState<T>& state, Mlp<T>& params, const Gradients<T>& grads, const std::string& name) {
    if (grads.layers.size() != params.layers.size() || state.m.size() != params.layers.size())
        throw std::invalid_argument("adam: gradient/state shapes do not match " + name);
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        if (!grads.layers[l].w.allFinite())
            throw std::runtime_error("non-finite gradient in " + name + ".layer" + std::to_string(l) + ".w");
        if (!grads.layers[l].b.allFinite())
            throw std::runtime_error("non-finite gradient in " + name + ".layer" + std::to_string(l) + ".b");
    }
    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T corr1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
    const T corr2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
    const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
    auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
        m = b1 * m + (T(1) - b1) * g;
        v.array() = b2 * v.array() + (T(1) - b2) * g.array().square();
        p.array() -= lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        update(params.layers[l].w, state.m[l].w, state.v[l].w, grads.layers[l].w);
        update(params.layers[l].b, state.m[l].b, state.v[l].b, grads.layers[l].b);
    }
    ++params.version;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_le(std::ofstream& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

double get_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

std::filesystem::path manifest_of(const std::filesystem::path& bin) {
    auto p = bin;
    p.replace_extension(".json");
    return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& bin, const std::vector<NamedMlp>& nets) {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + bin.string());
    nlohmann::ordered_json manifest;
    manifest["format"] = "avr-mlp-f64le/v1";
    manifest["order"] = "row-major";
    auto& jnets = manifest["nets"] = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, mlp] : nets) {
        nlohmann::ordered_json jn;
        jn["name"] = name;
        jn["sizes"] = mlp->sizes();
        jn["relu_output"] = mlp->relu_output;
        auto& tensors = jn["tensors"] = nlohmann::ordered_json::array();
        for (std::size_t l = 0; l < mlp->layers.size(); ++l) {
            const auto& layer = mlp->layers[l];
            tensors.push_back({{"name", "layer" + std::to_string(l) + ".w"},
                               {"shape", {layer.w.rows(), layer.w.cols()}},
                               {"offset", offset}});
            for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
                for (Eigen::Index c = 0; c < layer.w.cols(); ++c) put_le(out, layer.w(r, c));
            offset += static_cast<std::uint64_t>(layer.w.size());
            tensors.push_back(
                {{"name", "layer" + std::to_string(l) + ".b"}, {"shape", {layer.b.size()}}, {"offset", offset}});
            for (Eigen::Index r = 0; r < layer.b.size(); ++r) put_le(out, layer.b[r]);
            offset += static_cast<std::uint64_t>(layer.b.size());
        }
        jnets.push_back(std::move(jn));
    }
    manifest["total_values"] = offset;
    std::ofstream(manifest_of(bin), std::ios::binary) << manifest.dump(1) << '\n';
}

std::vector<std::pair<std::string, Mlp<double>>> load_checkpoint(const std::filesystem::path& bin) {
    std::ifstream mf(manifest_of(bin));
    if (!mf) throw std::runtime_error("missing checkpoint manifest for " + bin.string());
    const auto manifest = nlohmann::json::parse(mf);
    std::ifstream in(bin, std::ios::binary);
    const std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto total = manifest.at("total_values").get<std::uint64_t>();
    if (raw.size() != total * 8)
        throw std::runtime_error("checkpoint " + bin.string() + " holds " + std::to_string(raw.size()) +
                                 " bytes, manifest expects " + std::to_string(total * 8));
    std::vector<std::pair<std::string, Mlp<double>>> out;
    std::size_t pos = 0;
    for (const auto& jn : manifest.at("nets")) {
        auto mlp = Mlp<double>::zeros(jn.at("sizes").get<std::vector<int>>(), jn.at("relu_output").get<bool>());
        for (auto& layer : mlp.layers) {
            for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
                for (Eigen::Index c = 0; c < layer.w.cols(); ++c, pos += 8) layer.w(r, c) = get_le(&raw[pos]);
            for (Eigen::Index r = 0; r < layer.b.size(); ++r, pos += 8) layer.b[r] = get_le(&raw[pos]);
        }
        out.emplace_back(jn.at("name").get<std::string>(), std::move(mlp));
    }
    return out;
}

#define AVR_NN_INSTANTIATE(T)                                                                                   \
    template struct Mlp<T>;                                                                                     \
    template struct Gradients<T>;                                                                               \
    template struct AdamState<T>;                                                                               \
    template Mat<T> mlp_forward(const Mlp<T>&, const Mat<T>&, double, Rng*, bool, ForwardCache<T>*);            \
    template Mat<T> backprop(const Mlp<T>&, const ForwardCache<T>&, const Mat<T>&, Gradients<T>&, bool);        \
    template Mat<T> softmax(const Mat<T>&);                                                                     \
    template SoftmaxLoss<T> softmax_cross_entropy(const Mat<T>&, const std::vector<int>&);                      \
    template void adam_step(AdamState<T>&, Mlp<T>&, const Gradients<T>&, const std::string&);

AVR_NN_INSTANTIATE(float)
AVR_NN_INSTANTIATE(double)

}  // namespace avr::nn
