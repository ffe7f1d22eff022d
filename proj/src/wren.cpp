#include "avr/wren.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "avr/csv.hpp"
#include "avr/digest.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace avr {

using nn::Mat;

namespace {

constexpr int kContextPairs = 56;
constexpr int kAnswerPairs = 16;
constexpr int kPairsPerInstance = kContextPairs + 6 * kAnswerPairs;
constexpr int kPanels = 14;

template <class A, std::size_t N>
bool in_set(const std::array<A, N>& set, A v) {
    for (auto x : set)
        if (x == v) return true;
    return false;
}

// Writes the embedding of panel `p` (0..7 context, 8 answer slot) of code
// column `code` into `out`.
template <class T, class Src, class Dst>
void write_embedding(const Src& code, int position, bool tags, Dst&& out) {
    const auto d = code.size();
    out.head(d) = code;
    if (tags) {
        out.tail(kPositionTagDim).setZero();
        out[d + position] = T(1);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

nlohmann::ordered_json WrenConfig::to_json() const {
    nlohmann::ordered_json j;
    j["lr"] = lr;
    j["edge_units"] = edge_units;
    j["edge_layers"] = edge_layers;
    j["graph_units"] = graph_units;
    j["graph_layers"] = graph_layers;
    j["dropout"] = dropout;
    j["seed"] = seed;
    j["position_tags"] = position_tags;
    return j;
}

WrenConfig WrenConfig::from_json(const nlohmann::json& j) {
    WrenConfig c;
    c.lr = j.at("lr").get<double>();
    c.edge_units = j.at("edge_units").get<int>();
    c.edge_layers = j.at("edge_layers").get<int>();
    c.graph_units = j.at("graph_units").get<int>();
    c.graph_layers = j.at("graph_layers").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.position_tags = j.value("position_tags", true);
    c.validate();
    return c;
}

std::string WrenConfig::digest() const { return hex_digest(to_json().dump()); }

void WrenConfig::validate() const {
    auto fail = [](const std::string& field) { throw std::invalid_argument("wren config field '" + field + "' outside its allowed set"); };
    if (!in_set(kLrChoices, lr)) fail("lr");
    if (!in_set(kEdgeUnitChoices, edge_units)) fail("edge_units");
    if (!in_set(kEdgeLayerChoices, edge_layers)) fail("edge_layers");
    if (!in_set(kGraphUnitChoices, graph_units)) fail("graph_units");
    if (!in_set(kGraphLayerChoices, graph_layers)) fail("graph_layers");
    if (!in_set(kDropoutChoices, dropout)) fail("dropout");
}

WrenConfig sample_config(Rng& rng) {
    WrenConfig c;
    c.lr = kLrChoices[rng.uniform_index(kLrChoices.size())];
    c.edge_units = kEdgeUnitChoices[rng.uniform_index(kEdgeUnitChoices.size())];
    c.edge_layers = kEdgeLayerChoices[rng.uniform_index(kEdgeLayerChoices.size())];
    c.graph_units = kGraphUnitChoices[rng.uniform_index(kGraphUnitChoices.size())];
    c.graph_layers = kGraphLayerChoices[rng.uniform_index(kGraphLayerChoices.size())];
    c.dropout = kDropoutChoices[rng.uniform_index(kDropoutChoices.size())];
    c.seed = rng.next_u64();
    return c;
}

WrenConfig sample_config(std::uint64_t config_seed) {
    SeededRng rng(config_seed, 0x43464753);  // "CFGS"
    return sample_config(rng);
}

// ---------------------------------------------------------------------------
// Parameters

template <class T>
WrenParams<T> init_wren(const WrenConfig& config, std::size_t code_dim, int edge_units, int graph_units) {
    if (code_dim == 0) throw std::invalid_argument("wren needs a positive code dimension");
    WrenParams<T> p;
    p.code_dim = code_dim;
    p.position_tags = config.position_tags;
    SeededRng rng(config.seed, 0x494E4954);  // "INIT"
    std::vector<int> gs{static_cast<int>(2 * p.embed_dim())};
    for (int l = 0; l < config.edge_layers; ++l) gs.push_back(edge_units);
    std::vector<int> fs{edge_units};
    for (int l = 0; l < config.graph_layers; ++l) fs.push_back(graph_units);
    fs.push_back(1);
    p.g = nn::Mlp<double>::init(gs, rng, true).template cast<T>();
    p.f = nn::Mlp<double>::init(fs, rng, false).template cast<T>();
    return p;
}

template <class T>
WrenParams<T> init_wren(const WrenConfig& config, std::size_t code_dim) {
    return init_wren<T>(config, code_dim, config.edge_units, config.graph_units);
}

// ---------------------------------------------------------------------------
// Reference single-instance path

double wren_score(const WrenParams<double>& params, const std::array<Eigen::VectorXd, 8>& context,
                  const Eigen::VectorXd& answer, double dropout, Rng* rng, bool train) {
    const auto d = static_cast<Eigen::Index>(params.code_dim);
    const auto e = static_cast<Eigen::Index>(params.embed_dim());
    std::array<Eigen::VectorXd, 9> emb;
    for (int p = 0; p < 9; ++p) {
        const auto& code = p < 8 ? context[static_cast<std::size_t>(p)] : answer;
        if (code.size() != d)
            throw std::invalid_argument("panel " + std::to_string(p) + " code has dimension " +
                                        std::to_string(code.size()) + ", expected " + std::to_string(d));
        emb[static_cast<std::size_t>(p)].resize(e);
        write_embedding<double>(code, p, params.position_tags, emb[static_cast<std::size_t>(p)]);
    }
    Mat<double> pairs(2 * e, 72);
    int col = 0;
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) {
            if (i == j) continue;
            pairs.col(col).head(e) = emb[static_cast<std::size_t>(i)];
            pairs.col(col).tail(e) = emb[static_cast<std::size_t>(j)];
            ++col;
        }
    const Mat<double> relation = nn::mlp_forward(params.g, pairs).rowwise().sum();
    return nn::mlp_forward(params.f, relation, dropout, rng, train)(0, 0);
}

WrenPrediction wren_forward(const WrenParams<double>& params, const std::array<Eigen::VectorXd, 8>& context,
                            const std::array<Eigen::VectorXd, 6>& answers) {
    WrenPrediction out;
    Mat<double> logits(6, 1);
    for (int a = 0; a < 6; ++a) logits(a, 0) = wren_score(params, context, answers[static_cast<std::size_t>(a)]);
    const auto probs = nn::softmax(logits);
    for (int a = 0; a < 6; ++a) {
        out.logits[static_cast<std::size_t>(a)] = logits(a, 0);
        out.probs[static_cast<std::size_t>(a)] = probs(a, 0);
    }
    out.prediction = predictions(logits)[0];
    return out;
}

// ---------------------------------------------------------------------------
// Batched path

template <class T>
Mat<T> wren_logits(const WrenParams<T>& params, const Mat<T>& codes, double dropout, Rng* rng, bool train,
                   WrenCache<T>* cache) {
    const auto d = static_cast<Eigen::Index>(params.code_dim);
    const auto e = static_cast<Eigen::Index>(params.embed_dim());
    if (codes.rows() != d || codes.cols() % kPanels != 0)
        throw std::invalid_argument("codes must be code_dim x 14*batch, got " + std::to_string(codes.rows()) + " x " +
                                    std::to_string(codes.cols()));
    const int batch = static_cast<int>(codes.cols() / kPanels);
    const bool tags = params.position_tags;

    Mat<T> pairs(2 * e, static_cast<Eigen::Index>(kPairsPerInstance) * batch);
    Mat<T> emb(e, kPanels);
    for (int b = 0; b < batch; ++b) {
        for (int p = 0; p < kPanels; ++p)
            write_embedding<T>(codes.col(b * kPanels + p), std::min(p, 8), tags, emb.col(p));
        Eigen::Index col = static_cast<Eigen::Index>(b) * kPairsPerInstance;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                if (i == j) continue;
                pairs.col(col).head(e) = emb.col(i);
                pairs.col(col).tail(e) = emb.col(j);
                ++col;
            }
        for (int a = 0; a < 6; ++a) {
            for (int i = 0; i < 8; ++i, ++col) {
                pairs.col(col).head(e) = emb.col(i);
                pairs.col(col).tail(e) = emb.col(8 + a);
            }
            for (int i = 0; i < 8; ++i, ++col) {
                pairs.col(col).head(e) = emb.col(8 + a);
                pairs.col(col).tail(e) = emb.col(i);
            }
        }
    }

    const Mat<T> rel = nn::mlp_forward(params.g, pairs, 0.0, nullptr, false, cache ? &cache->g : nullptr);
    Mat<T> sums(rel.rows(), 6 * batch);
    for (int b = 0; b < batch; ++b) {
        const Eigen::Index base = static_cast<Eigen::Index>(b) * kPairsPerInstance;
        const auto shared = rel.middleCols(base, kContextPairs).rowwise().sum().eval();
        for (int a = 0; a < 6; ++a)
            sums.col(6 * b + a) =
                shared + rel.middleCols(base + kContextPairs + a * kAnswerPairs, kAnswerPairs).rowwise().sum();
    }
    const Mat<T> scores = nn::mlp_forward(params.f, sums, dropout, rng, train, cache ? &cache->f : nullptr);
    if (cache) cache->batch = batch;
    return scores.reshaped(6, batch);
}

template <class T>
void wren_backward(const WrenParams<T>& params, const WrenCache<T>& cache, const Mat<T>& dlogits,
                   WrenGrads<T>& grads) {
    const int batch = cache.batch;
    if (dlogits.rows() != 6 || dlogits.cols() != batch) throw std::invalid_argument("dlogits must be 6 x batch");
    const Mat<T> up = dlogits.reshaped(1, 6 * batch);
    const Mat<T> dsums = nn::backprop(params.f, cache.f, up, grads.f, true);
    Mat<T> drel(dsums.rows(), static_cast<Eigen::Index>(kPairsPerInstance) * batch);
    for (int b = 0; b < batch; ++b) {
        const Eigen::Index base = static_cast<Eigen::Index>(b) * kPairsPerInstance;
        const auto shared = dsums.middleCols(6 * b, 6).rowwise().sum().eval();
        drel.middleCols(base, kContextPairs) = shared.replicate(1, kContextPairs);
        for (int a = 0; a < 6; ++a)
            drel.middleCols(base + kContextPairs + a * kAnswerPairs, kAnswerPairs) = dsums.col(6 * b + a).replicate(1, kAnswerPairs);
    }
    nn::backprop(params.g, cache.g, drel, grads.g, false);
}

template <class T>
std::vector<int> predictions(const Mat<T>& logits) {
    std::vector<int> out(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        int best = 0;
        for (int r = 1; r < logits.rows(); ++r)
            if (logits(r, c) > logits(best, c)) best = r;
        out[static_cast<std::size_t>(c)] = best;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Data

namespace {

std::uint64_t train_stream(std::uint64_t gen_seed) { return mix64(gen_seed ^ 0x545241494EULL); }  // "TRAIN"
std::uint64_t eval_stream(std::uint64_t gen_seed) { return mix64(gen_seed ^ 0x4556414CULL); }      // "EVAL"

// Code lookup, materialised once for fully covered spaces.
template <class T>
class CodeBook {
public:
    CodeBook(const FactorSpace& space, const RepresentationSource& source) : space_(space), source_(source) {
        if (source.full_coverage() && space.size() <= (1u << 20)) {
            table_.resize(static_cast<Eigen::Index>(source.code_dim()), static_cast<Eigen::Index>(space.size()));
            Eigen::VectorXd z(static_cast<Eigen::Index>(source.code_dim()));
            for (std::uint64_t i = 0; i < space.size(); ++i) {
                source.encode_into(i, z.data());
                table_.col(static_cast<Eigen::Index>(i)) = z.cast<T>();
            }
        }
    }

    Mat<T> codes(const std::vector<RpmInstance>& instances) const {
        const auto d = static_cast<Eigen::Index>(source_.code_dim());
        Mat<T> out(d, static_cast<Eigen::Index>(kPanels * instances.size()));
        Eigen::VectorXd z(d);
        Eigen::Index col = 0;
        auto put = [&](const FactorAssignment& a) {
            const auto flat = assignment_index(space_, a);
            if (table_.size() > 0) {
                out.col(col++) = table_.col(static_cast<Eigen::Index>(flat));
            } else {
                source_.encode_into(flat, z.data());
                out.col(col++) = z.cast<T>();
            }
        };
        for (const auto& inst : instances) {
            for (const auto& p : inst.context) put(p);
            for (const auto& p : inst.answers) put(p);
        }
        return out;
    }

private:
    const FactorSpace& space_;
    const RepresentationSource& source_;
    Mat<T> table_;
};

std::vector<RpmInstance> make_batch(const FactorSpace& space, std::uint64_t stream, std::uint64_t first, int count,
                                    bool strict, std::vector<int>& labels) {
    std::vector<RpmInstance> out;
    labels.clear();
    for (int b = 0; b < count; ++b) {
        out.push_back(generate_instance(space, instance_seed(stream, first + static_cast<std::uint64_t>(b)), strict));
        labels.push_back(out.back().correct_index);
    }
    return out;
}

template <class T>
double evaluate_impl(const WrenParams<T>& params, const FactorSpace& space, const CodeBook<T>& book,
                     std::uint64_t gen_seed, int round, int batches, int batch, bool strict) {
    std::vector<int> labels;
    std::size_t correct = 0;
    const auto stream = eval_stream(gen_seed);
    for (int k = 0; k < batches; ++k) {
        const auto first = (static_cast<std::uint64_t>(round) * batches + k) * batch;
        const auto insts = make_batch(space, stream, first, batch, strict, labels);
        const auto pred = predictions<T>(wren_logits(params, book.codes(insts)));
        for (int b = 0; b < batch; ++b) correct += pred[static_cast<std::size_t>(b)] == labels[static_cast<std::size_t>(b)];
    }
    return static_cast<double>(correct) / (static_cast<double>(batches) * batch);
}

template <class T>
TrainResult train_impl(const WrenConfig& config, const FactorSpace& space, const RepresentationSource& source,
                       std::uint64_t gen_seed, const TrainOptions& opt) {
    config.validate();
    if (opt.steps < 0 || opt.batch <= 0 || opt.eval_every <= 0 || opt.eval_batches <= 0)
        throw std::invalid_argument("train options must be positive");
    if (source.space() != space.id()) throw std::invalid_argument("representation space does not match task space");
    const CodeBook<T> book(space, source);
    auto params = init_wren<T>(config, source.code_dim());
    auto grads = WrenGrads<T>::like(params);
    auto adam_g = nn::AdamState<T>::like(params.g, {config.lr});
    auto adam_f = nn::AdamState<T>::like(params.f, {config.lr});
    SeededRng dropout_rng(config.seed, 0x44524F50);  // "DROP"
    const auto stream = train_stream(gen_seed);

    TrainResult result;
    int round = 0;
    auto record = [&](int step, double loss) {
        TrainRecord r{step, evaluate_impl(params, space, book, gen_seed, round++, opt.eval_batches, opt.batch,
                                          opt.strict_instances),
                      loss};
        result.records.push_back(r);
        if (opt.on_record) opt.on_record(r);
    };
    record(0, std::numeric_limits<double>::quiet_NaN());

    std::vector<int> labels;
    double loss_sum = 0;
    int loss_n = 0;
    for (int step = 1; step <= opt.steps; ++step) {
        const auto first = static_cast<std::uint64_t>(step - 1) * static_cast<std::uint64_t>(opt.batch);
        const auto insts = make_batch(space, stream, first, opt.batch, opt.strict_instances, labels);
        WrenCache<T> cache;
        const auto logits = wren_logits(params, book.codes(insts), config.dropout, &dropout_rng, true, &cache);
        const auto loss = nn::softmax_cross_entropy(logits, labels);
        if (!std::isfinite(loss.loss))
            throw std::runtime_error("non-finite loss at step " + std::to_string(step) + " (config " +
                                     config.digest() + ")");
        loss_sum += loss.loss;
        ++loss_n;
        grads.set_zero();
        wren_backward(params, cache, loss.dlogits, grads);
        nn::adam_step(adam_g, params.g, grads.g, "g");
        nn::adam_step(adam_f, params.f, grads.f, "f");

        if (step % opt.eval_every == 0) {
            record(step, loss_sum / loss_n);
            loss_sum = 0;
            loss_n = 0;
        }
        if (!opt.checkpoint_dir.empty() &&
            std::find(opt.checkpoint_steps.begin(), opt.checkpoint_steps.end(), step) != opt.checkpoint_steps.end()) {
            std::filesystem::create_directories(opt.checkpoint_dir);
            const auto pd = params.template cast<double>();
            nn::save_checkpoint(opt.checkpoint_dir / ("step_" + std::to_string(step) + ".bin"),
                                {{"g", &pd.g}, {"f", &pd.f}});
        }
    }
    result.params = params.template cast<double>();
    return result;
}

}  // namespace

template <class T>
Mat<T> instance_codes(const FactorSpace& space, const RepresentationSource& source,
                      const std::vector<RpmInstance>& instances) {
    return CodeBook<T>(space, source).codes(instances);
}

TrainResult train_wren(const WrenConfig& config, const FactorSpace& space, const RepresentationSource& source,
                       std::uint64_t generator_seed, const TrainOptions& options) {
#ifdef __GLIBC__
    // Each step allocates several multi-megabyte temporaries; served by mmap
    // they page-fault afresh every time, which costs ~40% of a step.
    static const bool tuned = [] {
        mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc maximum
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        mallopt(M_TOP_PAD, 64 << 20);
        return true;
    }();
    (void)tuned;
#endif
    return options.single_precision ? train_impl<float>(config, space, source, generator_seed, options)
                                    : train_impl<double>(config, space, source, generator_seed, options);
}

double evaluate_wren(const WrenParams<double>& params, const FactorSpace& space, const RepresentationSource& source,
                     std::uint64_t generator_seed, int round, int batches, int batch) {
    const CodeBook<double> book(space, source);
    return evaluate_impl(params, space, book, generator_seed, round, batches, batch, false);
}

void write_curve_csv(std::ostream& out, const std::string& model_id, const std::vector<TrainRecord>& records,
                     bool header) {
    if (header) out << "model_id,step,accuracy\n";
    char buf[32];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%.6f", r.eval_accuracy);
        out << csv_field(model_id) << ',' << r.step << ',' << buf << '\n';
    }
}

#define AVR_WREN_INSTANTIATE(T)                                                                                  \
    template WrenParams<T> init_wren(const WrenConfig&, std::size_t);                                            \
    template WrenParams<T> init_wren(const WrenConfig&, std::size_t, int, int);                                  \
    template Mat<T> wren_logits(const WrenParams<T>&, const Mat<T>&, double, Rng*, bool, WrenCache<T>*);         \
    template void wren_backward(const WrenParams<T>&, const WrenCache<T>&, const Mat<T>&, WrenGrads<T>&);        \
    template std::vector<int> predictions(const Mat<T>&);                                                        \
    template Mat<T> instance_codes(const FactorSpace&, const RepresentationSource&, const std::vector<RpmInstance>&);

AVR_WREN_INSTANTIATE(float)
AVR_WREN_INSTANTIATE(double)

}  // namespace avr
