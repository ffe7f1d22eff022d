#include "avr/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "avr/digest.hpp"

namespace avr {

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&] {
            for (std::size_t i; !failed && (i = next++) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<std::uint64_t> first_config_seeds(int n, const std::function<bool(const WrenConfig&)>& keep) {
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = 0; static_cast<int>(out.size()) < n; ++s) {
        if (s > 1'000'000) throw std::invalid_argument("no sampled config satisfies the filter");
        if (!keep || keep(sample_config(s))) out.push_back(s);
    }
    return out;
}

std::string run_id(const std::string& repr, std::uint64_t config_seed, std::uint64_t gen_seed) {
    return repr + "@cfg" + std::to_string(config_seed) + "-seed" + std::to_string(gen_seed);
}

namespace {

// Bump when training semantics change so stale cached runs are ignored.
constexpr const char* kRunCacheVersion = "avr-run-cache/v1";

std::string cache_key(const WrenConfig& cfg, const FactorSpace& space, const RepresentationSource& source,
                      std::uint64_t gen_seed, const TrainOptions& t) {
    std::ostringstream s;
    s << kRunCacheVersion << '|' << to_string(space.id()) << '|' << source.describe() << '|' << gen_seed << '|'
      << cfg.to_json().dump() << '|' << t.steps << '|' << t.batch << '|' << t.eval_every << '|' << t.eval_batches
      << '|' << t.single_precision << '|' << t.strict_instances;
    return hex_digest(s.str());
}

bool load_cached(const std::filesystem::path& p, int steps, std::vector<TrainRecord>& out) {
    std::ifstream in(p);
    if (!in) return false;
    std::string line;
    if (!std::getline(in, line) || line != "step,accuracy,loss") return false;
    std::vector<TrainRecord> recs;
    while (std::getline(in, line)) {
        TrainRecord r;
        char loss[64] = {};
        if (std::sscanf(line.c_str(), "%d,%lf,%63s", &r.step, &r.eval_accuracy, loss) != 3) return false;
        r.train_loss = std::string(loss) == "nan" ? std::nan("") : std::strtod(loss, nullptr);
        recs.push_back(r);
    }
    if (recs.empty() || recs.back().step != steps) return false;
    out = std::move(recs);
    return true;
}

void store_cached(const std::filesystem::path& p, const std::vector<TrainRecord>& recs) {
    std::filesystem::create_directories(p.parent_path());
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << "step,accuracy,loss\n";
        char buf[96];
        for (const auto& r : recs) {
            if (std::isnan(r.train_loss))
                std::snprintf(buf, sizeof buf, "%d,%.17g,nan\n", r.step, r.eval_accuracy);
            else
                std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.step, r.eval_accuracy, r.train_loss);
            out << buf;
        }
    }
    std::filesystem::rename(tmp, p);
}

}  // namespace

std::vector<TrainRecord> train_cached(const WrenConfig& config, const FactorSpace& space,
                                      const RepresentationSource& source, std::uint64_t gen_seed,
                                      const TrainOptions& options, const std::filesystem::path& cache_dir,
                                      bool* cached) {
    if (cached) *cached = false;
    std::filesystem::path file;
    if (!cache_dir.empty()) {
        file = cache_dir / (cache_key(config, space, source, gen_seed, options) + ".csv");
        std::vector<TrainRecord> recs;
        if (load_cached(file, options.steps, recs)) {
            if (cached) *cached = true;
            return recs;
        }
    }
    auto opts = options;
    opts.checkpoint_dir.clear();
    auto recs = train_wren(config, space, source, gen_seed, opts).records;
    if (!file.empty()) store_cached(file, recs);
    return recs;
}

LadderResult run_ladder(const LadderOptions& o) {
    const auto space = make_space(o.space);
    const auto log = [&](const std::string& m) {
        if (o.log) o.log(m);
    };
    const auto ladder = make_entanglement_ladder(space, o.levels, o.mix_seed);

    LadderResult res;
    for (const auto& src : ladder) {
        res.representations.push_back(src.describe());
        res.alphas.push_back(src.params().alpha);
    }

    // Metrics: one job per (level, metric).
    const std::size_t nm = o.metrics.size();
    std::vector<MetricScore> flat(ladder.size() * nm);
    parallel_for(flat.size(), o.jobs, [&](std::size_t i) {
        flat[i] = compute_metric(o.metrics[i % nm], space, ladder[i / nm], o.metric_seed, o.metric_params);
    });
    res.scores.resize(ladder.size());
    for (std::size_t l = 0; l < ladder.size(); ++l) {
        for (std::size_t m = 0; m < nm; ++m) res.scores[l].push_back(flat[l * nm + m]);
        std::string line = "metrics " + res.representations[l];
        for (const auto& s : res.scores[l]) {
            char buf[64];
            std::snprintf(buf, sizeof buf, " %s=%.4f", std::string(to_string(s.metric)).c_str(), s.value);
            line += buf;
        }
        log(line);
    }

    // Training sweep.
    for (std::size_t l = 0; l < ladder.size(); ++l)
        for (auto c : o.config_seeds)
            for (auto g : o.gen_seeds)
                res.runs.push_back({run_id(res.representations[l], c, g), static_cast<int>(l), c, g, {}, false});
    std::mutex log_mu;
    parallel_for(res.runs.size(), o.jobs, [&](std::size_t i) {
        auto& run = res.runs[i];
        auto opts = o.train;
        opts.on_record = [&](const TrainRecord& r) {
            if (r.step % 5000 != 0 && r.step != opts.steps) return;
            std::lock_guard lock(log_mu);
            log("train " + run.model_id + " step " + std::to_string(r.step) + " acc " + std::to_string(r.eval_accuracy));
        };
        run.records = train_cached(sample_config(run.config_seed), space, ladder[run.level], run.gen_seed, opts,
                                   o.cache_dir, &run.cached);
        if (run.cached) {
            std::lock_guard lock(log_mu);
            log("cached " + run.model_id + " acc@" + std::to_string(run.records.back().step) + " " +
                std::to_string(run.records.back().eval_accuracy));
        }
    });

    // Analysis over per-representation averages.
    std::map<std::string, std::map<std::string, double>> scores;
    for (std::size_t l = 0; l < ladder.size(); ++l)
        for (const auto& s : res.scores[l]) scores[res.representations[l]][std::string(to_string(s.metric))] = s.value;
    std::map<std::string, std::map<int, double>> curves;
    for (const auto& run : res.runs)
        for (const auto& r : run.records) curves[run.model_id][r.step] = r.eval_accuracy;
    res.table = analysis::join(scores, curves, true);
    res.report = analysis::build_report(res.table);
    return res;
}

void write_ladder(const LadderResult& result, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "scores.csv", std::ios::binary);
        out << "model_id,metric,value,params_digest,seed\n";
        for (std::size_t l = 0; l < result.scores.size(); ++l)
            write_scores_csv(out, result.representations[l], result.scores[l], false);
    }
    {
        std::ofstream out(dir / "curves.csv", std::ios::binary);
        out << "model_id,step,accuracy\n";
        for (const auto& run : result.runs) write_curve_csv(out, run.model_id, run.records, false);
    }
    analysis::write_report(result.report, dir / "report");
}

}  // namespace avr
