#pragma once

// End-to-end entanglement-ladder experiment: ladder sources, metric scores,
// WReN sweeps over (config, ladder level, generator seed) and the analysis
// report.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "avr/analysis.hpp"
#include "avr/metrics.hpp"
#include "avr/representation.hpp"
#include "avr/wren.hpp"

namespace avr {

/// Runs fn(0..n-1) on up to `jobs` threads. Results must be written to
/// per-index slots; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

/// First `n` config seeds s = 0, 1, ... whose sampled config satisfies `keep`
/// (every config when `keep` is empty).
std::vector<std::uint64_t> first_config_seeds(int n, const std::function<bool(const WrenConfig&)>& keep = {});

/// Run id "repr@cfg<k>-seed<s>".
std::string run_id(const std::string& repr, std::uint64_t config_seed, std::uint64_t gen_seed);

/// train_wren records, reusing a finished run stored under `cache_dir` when
/// its key (space, source, generator seed, config, options) matches. No
/// caching when `cache_dir` is empty. Checkpoints are never written.
std::vector<TrainRecord> train_cached(const WrenConfig& config, const FactorSpace& space,
                                      const RepresentationSource& source, std::uint64_t gen_seed,
                                      const TrainOptions& options, const std::filesystem::path& cache_dir,
                                      bool* cached = nullptr);

struct LadderOptions {
    SpaceId space = SpaceId::dsprites_reasoning;
    int levels = 5;
    std::uint64_t mix_seed = 0;
    std::uint64_t metric_seed = 0;
    std::vector<MetricKind> metrics{std::begin(kAllMetrics), std::end(kAllMetrics)};
    MetricParams metric_params;
    std::vector<std::uint64_t> config_seeds{0, 1, 2};
    std::vector<std::uint64_t> gen_seeds{0, 1};
    TrainOptions train;
    int jobs = 1;
    // Finished runs are stored here and reused when their key matches.
    std::filesystem::path cache_dir;
    std::function<void(const std::string&)> log;
};

struct LadderRun {
    std::string model_id;
    int level = 0;
    std::uint64_t config_seed = 0, gen_seed = 0;
    std::vector<TrainRecord> records;
    bool cached = false;
};

struct LadderResult {
    std::vector<std::string> representations;  // describe() per level
    std::vector<double> alphas;
    std::vector<std::vector<MetricScore>> scores;  // per level
    std::vector<LadderRun> runs;
    analysis::ResultsTable table;  // per-representation averages
    analysis::Report report;
};

LadderResult run_ladder(const LadderOptions& options);

/// scores.csv, curves.csv and report/ under `dir`.
void write_ladder(const LadderResult& result, const std::filesystem::path& dir);

}  // namespace avr
