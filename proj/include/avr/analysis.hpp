#pragma once

// Rank correlations between metric scores and downstream accuracy, quartile
// curves, top/bottom deltas and final-accuracy splits over a results table.

#include <array>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace avr::analysis {

struct ResultRow {
    std::string model_id;
    std::map<std::string, double> metrics;
    std::map<int, double> accuracy;  // step -> eval accuracy
};

class ResultsTable {
public:
    /// Throws on a duplicate model_id.
    void add(ResultRow row);
    [[nodiscard]] const std::vector<ResultRow>& rows() const { return rows_; }
    [[nodiscard]] std::size_t size() const { return rows_.size(); }
    /// Union of metric names over rows, sorted.
    [[nodiscard]] std::vector<std::string> metric_names() const;
    /// Steps present in every row, ascending.
    [[nodiscard]] std::vector<int> steps() const;
    /// Throws unless every row has every listed step.
    void require_steps(const std::vector<int>& steps) const;
    /// NaN where a row lacks the metric.
    [[nodiscard]] std::vector<double> metric_column(const std::string& metric) const;
    [[nodiscard]] std::vector<double> accuracy_column(int step) const;

private:
    std::vector<ResultRow> rows_;
    std::map<std::string, std::size_t> index_;
};

/// Pearson correlation of mid-ranks. Empty when either argument has zero rank
/// variance. Throws unless both have the same length >= 2.
std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys);
/// Average ranks, 1-based.
std::vector<double> mid_ranks(const std::vector<double>& xs);

/// rho[metric][step], computed over rows where both values are present.
using Correlations = std::map<std::string, std::map<int, std::optional<double>>>;
Correlations correlate_all(const ResultsTable& table, const std::vector<std::string>& metrics,
                           const std::vector<int>& steps);

/// Row order ascending by (metric value, model_id); rows lacking the metric
/// are left out.
std::vector<std::size_t> order_by(const ResultsTable& table, const std::string& metric);

struct QuartileCurves {
    std::string metric;
    std::vector<int> steps;
    // Bin 0 holds the lowest metric values. Sizes differ by at most one, the
    // larger bins first.
    std::array<std::vector<std::string>, 4> members;
    std::array<std::vector<double>, 4> mean_accuracy;  // per step
};
QuartileCurves quartile_curves(const ResultsTable& table, const std::string& metric, const std::vector<int>& steps);

/// Lower half has ceil(N/2) rows, upper half floor(N/2).
struct HalfSplit {
    std::vector<std::string> lower, upper;
};
HalfSplit median_split(const ResultsTable& table, const std::vector<std::size_t>& order);

/// Mean accuracy of the metric's upper half minus the lower half, per step.
std::vector<double> top_bottom_delta(const ResultsTable& table, const std::string& metric,
                                     const std::vector<int>& steps);

struct SplitReport {
    std::vector<std::string> worst, best;
    Correlations worst_correlations, best_correlations;
};
/// Median split on accuracy at the last of `steps`; correlate_all per half.
SplitReport split_by_final_accuracy(const ResultsTable& table, const std::vector<std::string>& metrics,
                                    const std::vector<int>& steps);

// Inputs.

/// model_id -> metric -> value, from a scores CSV.
std::map<std::string, std::map<std::string, double>> read_scores_csv(std::istream& in);
/// model_id -> step -> accuracy, from a curves CSV.
std::map<std::string, std::map<int, double>> read_curves_csv(std::istream& in);

/// Representation part of a run id "repr@cfg<k>-seed<s>" (the id itself when
/// it has no '@').
std::string representation_of(const std::string& model_id);

/// Joins curves to scores. Each curve row takes the scores filed under its own
/// id or, failing that, under its representation. With `average`, curve rows
/// are first averaged per representation (one table row per representation).
ResultsTable join(const std::map<std::string, std::map<std::string, double>>& scores,
                  const std::map<std::string, std::map<int, double>>& curves, bool average = true);

// Outputs.

struct Report {
    std::vector<std::string> metrics;
    std::vector<int> steps;
    Correlations correlations;
    std::vector<QuartileCurves> quartiles;
    std::map<std::string, std::vector<double>> deltas;
    SplitReport splits;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
};

/// All sections for every metric of the table over every shared step.
Report build_report(const ResultsTable& table);

/// report.json plus correlations.csv, quartiles.csv, deltas.csv and
/// split_correlations.csv.
void write_report(const Report& report, const std::filesystem::path& dir);

}  // namespace avr::analysis
