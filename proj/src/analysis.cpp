#include "avr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "avr/csv.hpp"

namespace avr::analysis {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

double parse_double(const std::string& s, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("line " + std::to_string(line) + ": '" + s + "' is not a number");
    }
}

// Header columns by name; throws naming the first missing one.
std::map<std::string, std::size_t> header_columns(std::istream& in, const std::vector<std::string>& required,
                                                  const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument(std::string(what) + " is empty");
    const auto cells = split_csv(trim_cr(line));
    std::map<std::string, std::size_t> cols;
    for (std::size_t i = 0; i < cells.size(); ++i) cols[cells[i]] = i;
    for (const auto& r : required)
        if (!cols.count(r)) throw std::invalid_argument(std::string(what) + " header lacks column '" + r + "'");
    return cols;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json correlations_json(const Correlations& c) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [metric, by_step] : c) {
        auto& m = j[metric];
        m = nlohmann::ordered_json::object();
        for (const auto& [step, rho] : by_step) m[std::to_string(step)] = opt_json(rho);
    }
    return j;
}

double mean_of(const ResultsTable& table, const std::vector<std::size_t>& rows, int step) {
    if (rows.empty()) return kNaN;
    double s = 0;
    for (auto r : rows) s += table.rows()[r].accuracy.at(step);
    return s / static_cast<double>(rows.size());
}

ResultsTable subset(const ResultsTable& table, const std::vector<std::string>& ids) {
    const std::set<std::string> keep(ids.begin(), ids.end());
    ResultsTable out;
    for (const auto& r : table.rows())
        if (keep.count(r.model_id)) out.add(r);
    return out;
}

}  // namespace

void ResultsTable::add(ResultRow row) {
    if (index_.count(row.model_id)) throw std::invalid_argument("duplicate model_id '" + row.model_id + "'");
    index_[row.model_id] = rows_.size();
    rows_.push_back(std::move(row));
}

std::vector<std::string> ResultsTable::metric_names() const {
    std::set<std::string> names;
    for (const auto& r : rows_)
        for (const auto& [m, v] : r.metrics) names.insert(m);
    return {names.begin(), names.end()};
}

std::vector<int> ResultsTable::steps() const {
    if (rows_.empty()) return {};
    std::vector<int> out;
    for (const auto& [step, acc] : rows_.front().accuracy) {
        bool everywhere = true;
        for (const auto& r : rows_) everywhere = everywhere && r.accuracy.count(step);
        if (everywhere) out.push_back(step);
    }
    return out;
}

void ResultsTable::require_steps(const std::vector<int>& steps) const {
    for (const auto& r : rows_)
        for (int s : steps)
            if (!r.accuracy.count(s))
                throw std::invalid_argument("model '" + r.model_id + "' has no accuracy at step " + std::to_string(s));
}

std::vector<double> ResultsTable::metric_column(const std::string& metric) const {
    std::vector<double> out;
    for (const auto& r : rows_) {
        const auto it = r.metrics.find(metric);
        out.push_back(it == r.metrics.end() ? kNaN : it->second);
    }
    return out;
}

std::vector<double> ResultsTable::accuracy_column(int step) const {
    std::vector<double> out;
    for (const auto& r : rows_) {
        const auto it = r.accuracy.find(step);
        out.push_back(it == r.accuracy.end() ? kNaN : it->second);
    }
    return out;
}

std::vector<double> mid_ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("spearman needs equal lengths");
    if (xs.size() < 2) throw std::invalid_argument("spearman needs at least 2 values");
    const auto rx = mid_ranks(xs), ry = mid_ranks(ys);
    // Both rank vectors have mean (n + 1) / 2.
    const double mean = 0.5 * static_cast<double>(xs.size() + 1);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        const double dx = rx[i] - mean, dy = ry[i] - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0 || syy <= 0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Correlations correlate_all(const ResultsTable& table, const std::vector<std::string>& metrics,
                           const std::vector<int>& steps) {
    table.require_steps(steps);
    Correlations out;
    for (const auto& m : metrics) {
        const auto x = table.metric_column(m);
        for (int s : steps) {
            const auto y = table.accuracy_column(s);
            std::vector<double> a, b;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (!std::isnan(x[i]) && !std::isnan(y[i])) a.push_back(x[i]), b.push_back(y[i]);
            out[m][s] = a.size() >= 2 ? spearman(a, b) : std::nullopt;
        }
    }
    return out;
}

std::vector<std::size_t> order_by(const ResultsTable& table, const std::string& metric) {
    const auto x = table.metric_column(metric);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isnan(x[i])) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return table.rows()[a].model_id < table.rows()[b].model_id;
    });
    return idx;
}

QuartileCurves quartile_curves(const ResultsTable& table, const std::string& metric, const std::vector<int>& steps) {
    table.require_steps(steps);
    const auto order = order_by(table, metric);
    if (order.size() < 4)
        throw std::invalid_argument("quartile curves for '" + metric + "' need at least 4 rows, have " +
                                    std::to_string(order.size()));
    QuartileCurves q;
    q.metric = metric;
    q.steps = steps;
    const std::size_t n = order.size(), base = n / 4, extra = n % 4;
    std::size_t at = 0;
    for (std::size_t b = 0; b < 4; ++b) {
        const std::size_t size = base + (b < extra ? 1 : 0);
        const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(at),
                                            order.begin() + static_cast<std::ptrdiff_t>(at + size));
        at += size;
        for (auto r : rows) q.members[b].push_back(table.rows()[r].model_id);
        for (int s : steps) q.mean_accuracy[b].push_back(mean_of(table, rows, s));
    }
    return q;
}

HalfSplit median_split(const ResultsTable& table, const std::vector<std::size_t>& order) {
    HalfSplit h;
    const std::size_t lower = (order.size() + 1) / 2;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < lower ? h.lower : h.upper).push_back(table.rows()[order[i]].model_id);
    return h;
}

std::vector<double> top_bottom_delta(const ResultsTable& table, const std::string& metric,
                                     const std::vector<int>& steps) {
    table.require_steps(steps);
    const auto order = order_by(table, metric);
    if (order.size() < 2)
        throw std::invalid_argument("top/bottom delta for '" + metric + "' needs at least 2 rows");
    const std::size_t lower = (order.size() + 1) / 2;
    const std::vector<std::size_t> lo(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(lower));
    const std::vector<std::size_t> hi(order.begin() + static_cast<std::ptrdiff_t>(lower), order.end());
    std::vector<double> out;
    for (int s : steps) out.push_back(mean_of(table, hi, s) - mean_of(table, lo, s));
    return out;
}

SplitReport split_by_final_accuracy(const ResultsTable& table, const std::vector<std::string>& metrics,
                                    const std::vector<int>& steps) {
    if (steps.empty()) throw std::invalid_argument("split by final accuracy needs at least one step");
    table.require_steps(steps);
    const int last = *std::max_element(steps.begin(), steps.end());
    const auto acc = table.accuracy_column(last);
    std::vector<std::size_t> order(table.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) {
        if (acc[a] != acc[b]) return acc[a] < acc[b];
        return table.rows()[a].model_id < table.rows()[b].model_id;
    });
    const auto half = median_split(table, order);
    SplitReport r;
    r.worst = half.lower;
    r.best = half.upper;
    r.worst_correlations = correlate_all(subset(table, r.worst), metrics, steps);
    r.best_correlations = correlate_all(subset(table, r.best), metrics, steps);
    return r;
}

std::map<std::string, std::map<std::string, double>> read_scores_csv(std::istream& in) {
    const auto cols = header_columns(in, {"model_id", "metric", "value"}, "scores CSV");
    std::map<std::string, std::map<std::string, double>> out;
    std::string line;
    for (std::size_t no = 2; std::getline(in, line); ++no) {
        line = trim_cr(line);
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() <= std::max({cols.at("model_id"), cols.at("metric"), cols.at("value")}))
            throw std::invalid_argument("scores CSV line " + std::to_string(no) + ": too few columns");
        const auto& id = cells[cols.at("model_id")];
        const auto& metric = cells[cols.at("metric")];
        if (!out[id].emplace(metric, parse_double(cells[cols.at("value")], no)).second)
            throw std::invalid_argument("scores CSV line " + std::to_string(no) + ": duplicate score " + metric +
                                        " for '" + id + "'");
    }
    return out;
}

std::map<std::string, std::map<int, double>> read_curves_csv(std::istream& in) {
    const auto cols = header_columns(in, {"model_id", "step", "accuracy"}, "curves CSV");
    std::map<std::string, std::map<int, double>> out;
    std::string line;
    for (std::size_t no = 2; std::getline(in, line); ++no) {
        line = trim_cr(line);
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() <= std::max({cols.at("model_id"), cols.at("step"), cols.at("accuracy")}))
            throw std::invalid_argument("curves CSV line " + std::to_string(no) + ": too few columns");
        const double step = parse_double(cells[cols.at("step")], no);
        if (step != std::floor(step))
            throw std::invalid_argument("curves CSV line " + std::to_string(no) + ": step must be an integer");
        const auto& id = cells[cols.at("model_id")];
        if (!out[id].emplace(static_cast<int>(step), parse_double(cells[cols.at("accuracy")], no)).second)
            throw std::invalid_argument("curves CSV line " + std::to_string(no) + ": duplicate step for '" + id + "'");
    }
    return out;
}

std::string representation_of(const std::string& model_id) {
    const auto at = model_id.find('@');
    return at == std::string::npos ? model_id : model_id.substr(0, at);
}

ResultsTable join(const std::map<std::string, std::map<std::string, double>>& scores,
                  const std::map<std::string, std::map<int, double>>& curves, bool average) {
    const auto scores_for = [&](const std::string& id) -> std::map<std::string, double> {
        if (const auto it = scores.find(id); it != scores.end()) return it->second;
        if (const auto it = scores.find(representation_of(id)); it != scores.end()) return it->second;
        return {};
    };
    ResultsTable table;
    if (!average) {
        for (const auto& [id, acc] : curves) table.add({id, scores_for(id), acc});
        return table;
    }
    std::map<std::string, std::vector<const std::map<int, double>*>> groups;
    for (const auto& [id, acc] : curves) groups[representation_of(id)].push_back(&acc);
    for (const auto& [repr, runs] : groups) {
        std::map<int, std::pair<double, int>> sums;
        for (const auto* run : runs)
            for (const auto& [step, a] : *run) {
                sums[step].first += a;
                sums[step].second += 1;
            }
        ResultRow row{repr, scores_for(repr), {}};
        for (const auto& [step, s] : sums)
            if (s.second == static_cast<int>(runs.size())) row.accuracy[step] = s.first / s.second;
        table.add(std::move(row));
    }
    return table;
}

nlohmann::ordered_json Report::to_json() const {
    nlohmann::ordered_json j;
    j["metrics"] = metrics;
    j["steps"] = steps;
    j["correlations"] = correlations_json(correlations);
    auto& q = j["quartiles"];
    q = nlohmann::ordered_json::object();
    for (const auto& c : quartiles) {
        auto& m = q[c.metric];
        for (std::size_t b = 0; b < 4; ++b) {
            m["members"].push_back(c.members[b]);
            m["mean_accuracy"].push_back(c.mean_accuracy[b]);
        }
    }
    auto& d = j["top_bottom_delta"];
    d = nlohmann::ordered_json::object();
    for (const auto& [metric, v] : deltas) d[metric] = v;
    j["split_by_final_accuracy"] = {
        {"worst", {{"models", splits.worst}, {"correlations", correlations_json(splits.worst_correlations)}}},
        {"best", {{"models", splits.best}, {"correlations", correlations_json(splits.best_correlations)}}},
    };
    return j;
}

Report build_report(const ResultsTable& table) {
    Report r;
    r.metrics = table.metric_names();
    r.steps = table.steps();
    if (r.steps.empty()) throw std::invalid_argument("results table has no step shared by every model");
    r.correlations = correlate_all(table, r.metrics, r.steps);
    for (const auto& m : r.metrics) {
        if (order_by(table, m).size() >= 4) r.quartiles.push_back(quartile_curves(table, m, r.steps));
        if (order_by(table, m).size() >= 2) r.deltas[m] = top_bottom_delta(table, m, r.steps);
    }
    if (table.size() >= 2) r.splits = split_by_final_accuracy(table, r.metrics, r.steps);
    return r;
}

void write_report(const Report& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto open = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        return out;
    };
    open("report.json") << report.to_json().dump(2) << '\n';

    auto corr = open("correlations.csv");
    corr << "metric,step,rho\n";
    for (const auto& [m, by_step] : report.correlations)
        for (const auto& [s, rho] : by_step) corr << m << ',' << s << ',' << fmt(rho) << '\n';

    auto quart = open("quartiles.csv");
    quart << "metric,quartile,step,mean_accuracy,size\n";
    for (const auto& q : report.quartiles)
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < q.steps.size(); ++i)
                quart << q.metric << ',' << b + 1 << ',' << q.steps[i] << ',' << fmt(q.mean_accuracy[b][i]) << ','
                      << q.members[b].size() << '\n';

    auto delta = open("deltas.csv");
    delta << "metric,step,delta\n";
    for (const auto& [m, v] : report.deltas)
        for (std::size_t i = 0; i < v.size(); ++i) delta << m << ',' << report.steps[i] << ',' << fmt(v[i]) << '\n';

    auto split = open("split_correlations.csv");
    split << "split,metric,step,rho\n";
    for (const auto& [name, c] : {std::pair{"worst", &report.splits.worst_correlations},
                                  std::pair{"best", &report.splits.best_correlations}})
        for (const auto& [m, by_step] : *c)
            for (const auto& [s, rho] : by_step) split << name << ',' << m << ',' << s << ',' << fmt(rho) << '\n';
}

}  // namespace avr::analysis
