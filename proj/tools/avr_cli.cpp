// avr: generate RPM instances, render them, score representations, train
// WReN, analyse results and run the full entanglement-ladder experiment.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "avr/analysis.hpp"
#include "avr/digest.hpp"
#include "avr/metrics.hpp"
#include "avr/pipeline.hpp"
#include "avr/rpm.hpp"
#include "avr/wren.hpp"

#ifndef AVR_VERSION
#define AVR_VERSION "dev"
#endif

using namespace avr;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Exit codes.
constexpr int kOk = 0, kFailure = 1, kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Failure inside a named pipeline stage.
struct StageError : std::runtime_error {
    StageError(std::string stage, const std::string& what) : std::runtime_error(what), stage(std::move(stage)) {}
    std::string stage;
};

template <class F>
auto stage(const std::string& name, F&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const UsageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string file_digest(const fs::path& p) { return hex_digest(slurp(p)); }

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

constexpr const char* kDirManifest = "run_manifest.json";

fs::path file_manifest(const fs::path& out) { return out.string() + ".run.json"; }

// Output handling shared by every subcommand.
struct Run {
    std::string command;
    const CLI::App* sub = nullptr;
    fs::path out;
    bool dir_output = false;
    std::vector<fs::path> extra_outputs;  // for file outputs: sidecars written next to `out`
    std::vector<fs::path> inputs;
    ojson seeds = ojson::object();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    std::string started = utc_now();

    // Refuses to clobber unless `force`. A forced directory output is emptied
    // first, but only when it is one of ours.
    void prepare(bool force) {
        if (out.empty()) throw UsageError("--out is required");
        if (dir_output) {
            if (fs::exists(out) && !fs::is_directory(out)) throw UsageError(out.string() + " exists and is not a directory");
            if (fs::exists(out) && !fs::is_empty(out)) {
                if (!force) throw UsageError("refusing to overwrite " + out.string() + " (use --force)");
                if (!fs::exists(out / kDirManifest))
                    throw UsageError(out.string() + " is not empty and has no " + kDirManifest + "; not clearing it");
                fs::remove_all(out);
            }
            fs::create_directories(out);
        } else {
            if (fs::is_directory(out)) throw UsageError(out.string() + " is a directory");
            if (fs::exists(out) && !force) throw UsageError("refusing to overwrite " + out.string() + " (use --force)");
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
        }
    }

    [[nodiscard]] ojson config() const {
        ojson j = ojson::object();
        for (const CLI::Option* opt : sub->get_options()) {
            const auto name = opt->get_single_name();
            if (name == "help" || name == "config" || name.empty()) continue;
            if (opt->get_expected_max() == 0) {
                j[name] = opt->count() > 0 && opt->as<bool>();
            } else if (opt->count() > 0) {
                const auto r = opt->results();
                std::string v;
                for (std::size_t i = 0; i < r.size(); ++i) v += (i ? "," : "") + r[i];
                j[name] = v;
            } else {
                const auto d = opt->get_default_str();
                if (d.empty())
                    j[name] = nullptr;
                else
                    j[name] = d;
            }
        }
        return j;
    }

    void write_manifest() const {
        ojson m;
        m["tool"] = "avr";
        m["version"] = AVR_VERSION;
        m["command"] = command;
        m["config"] = config();
        m["seeds"] = seeds;
        ojson in = ojson::object();
        for (const auto& p : inputs) in[p.string()] = file_digest(p);
        m["inputs"] = in;
        ojson outs = ojson::object();
        fs::path manifest;
        if (dir_output) {
            manifest = out / kDirManifest;
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(out))
                if (e.is_regular_file() && e.path() != manifest) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) outs[fs::relative(f, out).generic_string()] = file_digest(f);
        } else {
            manifest = file_manifest(out);
            outs[out.filename().string()] = file_digest(out);
            for (const auto& f : extra_outputs) outs[fs::relative(f, out.parent_path().empty() ? "." : out.parent_path()).generic_string()] = file_digest(f);
        }
        m["outputs"] = outs;
        m["started_utc"] = started;
        m["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        open_out(manifest) << m.dump(2) << "\n";
    }
};

SpaceId parse_space(const std::string& s) {
    try {
        return make_space(s).id();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

std::vector<MetricKind> parse_metrics(const std::vector<std::string>& names) {
    std::vector<MetricKind> out;
    for (const auto& n : names) {
        if (n == "all") {
            out.assign(std::begin(kAllMetrics), std::end(kAllMetrics));
            continue;
        }
        try {
            out.push_back(parse_metric(n));
        } catch (const std::exception& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty()) throw UsageError("no metrics selected");
    return out;
}

MetricParams parse_params(const std::vector<std::string>& kv) {
    MetricParams p;
    for (const auto& s : kv) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw UsageError("--param expects metric.field=value, got '" + s + "'");
        try {
            p.set(s.substr(0, eq), s.substr(eq + 1));
        } catch (const std::exception& e) {
            throw UsageError(e.what());
        }
    }
    return p;
}

// Representation specs naming an existing file take their id from the file
// stem; oracle specs use the source descriptor.
std::string model_id_for(const std::string& spec, const RepresentationSource& src) {
    return fs::is_regular_file(spec) ? fs::path(spec).stem().string() : src.describe();
}

void add_repr_inputs(Run& run, const std::string& spec) {
    if (!fs::is_regular_file(spec)) return;
    run.inputs.push_back(spec);
    if (fs::exists(manifest_path(spec))) run.inputs.push_back(manifest_path(spec));
}

// ---- generate --------------------------------------------------------------

struct GenerateArgs {
    std::string space = "dsprites_reasoning";
    std::uint64_t count = 1000, seed = 0;
    bool strict = false;
};

void cmd_generate(const GenerateArgs& a, int jobs, Run& run) {
    const auto space = make_space(parse_space(a.space));
    run.seeds["seed"] = a.seed;
    std::vector<RpmInstance> instances(a.count);
    stage("generate", [&] {
        parallel_for(instances.size(), jobs,
                     [&](std::size_t i) { instances[i] = generate_instance(space, instance_seed(a.seed, i), a.strict); });
    });
    stage("write", [&] {
        auto out = open_out(run.out);
        write_instances(out, instances);
    });
}

// ---- render ----------------------------------------------------------------

struct RenderArgs {
    std::string in;
    std::int64_t limit = -1;
};

void cmd_render(const RenderArgs& a, int jobs, Run& run) {
    const auto instances = stage("read", [&] {
        std::ifstream in(a.in);
        if (!in) throw std::runtime_error("cannot read " + a.in);
        return read_instances(in);
    });
    run.inputs.push_back(a.in);
    const auto n = a.limit < 0 ? instances.size() : std::min<std::size_t>(instances.size(), a.limit);
    stage("render", [&] {
        parallel_for(n, jobs, [&](std::size_t i) {
            const auto& inst = instances[i];
            const auto r = render_instance(make_space(inst.space), inst);
            const auto base = run.out / ("inst_" + std::to_string(i));
            for (int k = 0; k < 8; ++k) write_png(r.context[k], base.string() + "_ctx" + std::to_string(k) + ".png");
            for (int k = 0; k < 6; ++k) write_png(r.answers[k], base.string() + "_ans" + std::to_string(k) + ".png");
            write_png(r.sheet, base.string() + "_sheet.png");
        });
    });
}

// ---- eval-metrics ----------------------------------------------------------

struct EvalArgs {
    std::string space = "dsprites_reasoning", repr, model_id;
    std::vector<std::string> metrics{"all"}, params;
    std::uint64_t seed = 0;
};

void cmd_eval(const EvalArgs& a, int jobs, Run& run) {
    const auto space = make_space(parse_space(a.space));
    const auto metrics = parse_metrics(a.metrics);
    const auto params = parse_params(a.params);
    const auto src = stage("load-representation", [&] { return make_source(space, a.repr); });
    add_repr_inputs(run, a.repr);
    run.seeds["seed"] = a.seed;
    std::vector<MetricScore> scores(metrics.size());
    stage("metrics", [&] {
        parallel_for(metrics.size(), jobs,
                     [&](std::size_t i) { scores[i] = compute_metric(metrics[i], space, src, a.seed, params); });
    });
    for (const auto& s : scores)
        for (const auto& w : s.warnings) std::cerr << "avr: warning: " << to_string(s.metric) << ": " << w << "\n";
    stage("write", [&] {
        auto out = open_out(run.out);
        write_scores_csv(out, a.model_id.empty() ? model_id_for(a.repr, src) : a.model_id, scores);
    });
}

// ---- train-wren ------------------------------------------------------------

struct TrainArgs {
    std::string space = "dsprites_reasoning", repr = "gt_integer", model_id, checkpoint_dir, cache_dir;
    std::vector<std::uint64_t> config_seeds{0}, gen_seeds{0};
    int steps = 20000, batch = 32, eval_every = 1000, eval_batches = 100;
    bool strict = false, double_precision = false;
};

TrainOptions train_options(int steps, int batch, int eval_every, int eval_batches, bool strict, bool dbl) {
    if (steps < 1 || batch < 1 || eval_every < 1 || eval_batches < 1)
        throw UsageError("--steps, --batch, --eval-every and --eval-batches must be positive");
    TrainOptions t;
    t.steps = steps;
    t.batch = batch;
    t.eval_every = eval_every;
    t.eval_batches = eval_batches;
    t.strict_instances = strict;
    t.single_precision = !dbl;
    return t;
}

void cmd_train(const TrainArgs& a, int jobs, Run& run) {
    const auto space = make_space(parse_space(a.space));
    const auto base = train_options(a.steps, a.batch, a.eval_every, a.eval_batches, a.strict, a.double_precision);
    const auto src = stage("load-representation", [&] { return make_source(space, a.repr); });
    add_repr_inputs(run, a.repr);
    const auto repr_id = a.model_id.empty() ? model_id_for(a.repr, src) : a.model_id;
    run.seeds["config_seeds"] = a.config_seeds;
    run.seeds["gen_seeds"] = a.gen_seeds;

    struct Cell {
        std::uint64_t config_seed, gen_seed;
        std::vector<TrainRecord> records;
    };
    std::vector<Cell> cells;
    for (auto c : a.config_seeds)
        for (auto g : a.gen_seeds) cells.push_back({c, g, {}});
    std::mutex log_mu;
    stage("train", [&] {
        parallel_for(cells.size(), jobs, [&](std::size_t i) {
            auto& cell = cells[i];
            const auto cfg = sample_config(cell.config_seed);
            const auto id = run_id(repr_id, cell.config_seed, cell.gen_seed);
            auto t = base;
            t.on_record = [&](const TrainRecord& r) {
                std::lock_guard lock(log_mu);
                std::fprintf(stderr, "%s step %d acc %.4f\n", id.c_str(), r.step, r.eval_accuracy);
            };
            if (!a.checkpoint_dir.empty()) {
                t.checkpoint_dir = fs::path(a.checkpoint_dir) / ("cfg" + std::to_string(cell.config_seed) + "-seed" +
                                                                 std::to_string(cell.gen_seed));
                cell.records = train_wren(cfg, space, src, cell.gen_seed, t).records;
            } else {
                cell.records = train_cached(cfg, space, src, cell.gen_seed, t, a.cache_dir);
            }
        });
    });
    stage("write", [&] {
        {
            auto out = open_out(run.out);
            out << "model_id,step,accuracy\n";
            for (const auto& c : cells) write_curve_csv(out, run_id(repr_id, c.config_seed, c.gen_seed), c.records, false);
        }
        // One config dump per job, next to the curves.
        for (const auto& c : cells) {
            const auto cfg = sample_config(c.config_seed);
            ojson j;
            j["model_id"] = run_id(repr_id, c.config_seed, c.gen_seed);
            j["space"] = a.space;
            j["representation"] = src.describe();
            j["config_seed"] = c.config_seed;
            j["gen_seed"] = c.gen_seed;
            j["config"] = cfg.to_json();
            j["config_digest"] = cfg.digest();
            j["steps"] = base.steps;
            j["batch"] = base.batch;
            j["eval_every"] = base.eval_every;
            j["eval_batches"] = base.eval_batches;
            j["strict_instances"] = base.strict_instances;
            j["single_precision"] = base.single_precision;
            const fs::path p = run.out.string() + ".cfg" + std::to_string(c.config_seed) + "-seed" +
                               std::to_string(c.gen_seed) + ".json";
            open_out(p) << j.dump(2) << "\n";
            run.extra_outputs.push_back(p);
        }
    });
}

// ---- analyze ---------------------------------------------------------------

struct AnalyzeArgs {
    std::string scores, curves;
    bool per_run = false;
};

void cmd_analyze(const AnalyzeArgs& a, Run& run) {
    auto read = [](const std::string& p, auto&& reader) {
        std::ifstream in(p);
        if (!in) throw std::runtime_error("cannot read " + p);
        return reader(in);
    };
    const auto scores = stage("read-scores", [&] { return read(a.scores, analysis::read_scores_csv); });
    const auto curves = stage("read-curves", [&] { return read(a.curves, analysis::read_curves_csv); });
    run.inputs = {a.scores, a.curves};
    const auto report = stage("analyze", [&] {
        const auto table = analysis::join(scores, curves, !a.per_run);
        if (table.size() == 0) throw std::runtime_error("no curve rows join to any scores");
        return analysis::build_report(table);
    });
    stage("write", [&] { analysis::write_report(report, run.out); });
}

// ---- ladder ----------------------------------------------------------------

struct LadderArgs {
    std::string space = "dsprites_reasoning", cache_dir;
    int levels = 5, wren_configs = 3, seeds = 2;
    std::vector<std::uint64_t> config_seeds;
    std::uint64_t mix_seed = 7, seed = 1;
    std::vector<std::string> metrics{"all"}, params;
    int steps = 20000, batch = 32, eval_every = 1000, eval_batches = 100;
    bool base_widths = false, strict = false, double_precision = false;
};

void cmd_ladder(const LadderArgs& a, int jobs, Run& run) {
    if (a.levels < 2) throw UsageError("--levels must be at least 2");
    if (a.wren_configs < 1 || a.seeds < 1) throw UsageError("--wren-configs and --seeds must be positive");
    LadderOptions o;
    o.space = parse_space(a.space);
    o.levels = a.levels;
    o.mix_seed = a.mix_seed;
    o.metric_seed = a.seed;
    o.metrics = parse_metrics(a.metrics);
    o.metric_params = parse_params(a.params);
    o.train = train_options(a.steps, a.batch, a.eval_every, a.eval_batches, a.strict, a.double_precision);
    o.train.checkpoint_steps.clear();
    if (!a.config_seeds.empty())
        o.config_seeds = a.config_seeds;
    else if (a.base_widths)
        o.config_seeds = first_config_seeds(a.wren_configs, [](const WrenConfig& c) {
            return c.edge_units == 256 && c.edge_layers == 2;
        });
    else
        o.config_seeds = first_config_seeds(a.wren_configs);
    o.gen_seeds.clear();
    for (int s = 0; s < a.seeds; ++s) o.gen_seeds.push_back(static_cast<std::uint64_t>(s));
    o.jobs = jobs;
    o.cache_dir = a.cache_dir;
    o.log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
    run.seeds["mix_seed"] = a.mix_seed;
    run.seeds["metric_seed"] = a.seed;
    run.seeds["config_seeds"] = o.config_seeds;
    run.seeds["gen_seeds"] = o.gen_seeds;
    const auto result = stage("ladder", [&] { return run_ladder(o); });
    stage("write", [&] { write_ladder(result, run.out); });
}

// Options shared by every subcommand.
struct Common {
    std::string out;
    int jobs = 1;
    bool force = false;
};

void add_common(CLI::App* sub, Common& c, bool dir_output, const std::string& out_help) {
    sub->add_option("--out", c.out, out_help)->required();
    sub->add_option("--jobs", c.jobs, "Worker threads across independent cells")->check(CLI::PositiveNumber);
    sub->add_flag("--force", c.force, std::string("Overwrite an existing output ") + (dir_output ? "directory" : "file"));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Abstract visual reasoning over disentangled representations"};
    app.set_version_flag("--version", AVR_VERSION);
    app.set_config("--config", "", "Key-value config file; [subcommand] sections, CLI flags take precedence");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    Common common;
    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Sample RPM instances to a JSON-lines file");
    g->add_option("--space", gen.space, "Factor space id");
    g->add_option("--count", gen.count, "Number of instances");
    g->add_option("--seed", gen.seed, "Stream seed");
    g->add_flag("--strict", gen.strict, "Regenerate until exactly one answer is consistent");
    add_common(g, common, false, "Instance file (.jsonl)");

    RenderArgs ren;
    auto* r = app.add_subcommand("render", "Render instances to PNG panels and sheets");
    r->add_option("--in", ren.in, "Instance file")->required();
    r->add_option("--limit", ren.limit, "Render only the first N instances (-1: all)");
    add_common(r, common, true, "Output directory");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval-metrics", "Score a representation with disentanglement metrics");
    e->add_option("--space", ev.space, "Factor space id");
    e->add_option("--repr", ev.repr, "Representation CSV or oracle spec")->required();
    e->add_option("--metrics", ev.metrics, "Metric names or 'all'")->delimiter(',');
    e->add_option("--param", ev.params, "Metric parameter override metric.field=value")->delimiter(',');
    e->add_option("--seed", ev.seed, "Metric seed");
    e->add_option("--model-id", ev.model_id, "Row id in the scores file");
    add_common(e, common, false, "Scores CSV");

    TrainArgs tr;
    auto* t = app.add_subcommand("train-wren", "Train WReN on a representation and record accuracy curves");
    t->add_option("--space", tr.space, "Factor space id");
    t->add_option("--repr", tr.repr, "Representation CSV or oracle spec");
    t->add_option("--config-seed", tr.config_seeds, "Config seeds (comma list)")->delimiter(',');
    t->add_option("--gen-seed", tr.gen_seeds, "Instance generator seeds (comma list)")->delimiter(',');
    t->add_option("--steps", tr.steps, "Training steps");
    t->add_option("--batch", tr.batch, "Mini-batch size");
    t->add_option("--eval-every", tr.eval_every, "Evaluation interval");
    t->add_option("--eval-batches", tr.eval_batches, "Evaluation mini-batches");
    t->add_flag("--strict", tr.strict, "Train and evaluate on strict instances");
    t->add_flag("--double", tr.double_precision, "Double-precision training");
    t->add_option("--model-id", tr.model_id, "Representation part of the run ids");
    t->add_option("--checkpoint-dir", tr.checkpoint_dir, "Write parameter checkpoints under this directory");
    t->add_option("--cache-dir", tr.cache_dir, "Reuse finished runs stored here");
    add_common(t, common, false, "Curves CSV");

    AnalyzeArgs an;
    auto* a = app.add_subcommand("analyze", "Correlate scores with accuracy curves");
    a->add_option("--scores", an.scores, "Scores CSV")->required();
    a->add_option("--curves", an.curves, "Curves CSV")->required();
    a->add_flag("--per-run", an.per_run, "One table row per run instead of per representation");
    add_common(a, common, true, "Report directory");

    LadderArgs la;
    auto* l = app.add_subcommand("ladder", "Entanglement-ladder experiment end to end");
    l->add_option("--space", la.space, "Factor space id");
    l->add_option("--levels", la.levels, "Ladder levels");
    l->add_option("--wren-configs", la.wren_configs, "Number of sampled WReN configs");
    l->add_option("--config-seeds", la.config_seeds, "Explicit config seeds (overrides --wren-configs)")
        ->delimiter(',');
    l->add_flag("--base-widths", la.base_widths, "Only configs with 256 edge units and 2 edge layers");
    l->add_option("--seeds", la.seeds, "Generator seeds per cell");
    l->add_option("--mix-seed", la.mix_seed, "Seed of the shared mixing matrix");
    l->add_option("--seed", la.seed, "Metric seed");
    l->add_option("--metrics", la.metrics, "Metric names or 'all'")->delimiter(',');
    l->add_option("--param", la.params, "Metric parameter override metric.field=value")->delimiter(',');
    l->add_option("--steps", la.steps, "Training steps");
    l->add_option("--batch", la.batch, "Mini-batch size");
    l->add_option("--eval-every", la.eval_every, "Evaluation interval");
    l->add_option("--eval-batches", la.eval_batches, "Evaluation mini-batches");
    l->add_flag("--strict", la.strict, "Train and evaluate on strict instances");
    l->add_flag("--double", la.double_precision, "Double-precision training");
    l->add_option("--cache-dir", la.cache_dir, "Reuse finished runs stored here");
    add_common(l, common, true, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    Run run;
    run.command = sub->get_name();
    run.sub = sub;
    run.out = common.out;
    run.dir_output = sub == r || sub == a || sub == l;
    try {
        run.prepare(common.force);
        if (sub == g) cmd_generate(gen, common.jobs, run);
        else if (sub == r) cmd_render(ren, common.jobs, run);
        else if (sub == e) cmd_eval(ev, common.jobs, run);
        else if (sub == t) cmd_train(tr, common.jobs, run);
        else if (sub == a) cmd_analyze(an, run);
        else cmd_ladder(la, common.jobs, run);
        stage("manifest", [&] { run.write_manifest(); });
    } catch (const UsageError& ex) {
        std::cerr << "avr " << run.command << ": " << ex.what() << "\n";
        return kUsage;
    } catch (const StageError& ex) {
        std::cerr << "avr " << run.command << ": stage '" << ex.stage << "' failed: " << ex.what() << "\n";
        return kFailure;
    } catch (const std::exception& ex) {
        std::cerr << "avr " << run.command << ": " << ex.what() << "\n";
        return kFailure;
    }
    return kOk;
}
