#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "avr/digest.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string err;
};

fs::path scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "avr_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Result run_avr(const std::string& args) {
    const auto err = scratch() / "stderr.txt";
    const auto cmd = std::string("\"") + AVR_CLI_PATH + "\" " + args + " >/dev/null 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("usage errors exit 2") {
    CHECK(run_avr("frobnicate").code == 2);
    CHECK(run_avr("").code == 2);
    CHECK(run_avr("generate").code == 2);  // --out missing
    CHECK(run_avr("generate --count x --out " + q(scratch() / "x.jsonl")).code == 2);
    const auto r = run_avr("generate --space nowhere --out " + q(scratch() / "x.jsonl"));
    CHECK(r.code == 2);
    CHECK(r.err.find("nowhere") != std::string::npos);
    CHECK_FALSE(fs::exists(scratch() / "x.jsonl"));
    CHECK(run_avr("--help").code == 0);
    CHECK(run_avr("ladder --help").code == 0);
}

TEST_CASE("generate is deterministic and writes a manifest") {
    const auto a = scratch() / "g1.jsonl", b = scratch() / "g2.jsonl";
    REQUIRE(run_avr("generate --space dsprites_reasoning --count 10 --seed 7 --out " + q(a)).code == 0);
    REQUIRE(run_avr("generate --space dsprites_reasoning --count 10 --seed 7 --jobs 3 --out " + q(b)).code == 0);
    CHECK(slurp(a) == slurp(b));
    std::istringstream lines(slurp(a));
    int n = 0;
    for (std::string line; std::getline(lines, line);) ++n;
    CHECK(n == 10);

    const auto m = nlohmann::json::parse(slurp(a.string() + ".run.json"));
    CHECK(m["command"] == "generate");
    CHECK(m["seeds"]["seed"] == 7);
    CHECK(m["config"]["count"] == "10");
    CHECK(m["outputs"]["g1.jsonl"] == avr::hex_digest(slurp(a)));
    CHECK(m.contains("wall_clock_seconds"));
    CHECK(m.contains("version"));
}

TEST_CASE("outputs are not overwritten without --force") {
    const auto a = scratch() / "f.jsonl";
    REQUIRE(run_avr("generate --count 2 --seed 1 --out " + q(a)).code == 0);
    const auto before = slurp(a);
    const auto r = run_avr("generate --count 3 --seed 2 --out " + q(a));
    CHECK(r.code == 2);
    CHECK(r.err.find("--force") != std::string::npos);
    CHECK(slurp(a) == before);
    CHECK(run_avr("generate --count 3 --seed 2 --force --out " + q(a)).code == 0);
    CHECK(slurp(a) != before);

    // A forced directory output is cleared only when it is one of ours.
    const auto foreign = scratch() / "foreign";
    fs::create_directories(foreign);
    std::ofstream(foreign / "keep.txt") << "x";
    CHECK(run_avr("render --in " + q(a) + " --force --out " + q(foreign)).code == 2);
    CHECK(fs::exists(foreign / "keep.txt"));
}

TEST_CASE("config file sits between flags and defaults") {
    const auto ini = scratch() / "gen.ini";
    std::ofstream(ini) << "[generate]\ncount = 4\nseed = 9\nspace = shapes3d_reasoning\n";
    const auto a = scratch() / "c1.jsonl", b = scratch() / "c2.jsonl";
    REQUIRE(run_avr("--config " + q(ini) + " generate --seed 3 --out " + q(a)).code == 0);
    REQUIRE(run_avr("generate --space shapes3d_reasoning --count 4 --seed 3 --out " + q(b)).code == 0);
    CHECK(slurp(a) == slurp(b));
    const auto m = nlohmann::json::parse(slurp(a.string() + ".run.json"));
    CHECK(m["config"]["seed"] == "3");
    CHECK(m["config"]["count"] == "4");
    CHECK(m["config"]["space"] == "shapes3d_reasoning");
}

TEST_CASE("pipeline failures exit 1 and name the stage") {
    const auto bad = scratch() / "bad.jsonl";
    std::ofstream(bad) << "{not json}\n";
    const auto r = run_avr("render --in " + q(bad) + " --out " + q(scratch() / "bad_png"));
    CHECK(r.code == 1);
    CHECK(r.err.find("stage 'read'") != std::string::npos);
}

TEST_CASE("render writes every panel and the sheet") {
    const auto inst = scratch() / "r.jsonl";
    REQUIRE(run_avr("generate --count 2 --seed 4 --out " + q(inst)).code == 0);
    const auto dir = scratch() / "png";
    REQUIRE(run_avr("render --in " + q(inst) + " --out " + q(dir)).code == 0);
    for (int i = 0; i < 2; ++i) {
        const auto base = "inst_" + std::to_string(i);
        for (int k = 0; k < 8; ++k) CHECK(fs::exists(dir / (base + "_ctx" + std::to_string(k) + ".png")));
        for (int k = 0; k < 6; ++k) CHECK(fs::exists(dir / (base + "_ans" + std::to_string(k) + ".png")));
        CHECK(fs::exists(dir / (base + "_sheet.png")));
    }
    const auto m = nlohmann::json::parse(slurp(dir / "run_manifest.json"));
    CHECK(m["outputs"].size() == 30);
    CHECK(m["inputs"].size() == 1);
}

TEST_CASE("scores and curves join in analyze") {
    const auto s = scratch() / "s.csv", c = scratch() / "c.csv";
    REQUIRE(run_avr("eval-metrics --repr linear_mixed:alpha=0.5,seed=7 --metrics mig,sap --seed 2 --out " + q(s)).code == 0);
    REQUIRE(run_avr("train-wren --repr linear_mixed:alpha=0.5,seed=7 --config-seed 9,17 --gen-seed 0 --steps 20 "
                    "--eval-every 10 --eval-batches 1 --batch 8 --out " + q(c)).code == 0);
    CHECK(fs::exists(c.string() + ".cfg9-seed0.json"));
    CHECK(fs::exists(c.string() + ".cfg17-seed0.json"));
    const auto rep = scratch() / "rep";
    REQUIRE(run_avr("analyze --per-run --scores " + q(s) + " --curves " + q(c) + " --out " + q(rep)).code == 0);
    const auto j = nlohmann::json::parse(slurp(rep / "report.json"));
    CHECK(j["metrics"] == nlohmann::json{"mig", "sap"});
    CHECK(j["steps"] == nlohmann::json{0, 10, 20});
    CHECK(fs::exists(rep / "correlations.csv"));
}
