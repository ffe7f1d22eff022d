#include "avr/rpm.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace avr {

GenerationError::GenerationError(std::string stage, std::uint64_t seed, const std::string& detail)
    : std::runtime_error(stage + " (seed " + std::to_string(seed) + "): " + detail),
      stage_(std::move(stage)),
      seed_(seed) {}

bool RelationSpec::is_fixed(int factor) const {
    return std::find(fixed_factors.begin(), fixed_factors.end(), factor) != fixed_factors.end();
}

void RelationSpec::validate(const FactorSpace& space) const {
    if (fixed_factors.empty() || fixed_factors.size() > 3)
        throw std::invalid_argument("relation must fix 1 to 3 factors");
    auto sorted = fixed_factors;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw std::invalid_argument("relation repeats a fixed factor");
    for (int f : fixed_factors)
        if (f < 0 || f >= static_cast<int>(space.num_factors()))
            throw std::invalid_argument("relation factor index out of range");
    for (const auto& row : row_values) {
        if (row.size() != fixed_factors.size()) throw std::invalid_argument("ragged relation row values");
        for (std::size_t i = 0; i < row.size(); ++i)
            if (row[i] < 0 || row[i] >= space.cardinality(fixed_factors[i]))
                throw std::invalid_argument("relation row value out of range for factor '" +
                                            space.factor(fixed_factors[i]).name + "'");
    }
}

RelationSpec sample_relation(const FactorSpace& space, Rng& rng) {
    if (space.num_factors() < 3) throw std::invalid_argument("relation sampling needs at least 3 factors");
    RelationSpec rel;
    const auto count = 1 + static_cast<std::size_t>(rng.uniform_index(3));
    for (auto f : rng.sample_without_replacement(space.num_factors(), count))
        rel.fixed_factors.push_back(static_cast<int>(f));
    for (auto& row : rel.row_values)
        for (int f : rel.fixed_factors) row.push_back(static_cast<int>(rng.uniform_index(space.cardinality(f))));
    return rel;
}

namespace {

bool row_constant(const std::array<int, 9>& values, int row) {
    return values[3 * row] == values[3 * row + 1] && values[3 * row] == values[3 * row + 2];
}

bool satisfies_row3(const RelationSpec& rel, const FactorAssignment& solution, const FactorAssignment& candidate) {
    for (int f : rel.fixed_factors)
        if (candidate[f] != solution[f]) return false;
    return true;
}

}  // namespace

SolutionGrid sample_solution_grid(const FactorSpace& space, const RelationSpec& relation, Rng& rng,
                                  std::uint64_t seed) {
    relation.validate(space);
    SolutionGrid grid;
    for (auto& panel : grid) panel.assign(space.num_factors(), 0);

    for (int f = 0; f < static_cast<int>(space.num_factors()); ++f) {
        const auto fixed = std::find(relation.fixed_factors.begin(), relation.fixed_factors.end(), f);
        if (fixed != relation.fixed_factors.end()) {
            const auto i = static_cast<std::size_t>(fixed - relation.fixed_factors.begin());
            for (int p = 0; p < 9; ++p) grid[p][f] = relation.row_values[p / 3][i];
            continue;
        }
        std::array<int, 9> values{};
        int attempts = 0;
        do {
            if (++attempts > kRejectionCap)
                throw GenerationError("solution_grid", seed,
                                      "factor '" + space.factor(f).name + "' stayed constant in rows 1-2");
            for (auto& v : values) v = static_cast<int>(rng.uniform_index(space.cardinality(f)));
        } while (row_constant(values, 0) && row_constant(values, 1));
        for (int p = 0; p < 9; ++p) grid[p][f] = values[p];
    }
    return grid;
}

std::array<FactorAssignment, 5> sample_distractors(const FactorSpace& space, const RelationSpec& relation,
                                                   const SolutionGrid& grid, Rng& rng, std::uint64_t seed) {
    const auto& solution = grid[8];
    std::array<FactorAssignment, 5> out;
    for (std::size_t d = 0; d < out.size(); ++d) {
        int attempts = 0;
        for (;;) {
            if (++attempts > kRejectionCap)
                throw GenerationError("distractors", seed, "no valid distractor #" + std::to_string(d));
            FactorAssignment cand = solution;
            for (int f = 0; f < static_cast<int>(space.num_factors()); ++f)
                if (!relation.is_fixed(f)) cand[f] = static_cast<int>(rng.uniform_index(space.cardinality(f)));
            const int pick = relation.fixed_factors[rng.uniform_index(relation.fixed_factors.size())];
            cand[pick] = static_cast<int>(rng.uniform_index(space.cardinality(pick)));

            if (satisfies_row3(relation, solution, cand)) continue;
            if (std::find(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d), cand) !=
                out.begin() + static_cast<std::ptrdiff_t>(d))
                continue;
            out[d] = std::move(cand);
            break;
        }
    }
    return out;
}

ConsistencyResult check_consistency(const FactorSpace& space, const std::array<FactorAssignment, 8>& context,
                                    const FactorAssignment& candidate) {
    ConsistencyResult res;
    res.consistent = true;
    for (int f = 0; f < static_cast<int>(space.num_factors()); ++f) {
        const bool row1 = context[0][f] == context[1][f] && context[0][f] == context[2][f];
        const bool row2 = context[3][f] == context[4][f] && context[3][f] == context[5][f];
        if (!(row1 && row2)) continue;
        res.witness_factors.push_back(f);
        if (!(context[6][f] == context[7][f] && context[6][f] == candidate[f])) res.consistent = false;
    }
    return res;
}

RpmInstance generate_instance(const FactorSpace& space, std::uint64_t seed, bool strict) {
    SeededRng rng(seed);
    for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
        RpmInstance inst;
        inst.space = space.id();
        inst.seed = seed;
        inst.relation = sample_relation(space, rng);
        const auto grid = sample_solution_grid(space, inst.relation, rng, seed);
        const auto distractors = sample_distractors(space, inst.relation, grid, rng, seed);
        inst.correct_index = static_cast<int>(rng.uniform_index(6));
        std::copy(grid.begin(), grid.begin() + 8, inst.context.begin());
        for (int j = 0, d = 0; j < 6; ++j) inst.answers[j] = j == inst.correct_index ? grid[8] : distractors[d++];

        if (!strict) return inst;
        int consistent = 0;
        bool correct_ok = false;
        for (int j = 0; j < 6; ++j)
            if (check_consistency(space, inst.context, inst.answers[j]).consistent) {
                ++consistent;
                correct_ok = correct_ok || j == inst.correct_index;
            }
        if (consistent == 1 && correct_ok) return inst;
    }
    throw GenerationError("strict_check", seed, "no instance with a unique consistent answer");
}

std::uint64_t instance_seed(std::uint64_t stream_seed, std::uint64_t i) {
    return mix64(mix64(stream_seed) + 0x632BE59BD9B4E019ULL * (i + 1));
}

std::string instance_to_json(const RpmInstance& inst) {
    nlohmann::ordered_json j;
    j["space"] = std::string(to_string(inst.space));
    j["seed"] = inst.seed;
    j["fixed_factors"] = inst.relation.fixed_factors;
    j["row_values"] = inst.relation.row_values;
    j["context"] = inst.context;
    j["answers"] = inst.answers;
    j["correct_index"] = inst.correct_index;
    return j.dump();
}

RpmInstance instance_from_json(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    RpmInstance inst;
    inst.space = parse_space_id(j.at("space").get<std::string>());
    inst.seed = j.at("seed").get<std::uint64_t>();
    inst.relation.fixed_factors = j.at("fixed_factors").get<std::vector<int>>();
    inst.relation.row_values = j.at("row_values").get<std::array<std::vector<int>, 3>>();
    inst.context = j.at("context").get<std::array<FactorAssignment, 8>>();
    inst.answers = j.at("answers").get<std::array<FactorAssignment, 6>>();
    inst.correct_index = j.at("correct_index").get<int>();
    if (inst.correct_index < 0 || inst.correct_index >= 6)
        throw std::invalid_argument("correct_index outside [0, 6)");
    const auto space = make_space(inst.space);
    inst.relation.validate(space);
    for (const auto& a : inst.context) space.validate(a);
    for (const auto& a : inst.answers) space.validate(a);
    return inst;
}

void write_instances(std::ostream& out, const std::vector<RpmInstance>& instances) {
    for (const auto& inst : instances) out << instance_to_json(inst) << '\n';
}

std::vector<RpmInstance> read_instances(std::istream& in) {
    std::vector<RpmInstance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(instance_from_json(line));
        } catch (const std::exception& e) {
            throw std::runtime_error("instance file line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

RenderedInstance render_instance(const FactorSpace& space, const RpmInstance& inst) {
    auto render_all = [&](const auto& panels) {
        std::vector<Image> imgs;
        for (const auto& a : panels) imgs.push_back(render_panel(space, a));
        return imgs;
    };
    const auto ctx = render_all(inst.context);
    const auto ans = render_all(inst.answers);
    RenderedInstance r{
        .context = {ctx[0], ctx[1], ctx[2], ctx[3], ctx[4], ctx[5], ctx[6], ctx[7]},
        .answers = {ans[0], ans[1], ans[2], ans[3], ans[4], ans[5]},
        .sheet = compose_task_sheet(ctx, ans),
    };
    return r;
}

}  // namespace avr
