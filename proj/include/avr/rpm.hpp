#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "avr/factor_space.hpp"
#include "avr/render.hpp"
#include "avr/rng.hpp"

namespace avr {

/// Raised when a rejection loop exceeds its attempt cap.
class GenerationError : public std::runtime_error {
public:
    GenerationError(std::string stage, std::uint64_t seed, const std::string& detail);
    [[nodiscard]] const std::string& stage() const { return stage_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }

private:
    std::string stage_;
    std::uint64_t seed_;
};

inline constexpr int kRejectionCap = 10'000;

/// AND relation: each fixed factor is constant within a row, at a per-row value.
struct RelationSpec {
    std::vector<int> fixed_factors;
    /// row_values[r][i] is the value of fixed_factors[i] in row r.
    std::array<std::vector<int>, 3> row_values;

    [[nodiscard]] bool is_fixed(int factor) const;
    void validate(const FactorSpace& space) const;
};

/// Nine panels of the completed matrix, row-major; element 8 is the solution.
using SolutionGrid = std::array<FactorAssignment, 9>;

struct RpmInstance {
    SpaceId space = SpaceId::dsprites_reasoning;
    std::uint64_t seed = 0;
    RelationSpec relation;
    std::array<FactorAssignment, 8> context;
    std::array<FactorAssignment, 6> answers;
    int correct_index = 0;
};

RelationSpec sample_relation(const FactorSpace& space, Rng& rng);

/// Fixed factors follow the row values; every other factor is resampled until
/// it is not (constant within row 1 and constant within row 2).
SolutionGrid sample_solution_grid(const FactorSpace& space, const RelationSpec& relation, Rng& rng,
                                  std::uint64_t seed = 0);

/// Five answers that break the row-3 relation, pairwise distinct and distinct
/// from the solution.
std::array<FactorAssignment, 5> sample_distractors(const FactorSpace& space, const RelationSpec& relation,
                                                   const SolutionGrid& grid, Rng& rng,
                                                   std::uint64_t seed = 0);

struct ConsistencyResult {
    bool consistent = false;
    /// Factors constant within row 1 and within row 2.
    std::vector<int> witness_factors;
};

ConsistencyResult check_consistency(const FactorSpace& space, const std::array<FactorAssignment, 8>& context,
                                    const FactorAssignment& candidate);

/// Pure function of (space, seed, strict). Strict mode regenerates until
/// exactly one answer passes check_consistency.
RpmInstance generate_instance(const FactorSpace& space, std::uint64_t seed, bool strict = false);

/// Seed of the i-th instance in a stream started from `stream_seed`.
std::uint64_t instance_seed(std::uint64_t stream_seed, std::uint64_t i);

// JSON-lines instance files.
std::string instance_to_json(const RpmInstance& inst);
RpmInstance instance_from_json(const std::string& line);
void write_instances(std::ostream& out, const std::vector<RpmInstance>& instances);
std::vector<RpmInstance> read_instances(std::istream& in);

struct RenderedInstance {
    std::array<Image, 8> context;
    std::array<Image, 6> answers;
    Image sheet;
};

RenderedInstance render_instance(const FactorSpace& space, const RpmInstance& inst);

}  // namespace avr
