#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "avr/rng.hpp"

namespace avr {

enum class SpaceId { dsprites_reasoning, dsprites_full, shapes3d_reasoning, shapes3d_full };

std::string_view to_string(SpaceId id);
/// Throws std::invalid_argument naming the offending identifier.
SpaceId parse_space_id(std::string_view name);

struct Factor {
    std::string name;
    int cardinality = 0;
    /// Render parameter for each value index; size equals cardinality.
    std::vector<double> value_labels;
};

using FactorAssignment = std::vector<int>;

class FactorSpace {
public:
    FactorSpace(SpaceId id, std::vector<Factor> factors);

    [[nodiscard]] SpaceId id() const { return id_; }
    [[nodiscard]] bool is_dsprites() const {
        return id_ == SpaceId::dsprites_reasoning || id_ == SpaceId::dsprites_full;
    }
    [[nodiscard]] std::size_t num_factors() const { return factors_.size(); }
    [[nodiscard]] const std::vector<Factor>& factors() const { return factors_; }
    [[nodiscard]] const Factor& factor(std::size_t k) const { return factors_.at(k); }
    [[nodiscard]] int cardinality(std::size_t k) const { return factors_[k].cardinality; }
    [[nodiscard]] std::vector<int> cardinalities() const;
    /// Index of the factor with the given name; throws if absent.
    [[nodiscard]] std::size_t factor_index(std::string_view name) const;
    [[nodiscard]] std::uint64_t size() const { return size_; }
    [[nodiscard]] int max_cardinality() const;

    /// True when the assignment has the right arity and every value is in range.
    [[nodiscard]] bool contains(const FactorAssignment& a) const;
    /// Throws std::out_of_range naming the first offending factor.
    void validate(const FactorAssignment& a) const;

private:
    SpaceId id_;
    std::vector<Factor> factors_;
    std::uint64_t size_ = 1;
};

FactorSpace make_space(SpaceId id);
FactorSpace make_space(std::string_view name);

/// Each coordinate independently uniform over its cardinality.
FactorAssignment sample_assignment(const FactorSpace& space, Rng& rng);

/// Mixed-radix flat index, row-major in factor order (last factor fastest).
std::uint64_t assignment_index(const FactorSpace& space, const FactorAssignment& a);
FactorAssignment assignment_from_index(const FactorSpace& space, std::uint64_t index);

}  // namespace avr
