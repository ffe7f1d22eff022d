#include "avr/factor_space.hpp"

#include <algorithm>
#include <array>

namespace avr {

namespace {

constexpr std::array<std::pair<SpaceId, std::string_view>, 4> kSpaceNames{{
    {SpaceId::dsprites_reasoning, "dsprites_reasoning"},
    {SpaceId::dsprites_full, "dsprites_full"},
    {SpaceId::shapes3d_reasoning, "shapes3d_reasoning"},
    {SpaceId::shapes3d_full, "shapes3d_full"},
}};

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    return v;
}

std::vector<double> every_nth(const std::vector<double>& v, int step) {
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); i += step) out.push_back(v[i]);
    return out;
}

Factor make_factor(std::string name, std::vector<double> labels) {
    const int n = static_cast<int>(labels.size());
    return Factor{std::move(name), n, std::move(labels)};
}

std::vector<double> index_labels(int n) { return linspace(0.0, n - 1.0, n); }

std::vector<Factor> dsprites_factors(bool full) {
    // Sprite scales in the source data: 6 values linearly spaced in [0.5, 1].
    const auto scales = linspace(0.5, 1.0, 6);
    const auto positions = linspace(0.0, 1.0, 32);
    std::vector<Factor> f;
    f.push_back(make_factor("shape", index_labels(3)));
    f.push_back(make_factor("scale", full ? scales : std::vector<double>{0.6, 0.8, 1.0}));
    // Reasoning positions: 4 evenly spaced interior points of [0, 1].
    const std::vector<double> coarse{0.125, 0.375, 0.625, 0.875};
    f.push_back(make_factor("pos_x", full ? positions : coarse));
    f.push_back(make_factor("pos_y", full ? positions : coarse));
    f.push_back(make_factor("bg_shade", {0.9, 0.7, 0.5, 0.3, 0.1}));
    f.push_back(make_factor("obj_color", {0.0, 60.0, 120.0, 180.0, 240.0, 300.0}));
    return f;
}

std::vector<Factor> shapes3d_factors(bool full) {
    const auto hues = linspace(0.0, 324.0, 10);  // k * 36 degrees
    const auto scales = linspace(0.75, 1.25, 8);
    const auto azimuths = linspace(-30.0, 30.0, 16);
    std::vector<Factor> f;
    f.push_back(make_factor("floor_hue", hues));
    f.push_back(make_factor("wall_hue", hues));
    f.push_back(make_factor("obj_hue", hues));
    f.push_back(make_factor("scale", full ? scales : every_nth(scales, 2)));
    f.push_back(make_factor("shape", index_labels(4)));
    f.push_back(make_factor("azimuth", full ? azimuths : every_nth(azimuths, 4)));
    return f;
}

}  // namespace

std::string_view to_string(SpaceId id) {
    for (const auto& [sid, name] : kSpaceNames)
        if (sid == id) return name;
    return "unknown";
}

SpaceId parse_space_id(std::string_view name) {
    for (const auto& [sid, n] : kSpaceNames)
        if (n == name) return sid;
    throw std::invalid_argument("unknown factor space: '" + std::string(name) + "'");
}

FactorSpace::FactorSpace(SpaceId id, std::vector<Factor> factors)
    : id_(id), factors_(std::move(factors)) {
    for (const auto& f : factors_) {
        if (f.cardinality < 2)
            throw std::invalid_argument("factor '" + f.name + "' needs cardinality >= 2");
        if (static_cast<int>(f.value_labels.size()) != f.cardinality)
            throw std::invalid_argument("factor '" + f.name + "' label count mismatch");
        size_ *= static_cast<std::uint64_t>(f.cardinality);
    }
}

std::vector<int> FactorSpace::cardinalities() const {
    std::vector<int> c;
    c.reserve(factors_.size());
    for (const auto& f : factors_) c.push_back(f.cardinality);
    return c;
}

std::size_t FactorSpace::factor_index(std::string_view name) const {
    for (std::size_t k = 0; k < factors_.size(); ++k)
        if (factors_[k].name == name) return k;
    throw std::invalid_argument("no factor named '" + std::string(name) + "' in " +
                                std::string(to_string(id_)));
}

int FactorSpace::max_cardinality() const {
    int m = 0;
    for (const auto& f : factors_) m = std::max(m, f.cardinality);
    return m;
}

bool FactorSpace::contains(const FactorAssignment& a) const {
    if (a.size() != factors_.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (a[k] < 0 || a[k] >= factors_[k].cardinality) return false;
    return true;
}

void FactorSpace::validate(const FactorAssignment& a) const {
    if (a.size() != factors_.size())
        throw std::out_of_range("assignment has " + std::to_string(a.size()) + " values, " +
                                std::string(to_string(id_)) + " has " +
                                std::to_string(factors_.size()) + " factors");
    for (std::size_t k = 0; k < a.size(); ++k)
        if (a[k] < 0 || a[k] >= factors_[k].cardinality)
            throw std::out_of_range("factor '" + factors_[k].name + "' value " +
                                    std::to_string(a[k]) + " outside [0, " +
                                    std::to_string(factors_[k].cardinality) + ")");
}

FactorSpace make_space(SpaceId id) {
    switch (id) {
        case SpaceId::dsprites_reasoning: return {id, dsprites_factors(false)};
        case SpaceId::dsprites_full: return {id, dsprites_factors(true)};
        case SpaceId::shapes3d_reasoning: return {id, shapes3d_factors(false)};
        case SpaceId::shapes3d_full: return {id, shapes3d_factors(true)};
    }
    throw std::invalid_argument("unknown factor space id");
}

FactorSpace make_space(std::string_view name) { return make_space(parse_space_id(name)); }

FactorAssignment sample_assignment(const FactorSpace& space, Rng& rng) {
    FactorAssignment a(space.num_factors());
    for (std::size_t k = 0; k < a.size(); ++k)
        a[k] = static_cast<int>(rng.uniform_index(space.cardinality(k)));
    return a;
}

std::uint64_t assignment_index(const FactorSpace& space, const FactorAssignment& a) {
    space.validate(a);
    std::uint64_t idx = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
        idx = idx * static_cast<std::uint64_t>(space.cardinality(k)) + static_cast<std::uint64_t>(a[k]);
    return idx;
}

FactorAssignment assignment_from_index(const FactorSpace& space, std::uint64_t index) {
    if (index >= space.size())
        throw std::out_of_range("flat index " + std::to_string(index) + " outside space of size " +
                                std::to_string(space.size()));
    FactorAssignment a(space.num_factors());
    for (std::size_t k = a.size(); k-- > 0;) {
        const auto c = static_cast<std::uint64_t>(space.cardinality(k));
        a[k] = static_cast<int>(index % c);
        index /= c;
    }
    return a;
}

}  // namespace avr
