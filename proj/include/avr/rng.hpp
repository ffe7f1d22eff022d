#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace avr {

/// Source of 64-bit draws. Everything stochastic in the library consumes one
/// of these, so tests can substitute scripted sources.
class Rng {
public:
    virtual ~Rng() = default;
    virtual std::uint64_t next_u64() = 0;

    /// Uniform integer in [0, n). Rejection keeps it unbiased; a source that
    /// always returns 0 yields 0.
    std::uint64_t uniform_index(std::uint64_t n);
    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
    /// Standard normal via Box-Muller (one draw pair per call, no caching).
    double normal();
    bool bernoulli(double p) { return uniform01() < p; }

    /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }
};

/// Counter-based generator: draw i of stream s is a fixed hash of
/// (seed, s, i). Identical on every platform; `split` derives independent
/// child streams for parallel workers.
class SeededRng final : public Rng {
public:
    static constexpr std::string_view kAlgorithm = "splitmix64-ctr/v1";

    explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64() override;

    [[nodiscard]] SeededRng split(std::uint64_t child_stream) const;

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::uint64_t stream() const { return stream_; }
    [[nodiscard]] std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// The splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace avr
