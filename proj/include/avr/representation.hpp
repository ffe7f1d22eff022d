#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "avr/factor_space.hpp"

namespace avr {

enum class SourceKind { gt_integer, gt_onehot, permuted_scaled, linear_mixed, external };

std::string_view to_string(SourceKind kind);

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what);
    [[nodiscard]] std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Paired (assignment, code) rows, keyed by flat assignment index.
class RepresentationTable {
public:
    RepresentationTable(SpaceId space, std::size_t code_dim);

    [[nodiscard]] SpaceId space() const { return space_; }
    [[nodiscard]] std::size_t code_dim() const { return code_dim_; }
    [[nodiscard]] std::size_t size() const { return assignments_.size(); }
    [[nodiscard]] const std::vector<FactorAssignment>& assignments() const { return assignments_; }
    [[nodiscard]] const std::vector<std::vector<double>>& codes() const { return codes_; }

    /// Throws on arity mismatch, out-of-range factors, or a repeated assignment.
    void add(const FactorAssignment& a, std::vector<double> code);
    [[nodiscard]] const std::vector<double>* find(std::uint64_t flat_index) const;
    [[nodiscard]] bool covers_space() const;

private:
    SpaceId space_;
    std::size_t code_dim_;
    std::vector<FactorAssignment> assignments_;
    std::vector<std::vector<double>> codes_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
};

struct SourceParams {
    double alpha = 0.0;          // linear_mixed
    std::uint64_t mix_seed = 0;  // linear_mixed: mixing matrix; permuted_scaled: permutation and scales
    std::size_t code_dim = 0;    // linear_mixed; 0 means factor count
};

/// Deterministic map from assignments to code vectors. Immutable; safe to
/// share across threads.
class RepresentationSource {
public:
    static RepresentationSource gt_integer(const FactorSpace& space);
    static RepresentationSource gt_onehot(const FactorSpace& space);
    static RepresentationSource permuted_scaled(const FactorSpace& space, std::uint64_t seed);
    static RepresentationSource linear_mixed(const FactorSpace& space, double alpha, std::uint64_t mix_seed,
                                             std::size_t code_dim = 0);
    /// Linear map with an explicit d x K matrix applied to gt_integer codes.
    static RepresentationSource linear(const FactorSpace& space, const Eigen::MatrixXd& map, double alpha,
                                       std::uint64_t mix_seed);
    static RepresentationSource external(RepresentationTable table);

    [[nodiscard]] SourceKind kind() const { return kind_; }
    [[nodiscard]] SpaceId space() const { return space_; }
    [[nodiscard]] std::size_t code_dim() const { return code_dim_; }
    [[nodiscard]] const SourceParams& params() const { return params_; }
    /// Stable descriptor, e.g. "linear_mixed(alpha=0.25,seed=7)".
    [[nodiscard]] std::string describe() const;

    [[nodiscard]] Eigen::VectorXd encode(const FactorAssignment& a) const;
    [[nodiscard]] Eigen::VectorXd encode_index(std::uint64_t flat_index) const;
    /// Writes the code of `flat_index` into `out` (length code_dim).
    void encode_into(std::uint64_t flat_index, double* out) const;

    /// Whether every assignment of the space has a code.
    [[nodiscard]] bool full_coverage() const { return full_coverage_; }
    /// Flat indices with codes when coverage is partial; empty otherwise.
    [[nodiscard]] const std::vector<std::uint64_t>& sampled_indices() const { return *sampled_; }

    /// Mixing matrix (linear_mixed only; empty otherwise).
    [[nodiscard]] const Eigen::MatrixXd& mixing() const { return mixing_; }

private:
    RepresentationSource() = default;

    SourceKind kind_ = SourceKind::gt_integer;
    SpaceId space_ = SpaceId::dsprites_reasoning;
    std::size_t code_dim_ = 0;
    SourceParams params_;
    bool full_coverage_ = true;
    std::vector<int> cardinalities_;
    // linear_mixed: d x K map applied to gt_integer codes.
    Eigen::MatrixXd mixing_;
    // permuted_scaled: code j = scale_[j] * gt_integer[perm_[j]].
    std::vector<int> perm_;
    std::vector<double> scale_;
    std::shared_ptr<const RepresentationTable> table_;
    std::shared_ptr<const std::vector<std::uint64_t>> sampled_ = std::make_shared<std::vector<std::uint64_t>>();
};

/// Fixed random orthogonal d x d matrix for `mix_seed`; deterministic. Draws
/// are rejected until (a) no eigenvalue lies within 0.2 of -1, which keeps
/// (1-a)I + aQ invertible for every a < 1, and (b) with `space` given, no
/// code dimension of the fully mixed map correlates above 0.9 with any factor.
Eigen::MatrixXd random_orthogonal(std::size_t d, std::uint64_t mix_seed, const FactorSpace* space = nullptr);

/// Rows of (1 - alpha) I + alpha Q, each renormalised to unit length.
Eigen::MatrixXd mixing_matrix(const Eigen::MatrixXd& q, double alpha);

/// Linear-mixed sources at alpha = k / (levels - 1), one shared Q.
std::vector<RepresentationSource> make_entanglement_ladder(const FactorSpace& space, int levels,
                                                           std::uint64_t mix_seed, std::size_t code_dim = 0);

/// Parses an oracle spec ("gt_integer", "gt_onehot", "permuted_scaled:seed=3",
/// "linear_mixed:alpha=0.5,seed=7[,dim=10]") or loads an external CSV path.
RepresentationSource make_source(const FactorSpace& space, const std::string& spec);

// External CSV: header f0..f{K-1},z0..z{d-1}; manifest `<stem>.manifest.json`
// holding {"space": id, "code_dim": d, "coverage": "full" | "sampled"}.
std::filesystem::path manifest_path(const std::filesystem::path& csv);
RepresentationTable load_external(const std::filesystem::path& csv, std::optional<SpaceId> space = std::nullopt);
void save_external(const RepresentationTable& table, const std::filesystem::path& csv);
/// Materialises every covered row of a source as a table.
RepresentationTable to_table(const FactorSpace& space, const RepresentationSource& src);

}  // namespace avr
