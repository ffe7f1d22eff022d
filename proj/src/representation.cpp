#include "avr/representation.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "avr/rng.hpp"

namespace avr {

namespace {
constexpr std::size_t kMaxFactors = 16;
}

std::string_view to_string(SourceKind kind) {
    switch (kind) {
        case SourceKind::gt_integer: return "gt_integer";
        case SourceKind::gt_onehot: return "gt_onehot";
        case SourceKind::permuted_scaled: return "permuted_scaled";
        case SourceKind::linear_mixed: return "linear_mixed";
        case SourceKind::external: return "external";
    }
    return "unknown";
}

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

// ---------------------------------------------------------------------------
// RepresentationTable

RepresentationTable::RepresentationTable(SpaceId space, std::size_t code_dim) : space_(space), code_dim_(code_dim) {
    if (code_dim == 0) throw std::invalid_argument("representation code_dim must be positive");
}

void RepresentationTable::add(const FactorAssignment& a, std::vector<double> code) {
    if (code.size() != code_dim_)
        throw std::invalid_argument("code has " + std::to_string(code.size()) + " entries, expected " +
                                    std::to_string(code_dim_));
    const auto flat = assignment_index(make_space(space_), a);
    if (!index_.emplace(flat, assignments_.size()).second)
        throw std::invalid_argument("duplicate assignment with flat index " + std::to_string(flat));
    assignments_.push_back(a);
    codes_.push_back(std::move(code));
}

const std::vector<double>* RepresentationTable::find(std::uint64_t flat_index) const {
    const auto it = index_.find(flat_index);
    return it == index_.end() ? nullptr : &codes_[it->second];
}

bool RepresentationTable::covers_space() const { return index_.size() == make_space(space_).size(); }

// ---------------------------------------------------------------------------
// RepresentationSource

RepresentationSource RepresentationSource::gt_integer(const FactorSpace& space) {
    if (space.num_factors() > kMaxFactors) throw std::invalid_argument("too many factors for a representation source");
    RepresentationSource s;
    s.kind_ = SourceKind::gt_integer;
    s.space_ = space.id();
    s.code_dim_ = space.num_factors();
    s.cardinalities_ = space.cardinalities();
    return s;
}

RepresentationSource RepresentationSource::gt_onehot(const FactorSpace& space) {
    RepresentationSource s = gt_integer(space);
    s.kind_ = SourceKind::gt_onehot;
    s.code_dim_ = 0;
    for (int c : s.cardinalities_) s.code_dim_ += static_cast<std::size_t>(c);
    return s;
}

RepresentationSource RepresentationSource::permuted_scaled(const FactorSpace& space, std::uint64_t seed) {
    RepresentationSource s = gt_integer(space);
    s.kind_ = SourceKind::permuted_scaled;
    s.params_.mix_seed = seed;
    SeededRng rng(seed, 0x5045524D);  // "PERM"
    for (auto p : rng.sample_without_replacement(space.num_factors(), space.num_factors()))
        s.perm_.push_back(static_cast<int>(p));
    for (std::size_t j = 0; j < space.num_factors(); ++j) {
        const double mag = rng.uniform(0.5, 2.0);
        s.scale_.push_back(rng.bernoulli(0.5) ? -mag : mag);
    }
    return s;
}

RepresentationSource RepresentationSource::linear(const FactorSpace& space, const Eigen::MatrixXd& map, double alpha,
                                                  std::uint64_t mix_seed) {
    if (map.cols() != static_cast<Eigen::Index>(space.num_factors()) || map.rows() < map.cols())
        throw std::invalid_argument("linear map must be d x K with d >= K");
    RepresentationSource s = gt_integer(space);
    s.kind_ = SourceKind::linear_mixed;
    s.code_dim_ = static_cast<std::size_t>(map.rows());
    s.params_ = {alpha, mix_seed, s.code_dim_};
    s.mixing_ = map;
    return s;
}

RepresentationSource RepresentationSource::linear_mixed(const FactorSpace& space, double alpha,
                                                        std::uint64_t mix_seed, std::size_t code_dim) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    const std::size_t d = code_dim == 0 ? space.num_factors() : code_dim;
    if (d < space.num_factors()) throw std::invalid_argument("linear_mixed code_dim must be >= factor count");
    const auto q = random_orthogonal(d, mix_seed, &space);
    const Eigen::MatrixXd m = mixing_matrix(q, alpha).leftCols(static_cast<Eigen::Index>(space.num_factors()));
    return linear(space, m, alpha, mix_seed);
}

RepresentationSource RepresentationSource::external(RepresentationTable table) {
    const auto space = make_space(table.space());
    RepresentationSource s;
    s.kind_ = SourceKind::external;
    s.space_ = table.space();
    s.code_dim_ = table.code_dim();
    s.cardinalities_ = space.cardinalities();
    s.full_coverage_ = table.covers_space();
    if (!s.full_coverage_) {
        auto idx = std::make_shared<std::vector<std::uint64_t>>();
        for (const auto& a : table.assignments()) idx->push_back(assignment_index(space, a));
        s.sampled_ = std::move(idx);
    }
    s.table_ = std::make_shared<const RepresentationTable>(std::move(table));
    return s;
}

std::string RepresentationSource::describe() const {
    std::ostringstream os;
    os << to_string(kind_);
    switch (kind_) {
        case SourceKind::permuted_scaled: os << "(seed=" << params_.mix_seed << ")"; break;
        case SourceKind::linear_mixed:
            os << "(alpha=" << params_.alpha << ",seed=" << params_.mix_seed << ",dim=" << code_dim_ << ")";
            break;
        case SourceKind::external: os << "(dim=" << code_dim_ << ",rows=" << table_->size() << ")"; break;
        default: break;
    }
    return os.str();
}

void RepresentationSource::encode_into(std::uint64_t flat_index, double* out) const {
    if (kind_ == SourceKind::external) {
        const auto* code = table_->find(flat_index);
        if (!code) throw std::out_of_range("external representation has no code for flat index " +
                                           std::to_string(flat_index));
        std::copy(code->begin(), code->end(), out);
        return;
    }
    const std::size_t k_count = cardinalities_.size();
    double gt[kMaxFactors];
    int value[kMaxFactors];
    std::uint64_t rest = flat_index;
    for (std::size_t k = k_count; k-- > 0;) {
        const auto c = static_cast<std::uint64_t>(cardinalities_[k]);
        value[k] = static_cast<int>(rest % c);
        rest /= c;
        gt[k] = static_cast<double>(value[k]) / (cardinalities_[k] - 1);
    }
    if (rest != 0) throw std::out_of_range("flat index " + std::to_string(flat_index) + " outside the space");
    switch (kind_) {
        case SourceKind::gt_integer: std::copy(gt, gt + k_count, out); break;
        case SourceKind::gt_onehot: {
            std::size_t off = 0;
            for (std::size_t k = 0; k < k_count; ++k) {
                for (int v = 0; v < cardinalities_[k]; ++v) out[off + v] = v == value[k] ? 1.0 : 0.0;
                off += static_cast<std::size_t>(cardinalities_[k]);
            }
            break;
        }
        case SourceKind::permuted_scaled:
            for (std::size_t j = 0; j < k_count; ++j) out[j] = scale_[j] * gt[perm_[j]];
            break;
        case SourceKind::linear_mixed:
            for (Eigen::Index j = 0; j < mixing_.rows(); ++j) {
                double acc = 0;
                for (std::size_t k = 0; k < k_count; ++k) acc += mixing_(j, static_cast<Eigen::Index>(k)) * gt[k];
                out[j] = acc;
            }
            break;
        case SourceKind::external: break;
    }
}

Eigen::VectorXd RepresentationSource::encode_index(std::uint64_t flat_index) const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(code_dim_));
    encode_into(flat_index, z.data());
    return z;
}

Eigen::VectorXd RepresentationSource::encode(const FactorAssignment& a) const {
    return encode_index(assignment_index(make_space(space_), a));
}

// ---------------------------------------------------------------------------
// Mixing

namespace {

// Largest |corr(code_j, factor_k)| of the map `m` applied to gt_integer codes,
// in closed form from the independent uniform factor variances.
double max_factor_correlation(const Eigen::MatrixXd& m, const FactorSpace& space) {
    Eigen::VectorXd var(static_cast<Eigen::Index>(space.num_factors()));
    for (std::size_t k = 0; k < space.num_factors(); ++k) {
        const double c = space.cardinality(k);
        var[static_cast<Eigen::Index>(k)] = (c + 1) / (12.0 * (c - 1));
    }
    double worst = 0;
    for (Eigen::Index j = 0; j < m.rows(); ++j) {
        const double total = (m.row(j).array().square() * var.transpose().array()).sum();
        if (total <= 0) continue;
        for (Eigen::Index k = 0; k < m.cols(); ++k)
            worst = std::max(worst, std::abs(m(j, k)) * std::sqrt(var[k] / total));
    }
    return worst;
}

}  // namespace

Eigen::MatrixXd random_orthogonal(std::size_t d, std::uint64_t mix_seed, const FactorSpace* space) {
    const auto n = static_cast<Eigen::Index>(d);
    for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
        SeededRng rng(mix_seed, 0x4D4958 + attempt);  // "MIX"
        Eigen::MatrixXd g(n, n);
        for (Eigen::Index c = 0; c < n; ++c)
            for (Eigen::Index r = 0; r < n; ++r) g(r, c) = rng.normal();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd q = qr.householderQ();
        const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
        for (Eigen::Index i = 0; i < n; ++i)
            if (r(i, i) < 0) q.col(i) *= -1.0;

        const Eigen::VectorXcd eig = Eigen::EigenSolver<Eigen::MatrixXd>(q, false).eigenvalues();
        bool near_minus_one = false;
        for (Eigen::Index i = 0; i < eig.size(); ++i)
            near_minus_one = near_minus_one || std::abs(eig[i] + 1.0) < 0.2;
        if (near_minus_one) continue;
        if (space) {
            const auto k = static_cast<Eigen::Index>(space->num_factors());
            if (max_factor_correlation(mixing_matrix(q, 1.0).leftCols(k), *space) > 0.9) continue;
        }
        return q;
    }
    throw std::runtime_error("no admissible mixing matrix for seed " + std::to_string(mix_seed));
}

Eigen::MatrixXd mixing_matrix(const Eigen::MatrixXd& q, double alpha) {
    Eigen::MatrixXd m = (1.0 - alpha) * Eigen::MatrixXd::Identity(q.rows(), q.cols()) + alpha * q;
    for (Eigen::Index j = 0; j < m.rows(); ++j) m.row(j).normalize();
    return m;
}

std::vector<RepresentationSource> make_entanglement_ladder(const FactorSpace& space, int levels,
                                                           std::uint64_t mix_seed, std::size_t code_dim) {
    if (levels < 2) throw std::invalid_argument("entanglement ladder needs at least 2 levels");
    std::vector<RepresentationSource> out;
    for (int k = 0; k < levels; ++k)
        out.push_back(RepresentationSource::linear_mixed(space, static_cast<double>(k) / (levels - 1), mix_seed,
                                                         code_dim));
    return out;
}

// ---------------------------------------------------------------------------
// Spec parsing and external files

namespace {

std::unordered_map<std::string, std::string> parse_kv(const std::string& s) {
    std::unordered_map<std::string, std::string> kv;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("expected key=value in '" + item + "'");
        kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return kv;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

RepresentationSource make_source(const FactorSpace& space, const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const auto kv = colon == std::string::npos ? std::unordered_map<std::string, std::string>{}
                                               : parse_kv(spec.substr(colon + 1));
    auto get = [&](const char* key, const std::string& def) {
        const auto it = kv.find(key);
        return it == kv.end() ? def : it->second;
    };
    if (kind == "gt_integer") return RepresentationSource::gt_integer(space);
    if (kind == "gt_onehot") return RepresentationSource::gt_onehot(space);
    if (kind == "permuted_scaled") return RepresentationSource::permuted_scaled(space, std::stoull(get("seed", "0")));
    if (kind == "linear_mixed")
        return RepresentationSource::linear_mixed(space, std::stod(get("alpha", "0")), std::stoull(get("seed", "0")),
                                                  std::stoul(get("dim", "0")));
    if (std::filesystem::exists(spec)) {
        auto table = load_external(spec, space.id());
        return RepresentationSource::external(std::move(table));
    }
    throw std::invalid_argument("unknown representation spec '" + spec + "'");
}

std::filesystem::path manifest_path(const std::filesystem::path& csv) {
    auto p = csv;
    p.replace_extension(".manifest.json");
    return p;
}

RepresentationTable load_external(const std::filesystem::path& csv, std::optional<SpaceId> space_override) {
    std::optional<SpaceId> space_id = space_override;
    std::optional<std::size_t> manifest_dim;
    bool declared_full = false;
    if (const auto mp = manifest_path(csv); std::filesystem::exists(mp)) {
        std::ifstream mf(mp);
        const auto j = nlohmann::json::parse(mf);
        const auto sid = parse_space_id(j.at("space").get<std::string>());
        if (space_id && *space_id != sid)
            throw std::invalid_argument("manifest space " + std::string(to_string(sid)) + " does not match " +
                                        std::string(to_string(*space_id)));
        space_id = sid;
        manifest_dim = j.at("code_dim").get<std::size_t>();
        declared_full = j.value("coverage", std::string("full")) == "full";
    }
    if (!space_id) throw std::invalid_argument("no manifest next to " + csv.string() + " and no space given");
    const auto space = make_space(*space_id);
    const std::size_t k_count = space.num_factors();

    std::ifstream in(csv);
    if (!in) throw std::runtime_error("cannot open " + csv.string());
    std::string line;
    if (!std::getline(in, line) || line.empty()) throw ParseError(1, "empty file, expected a header");
    const auto header = split_csv(line);
    if (header.size() <= k_count) throw ParseError(1, "header needs " + std::to_string(k_count) + " factor columns and at least one code column");
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto expect = i < k_count ? "f" + std::to_string(i) : "z" + std::to_string(i - k_count);
        if (header[i] != expect) throw ParseError(1, "header column " + std::to_string(i) + " is '" + header[i] + "', expected '" + expect + "'");
    }
    const std::size_t dim = header.size() - k_count;
    if (manifest_dim && *manifest_dim != dim)
        throw ParseError(1, "header has " + std::to_string(dim) + " code columns, manifest says " +
                                std::to_string(*manifest_dim));

    RepresentationTable table(*space_id, dim);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw ParseError(lineno, "expected " + std::to_string(header.size()) + " columns, got " +
                                         std::to_string(cells.size()));
        FactorAssignment a(k_count);
        std::vector<double> z(dim);
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const char* b = cells[i].data();
            const char* e = b + cells[i].size();
            std::from_chars_result r{};
            if (i < k_count)
                r = std::from_chars(b, e, a[i]);
            else
                r = std::from_chars(b, e, z[i - k_count]);
            if (r.ec != std::errc() || r.ptr != e) throw ParseError(lineno, "bad number '" + cells[i] + "'");
        }
        for (std::size_t k = 0; k < k_count; ++k)
            if (a[k] < 0 || a[k] >= space.cardinality(k))
                throw ParseError(lineno, "factor '" + space.factor(k).name + "' value " + std::to_string(a[k]) +
                                             " out of range");
        try {
            table.add(a, std::move(z));
        } catch (const std::exception& e) {
            throw ParseError(lineno, e.what());
        }
    }
    if (declared_full && !table.covers_space())
        throw ParseError(lineno, "manifest declares full coverage but only " + std::to_string(table.size()) + " of " +
                                     std::to_string(space.size()) + " assignments are present");
    return table;
}

void save_external(const RepresentationTable& table, const std::filesystem::path& csv) {
    const auto space = make_space(table.space());
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + csv.string() + " for writing");
    for (std::size_t k = 0; k < space.num_factors(); ++k) out << (k ? "," : "") << 'f' << k;
    for (std::size_t j = 0; j < table.code_dim(); ++j) out << ",z" << j;
    out << '\n';
    for (std::size_t r = 0; r < table.size(); ++r) {
        for (std::size_t k = 0; k < space.num_factors(); ++k) out << (k ? "," : "") << table.assignments()[r][k];
        for (double v : table.codes()[r]) out << ',' << format_double(v);
        out << '\n';
    }
    nlohmann::ordered_json m;
    m["space"] = std::string(to_string(table.space()));
    m["code_dim"] = table.code_dim();
    m["coverage"] = table.covers_space() ? "full" : "sampled";
    std::ofstream mf(manifest_path(csv), std::ios::binary);
    mf << m.dump() << '\n';
}

RepresentationTable to_table(const FactorSpace& space, const RepresentationSource& src) {
    RepresentationTable table(space.id(), src.code_dim());
    std::vector<double> z(src.code_dim());
    auto emit = [&](std::uint64_t flat) {
        src.encode_into(flat, z.data());
        table.add(assignment_from_index(space, flat), z);
    };
    if (src.full_coverage())
        for (std::uint64_t i = 0; i < space.size(); ++i) emit(i);
    else
        for (auto i : src.sampled_indices()) emit(i);
    return table;
}

}  // namespace avr
