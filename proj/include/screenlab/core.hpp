#pragma once

// Shared vocabulary: error type, sequences, seeding and small numeric helpers.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace screenlab {

enum class errc {
    invalid_argument,
    length_mismatch,
    empty_input,
    ragged_lengths,
    rule_out_of_range,
    insufficient_positives,
    insufficient_negatives,
    degenerate_split,
    head_target_mismatch,
    wrong_head,
    empty_samples,
    non_finite_loss,
    empty_positives,
    too_few_active_samples,
    dimension_mismatch,
    domain_error,
    singular_precision,
    grid_too_coarse,
    optimization_failure,
    parse_error,
    io_error,
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::invalid_argument: return "InvalidArgument";
        case errc::length_mismatch: return "LengthMismatch";
        case errc::empty_input: return "EmptyInput";
        case errc::ragged_lengths: return "RaggedLengths";
        case errc::rule_out_of_range: return "RuleOutOfRange";
        case errc::insufficient_positives: return "InsufficientPositives";
        case errc::insufficient_negatives: return "InsufficientNegatives";
        case errc::degenerate_split: return "DegenerateSplit";
        case errc::head_target_mismatch: return "HeadTargetMismatch";
        case errc::wrong_head: return "WrongHead";
        case errc::empty_samples: return "EmptySamples";
        case errc::non_finite_loss: return "NonFiniteLoss";
        case errc::empty_positives: return "EmptyPositives";
        case errc::too_few_active_samples: return "TooFewActiveSamples";
        case errc::dimension_mismatch: return "DimensionMismatch";
        case errc::domain_error: return "DomainError";
        case errc::singular_precision: return "SingularPrecision";
        case errc::grid_too_coarse: return "GridTooCoarse";
        case errc::optimization_failure: return "OptimizationFailure";
        case errc::parse_error: return "ParseError";
        case errc::io_error: return "IoError";
    }
    return "Unknown";
}

class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

using Token = std::uint8_t;

// A fixed-length token string; tokens index into an alphabet.
struct Sequence {
    std::vector<Token> tokens;

    std::size_t size() const noexcept { return tokens.size(); }
    Token operator[](std::size_t i) const { return tokens[i]; }
    bool operator==(const Sequence&) const = default;
};

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(derive_seed(seed, stream));
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection (no modulo bias).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return r % n;
}

// Integer allocation of n * q; ties go to the even neighbour.
inline std::size_t allocate_positives(std::size_t n, double q) {
    return static_cast<std::size_t>(std::nearbyint(static_cast<double>(n) * q));
}

inline double sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow.
inline double log_sigmoid(double z) {
    return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline constexpr double prob_floor = 1e-12;

inline double clamp_prob(double p) {
    return p < prob_floor ? prob_floor : (p > 1.0 - prob_floor ? 1.0 - prob_floor : p);
}

}  // namespace screenlab
