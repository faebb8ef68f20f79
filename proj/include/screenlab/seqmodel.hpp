#pragma once

// Position-specific categorical library model p(x) over fixed-length token strings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "screenlab/core.hpp"

namespace screenlab {

inline constexpr std::string_view amino_acids = "ACDEFGHIKLMNPQRSTVWY";

// Log probability with an explicit "impossible" state instead of -inf.
class LogProb {
public:
    explicit LogProb(double nats) : value_(nats), impossible_(false) {}

    static LogProb impossible() { return LogProb(); }

    bool is_impossible() const noexcept { return impossible_; }

    double value() const {
        if (impossible_) {
            throw error(errc::domain_error, "log probability of an impossible sequence");
        }
        return value_;
    }

    bool operator==(const LogProb&) const = default;

private:
    LogProb() : value_(0.0), impossible_(true) {}

    double value_;
    bool impossible_;
};

class SequenceDistribution {
public:
    SequenceDistribution(std::string alphabet, std::size_t length, std::vector<double> probs)
        : alphabet_(std::move(alphabet)), length_(length), probs_(std::move(probs)) {
        if (alphabet_.empty() || alphabet_.size() > 256) {
            throw error(errc::invalid_argument, "alphabet must hold 1..256 tokens");
        }
        if (length_ == 0) {
            throw error(errc::invalid_argument, "sequence length must be positive");
        }
        if (probs_.size() != length_ * alphabet_.size()) {
            throw error(errc::dimension_mismatch, "probs must be length x alphabet");
        }
        for (std::size_t pos = 0; pos < length_; ++pos) {
            double total = 0.0;
            for (double p : row(pos)) {
                if (!(p >= 0.0) || !std::isfinite(p)) {
                    throw error(errc::invalid_argument, "negative or non-finite probability");
                }
                total += p;
            }
            if (std::abs(total - 1.0) > 1e-9) {
                throw error(errc::invalid_argument,
                            "row " + std::to_string(pos) + " sums to " + std::to_string(total));
            }
        }
        build_cumulative();
    }

    static SequenceDistribution uniform(std::size_t length,
                                        std::string alphabet = std::string(amino_acids)) {
        const std::size_t a = alphabet.size();
        return {std::move(alphabet), length, std::vector<double>(length * a, 1.0 / static_cast<double>(a))};
    }

    const std::string& alphabet() const noexcept { return alphabet_; }
    std::size_t length() const noexcept { return length_; }
    std::size_t alphabet_size() const noexcept { return alphabet_.size(); }
    const std::vector<double>& probs() const noexcept { return probs_; }

    std::span<const double> row(std::size_t pos) const {
        return {probs_.data() + pos * alphabet_.size(), alphabet_.size()};
    }

    double prob(std::size_t pos, Token token) const { return probs_[pos * alphabet_.size() + token]; }

    Token sample_token(std::size_t pos, Rng& rng) const {
        const double u = uniform01(rng);
        const auto first = cumulative_.begin() + static_cast<std::ptrdiff_t>(pos * alphabet_.size());
        const auto last = first + static_cast<std::ptrdiff_t>(alphabet_.size());
        auto it = std::upper_bound(first, last, u);
        if (it == last) {
            return last_positive_[pos];
        }
        return static_cast<Token>(it - first);
    }

    void sample_into(Rng& rng, Sequence& out) const {
        out.tokens.resize(length_);
        for (std::size_t pos = 0; pos < length_; ++pos) {
            out.tokens[pos] = sample_token(pos, rng);
        }
    }

    Sequence encode(std::string_view text) const {
        Sequence s;
        s.tokens.reserve(text.size());
        for (char c : text) {
            const auto idx = alphabet_.find(c);
            if (idx == std::string::npos) {
                throw error(errc::parse_error, std::string("token '") + c + "' not in alphabet");
            }
            s.tokens.push_back(static_cast<Token>(idx));
        }
        return s;
    }

    std::string decode(const Sequence& s) const {
        std::string text;
        text.reserve(s.size());
        for (Token t : s.tokens) {
            text.push_back(alphabet_.at(t));
        }
        return text;
    }

private:
    void build_cumulative() {
        const std::size_t a = alphabet_.size();
        cumulative_.resize(probs_.size());
        last_positive_.assign(length_, 0);
        for (std::size_t pos = 0; pos < length_; ++pos) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a; ++k) {
                acc += probs_[pos * a + k];
                cumulative_[pos * a + k] = acc;
                if (probs_[pos * a + k] > 0.0) {
                    last_positive_[pos] = static_cast<Token>(k);
                }
            }
        }
    }

    std::string alphabet_;
    std::size_t length_;
    std::vector<double> probs_;
    std::vector<double> cumulative_;
    std::vector<Token> last_positive_;
};

inline std::vector<Sequence> sample_sequences(const SequenceDistribution& dist, std::size_t count,
                                              std::uint64_t seed) {
    if (count == 0) {
        throw error(errc::invalid_argument, "count must be >= 1");
    }
    Rng rng = make_rng(seed, 0x5e9);
    std::vector<Sequence> out(count);
    for (auto& s : out) {
        dist.sample_into(rng, s);
    }
    return out;
}

inline LogProb log_prob(const SequenceDistribution& dist, const Sequence& x) {
    if (x.size() != dist.length()) {
        throw error(errc::length_mismatch, "sequence length " + std::to_string(x.size()) +
                                               " != " + std::to_string(dist.length()));
    }
    double total = 0.0;
    for (std::size_t pos = 0; pos < x.size(); ++pos) {
        if (x[pos] >= dist.alphabet_size()) {
            throw error(errc::invalid_argument, "token index out of alphabet");
        }
        const double p = dist.prob(pos, x[pos]);
        if (p <= 0.0) {
            return LogProb::impossible();
        }
        total += std::log(p);
    }
    return LogProb(total);
}

inline SequenceDistribution fit_pwm(std::span<const Sequence> samples, double pseudocount,
                                    std::string alphabet = std::string(amino_acids)) {
    if (samples.empty()) {
        throw error(errc::empty_input, "fit_pwm needs at least one sample");
    }
    if (pseudocount < 0.0) {
        throw error(errc::invalid_argument, "pseudocount must be nonnegative");
    }
    const std::size_t length = samples.front().size();
    const std::size_t a = alphabet.size();
    std::vector<double> counts(length * a, 0.0);
    for (const auto& s : samples) {
        if (s.size() != length) {
            throw error(errc::ragged_lengths, "samples do not share one length");
        }
        for (std::size_t pos = 0; pos < length; ++pos) {
            if (s[pos] >= a) {
                throw error(errc::invalid_argument, "token index out of alphabet");
            }
            counts[pos * a + s[pos]] += 1.0;
        }
    }
    const double denom = static_cast<double>(samples.size()) + pseudocount * static_cast<double>(a);
    for (double& c : counts) {
        c = (c + pseudocount) / denom;
    }
    return {std::move(alphabet), length, std::move(counts)};
}

inline void to_json(nlohmann::json& j, const SequenceDistribution& d) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t pos = 0; pos < d.length(); ++pos) {
        const auto r = d.row(pos);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    j = nlohmann::json{{"alphabet", d.alphabet()}, {"length", d.length()}, {"probs", rows}};
}

inline SequenceDistribution distribution_from_json(const nlohmann::json& j) {
    try {
        const auto alphabet = j.at("alphabet").get<std::string>();
        const auto length = j.at("length").get<std::size_t>();
        std::vector<double> flat;
        const auto& rows = j.at("probs");
        if (!rows.is_array() || rows.size() != length) {
            throw error(errc::parse_error, "probs must have `length` rows");
        }
        for (const auto& r : rows) {
            const auto v = r.get<std::vector<double>>();
            if (v.size() != alphabet.size()) {
                throw error(errc::parse_error, "probs row width must equal alphabet size");
            }
            flat.insert(flat.end(), v.begin(), v.end());
        }
        return {alphabet, length, std::move(flat)};
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse_error, e.what());
    }
}

}  // namespace screenlab
