#pragma once

// Synthetic ground truth p(y|x): positional motifs set a strength s(x), counts are
// negative binomial around s(x), and the label is count > threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "screenlab/core.hpp"
#include "screenlab/negbin.hpp"
#include "screenlab/seqmodel.hpp"

namespace screenlab {

struct MotifRule {
    std::size_t position = 0;
    std::vector<std::string> patterns;
    double multiplier = 10.0;

    std::size_t pattern_length() const { return patterns.empty() ? 0 : patterns.front().size(); }
};

class ActivityOracle {
public:
    ActivityOracle(std::vector<MotifRule> rules, double base_strength = 1.0, double dispersion = 2.28,
                   std::int64_t threshold = 30, std::string alphabet = std::string(amino_acids))
        : rules_(std::move(rules)),
          base_strength_(base_strength),
          dispersion_(dispersion),
          threshold_(threshold),
          alphabet_(std::move(alphabet)) {
        if (!(base_strength_ > 0.0)) {
            throw error(errc::invalid_argument, "base strength must be positive");
        }
        if (!(dispersion_ > 0.0)) {
            throw error(errc::invalid_argument, "dispersion must be positive");
        }
        if (threshold_ < 0) {
            throw error(errc::invalid_argument, "threshold must be nonnegative");
        }
        for (const auto& rule : rules_) {
            if (!(rule.multiplier > 0.0)) {
                throw error(errc::invalid_argument, "rule multipliers must be positive");
            }
            if (rule.patterns.empty() || rule.pattern_length() == 0) {
                throw error(errc::invalid_argument, "rule needs at least one nonempty pattern");
            }
            std::vector<std::vector<Token>> compiled;
            for (const auto& p : rule.patterns) {
                if (p.size() != rule.pattern_length()) {
                    throw error(errc::invalid_argument, "patterns within a rule must share one length");
                }
                std::vector<Token> tokens;
                for (char c : p) {
                    const auto idx = alphabet_.find(c);
                    if (idx == std::string::npos) {
                        throw error(errc::parse_error, std::string("pattern token '") + c + "' not in alphabet");
                    }
                    tokens.push_back(static_cast<Token>(idx));
                }
                compiled.push_back(std::move(tokens));
            }
            compiled_.push_back(std::move(compiled));
        }
    }

    // Three positional rules, each a x10 multiplier; see defaults in data/default_oracle.json.
    static ActivityOracle defaults() {
        return ActivityOracle({
            MotifRule{3, {"P", "C"}, 10.0},
            MotifRule{5, {"N", "C"}, 10.0},
            MotifRule{6, {"PC", "SS"}, 10.0},
        });
    }

    const std::vector<MotifRule>& rules() const noexcept { return rules_; }
    double base_strength() const noexcept { return base_strength_; }
    double dispersion() const noexcept { return dispersion_; }
    std::int64_t threshold() const noexcept { return threshold_; }
    const std::string& alphabet() const noexcept { return alphabet_; }

    // Minimum sequence length that all rules fit into.
    std::size_t span() const {
        std::size_t out = 0;
        for (const auto& r : rules_) {
            out = std::max(out, r.position + r.pattern_length());
        }
        return out;
    }

    bool rule_matches(std::size_t i, const Sequence& x) const {
        const auto& rule = rules_[i];
        if (rule.position + rule.pattern_length() > x.size()) {
            throw error(errc::rule_out_of_range, "rule at position " + std::to_string(rule.position) +
                                                     " exceeds sequence length " + std::to_string(x.size()));
        }
        for (const auto& pattern : compiled_[i]) {
            if (std::equal(pattern.begin(), pattern.end(),
                           x.tokens.begin() + static_cast<std::ptrdiff_t>(rule.position))) {
                return true;
            }
        }
        return false;
    }

    double strength(const Sequence& x) const {
        double s = base_strength_;
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            if (rule_matches(i, x)) {
                s *= rules_[i].multiplier;
            }
        }
        return s;
    }

    // Pr(count > threshold | x), exact.
    double positive_probability(const Sequence& x) const {
        return negbin::tail(threshold_, strength(x), dispersion_);
    }

    std::int64_t sample_count(const Sequence& x, Rng& rng) const {
        return negbin::sample(strength(x), dispersion_, rng);
    }

private:
    std::vector<MotifRule> rules_;
    std::vector<std::vector<std::vector<Token>>> compiled_;
    double base_strength_;
    double dispersion_;
    std::int64_t threshold_;
    std::string alphabet_;
};

inline double strength(const ActivityOracle& oracle, const Sequence& x) { return oracle.strength(x); }

inline std::int64_t sample_count(const ActivityOracle& oracle, const Sequence& x, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0xc0de);
    return oracle.sample_count(x, rng);
}

inline int label(std::int64_t count, std::int64_t threshold) { return count > threshold ? 1 : 0; }

// Monte Carlo p(y=1) = E_p(x)[Pr(c(X) > tau)] with exact per-x tails.
inline double hit_rate(const ActivityOracle& oracle, const SequenceDistribution& dist, std::size_t samples,
                       std::uint64_t seed) {
    if (samples == 0) {
        throw error(errc::invalid_argument, "hit_rate needs M >= 1");
    }
    Rng rng = make_rng(seed, 0x417);
    std::map<double, double> tails;
    Sequence x;
    double total = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        dist.sample_into(rng, x);
        const double s = oracle.strength(x);
        auto it = tails.find(s);
        if (it == tails.end()) {
            it = tails.emplace(s, negbin::tail(oracle.threshold(), s, oracle.dispersion())).first;
        }
        total += it->second;
    }
    return total / static_cast<double>(samples);
}

// Exact p(y=1) by enumerating the positions the rules read; other positions are irrelevant.
inline double exact_hit_rate(const ActivityOracle& oracle, const SequenceDistribution& dist) {
    if (oracle.span() > dist.length()) {
        throw error(errc::rule_out_of_range, "oracle rules exceed library length");
    }
    std::set<std::size_t> touched_set;
    for (const auto& r : oracle.rules()) {
        for (std::size_t k = 0; k < r.pattern_length(); ++k) {
            touched_set.insert(r.position + k);
        }
    }
    const std::vector<std::size_t> touched(touched_set.begin(), touched_set.end());
    const double states = std::pow(static_cast<double>(dist.alphabet_size()), static_cast<double>(touched.size()));
    if (states > 5e7) {
        throw error(errc::invalid_argument, "too many motif positions for exact enumeration");
    }
    std::map<double, double> tails;
    Sequence x;
    x.tokens.assign(dist.length(), 0);
    double total = 0.0;
    auto recurse = [&](auto&& self, std::size_t depth, double weight) -> void {
        if (weight == 0.0) {
            return;
        }
        if (depth == touched.size()) {
            const double s = oracle.strength(x);
            auto it = tails.find(s);
            if (it == tails.end()) {
                it = tails.emplace(s, negbin::tail(oracle.threshold(), s, oracle.dispersion())).first;
            }
            total += weight * it->second;
            return;
        }
        const std::size_t pos = touched[depth];
        for (std::size_t a = 0; a < dist.alphabet_size(); ++a) {
            x.tokens[pos] = static_cast<Token>(a);
            self(self, depth + 1, weight * dist.prob(pos, static_cast<Token>(a)));
        }
    };
    recurse(recurse, 0, 1.0);
    return total;
}

// Reweights every motif token at the positions the rules read by a common factor,
// choosing the factor by bisection so the exact hit rate equals `target`.
inline SequenceDistribution calibrate_library(const ActivityOracle& oracle, const SequenceDistribution& base,
                                              double target) {
    if (!(target > 0.0 && target < 1.0)) {
        throw error(errc::domain_error, "target hit rate must lie in (0, 1)");
    }
    const std::size_t a = base.alphabet_size();
    std::vector<char> is_motif(base.length() * a, 0);
    for (const auto& r : oracle.rules()) {
        for (const auto& p : r.patterns) {
            for (std::size_t k = 0; k < p.size(); ++k) {
                const auto idx = base.alphabet().find(p[k]);
                if (idx == std::string::npos || r.position + k >= base.length()) {
                    throw error(errc::rule_out_of_range, "rule does not fit the library");
                }
                is_motif[(r.position + k) * a + idx] = 1;
            }
        }
    }
    auto tilted = [&](double log_w) {
        std::vector<double> probs = base.probs();
        for (std::size_t pos = 0; pos < base.length(); ++pos) {
            double total = 0.0;
            for (std::size_t k = 0; k < a; ++k) {
                if (is_motif[pos * a + k]) {
                    probs[pos * a + k] *= std::exp(log_w);
                }
                total += probs[pos * a + k];
            }
            for (std::size_t k = 0; k < a; ++k) {
                probs[pos * a + k] /= total;
            }
        }
        return SequenceDistribution(base.alphabet(), base.length(), std::move(probs));
    };
    double lo = -6.0;
    double hi = 6.0;
    if (exact_hit_rate(oracle, tilted(lo)) > target || exact_hit_rate(oracle, tilted(hi)) < target) {
        throw error(errc::domain_error, "target hit rate not reachable by motif reweighting");
    }
    for (int iter = 0; iter < 100 && hi - lo > 1e-12; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (exact_hit_rate(oracle, tilted(mid)) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return tilted(0.5 * (lo + hi));
}

inline constexpr double default_hit_rate = 0.015;
inline constexpr std::size_t default_length = 12;

// Uniform 12-mer background with motif residues reweighted to a 1.5% hit rate.
inline const SequenceDistribution& default_library() {
    static const SequenceDistribution library = calibrate_library(
        ActivityOracle::defaults(), SequenceDistribution::uniform(default_length), default_hit_rate);
    return library;
}

inline void to_json(nlohmann::json& j, const ActivityOracle& o) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : o.rules()) {
        rules.push_back({{"position", r.position}, {"patterns", r.patterns}, {"multiplier", r.multiplier}});
    }
    j = nlohmann::json{{"alphabet", o.alphabet()},         {"base_strength", o.base_strength()},
                       {"dispersion", o.dispersion()},     {"threshold", o.threshold()},
                       {"rules", rules}};
}

inline ActivityOracle oracle_from_json(const nlohmann::json& j) {
    try {
        std::vector<MotifRule> rules;
        for (const auto& r : j.at("rules")) {
            rules.push_back(MotifRule{r.at("position").get<std::size_t>(),
                                      r.at("patterns").get<std::vector<std::string>>(),
                                      r.value("multiplier", 10.0)});
        }
        return ActivityOracle(std::move(rules), j.value("base_strength", 1.0), j.value("dispersion", 2.28),
                              j.value("threshold", std::int64_t{30}),
                              j.value("alphabet", std::string(amino_acids)));
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse_error, e.what());
    }
}

}  // namespace screenlab
