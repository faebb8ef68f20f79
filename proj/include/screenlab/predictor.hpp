#pragma once

// Parametric predictors p_theta(y|x) over one-hot or embedded sequences.
//
// Every backbone maps a sequence to one scalar f(x). The Bernoulli head reads f as a
// logit; the negative-binomial head reads it as log-mean and owns one extra trailing
// parameter, the global log-dispersion.
//
// Parameter layouts (row-major, in order):
//   linear: W[L*A], b
//   mlp:    W1[L*A][H], b1[H], w2[H], b2
//   conv:   E[A][e], K[k][e][C], bc[C], w[C], b     (valid convolution, tanh, mean pool)

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "screenlab/core.hpp"
#include "screenlab/negbin.hpp"
#include "screenlab/seqmodel.hpp"

namespace screenlab {

enum class ArchKind { linear, mlp, conv };
enum class Head { bernoulli, negbin };

struct Architecture {
    ArchKind kind = ArchKind::linear;
    std::size_t hidden = 32;
    std::size_t channels = 32;
    std::size_t embedding = 16;
    std::size_t kernel = 5;

    static Architecture linear() { return {}; }
    static Architecture mlp(std::size_t hidden = 32) { return {ArchKind::mlp, hidden}; }
    static Architecture conv(std::size_t channels = 32, std::size_t embedding = 16, std::size_t kernel = 5) {
        return {ArchKind::conv, 32, channels, embedding, kernel};
    }

    bool operator==(const Architecture&) const = default;
};

inline const char* arch_name(ArchKind k) {
    switch (k) {
        case ArchKind::linear: return "linear";
        case ArchKind::mlp: return "mlp";
        case ArchKind::conv: return "conv";
    }
    return "?";
}

inline const char* head_name(Head h) { return h == Head::bernoulli ? "bernoulli" : "negbin"; }

inline Head parse_head(const std::string& s) {
    if (s == "bernoulli") return Head::bernoulli;
    if (s == "negbin") return Head::negbin;
    throw error(errc::parse_error, "unknown head '" + s + "'");
}

inline ArchKind parse_arch(const std::string& s) {
    if (s == "linear") return ArchKind::linear;
    if (s == "mlp") return ArchKind::mlp;
    if (s == "conv") return ArchKind::conv;
    throw error(errc::parse_error, "unknown architecture '" + s + "'");
}

struct Batch {
    std::vector<Sequence> sequences;
    std::vector<std::int64_t> targets;
};

class Predictor {
public:
    static std::size_t backbone_size(const Architecture& a, std::size_t length, std::size_t alphabet) {
        const std::size_t onehot = length * alphabet;
        switch (a.kind) {
            case ArchKind::linear: return onehot + 1;
            case ArchKind::mlp: return onehot * a.hidden + 2 * a.hidden + 1;
            case ArchKind::conv:
                return alphabet * a.embedding + a.kernel * a.embedding * a.channels + 2 * a.channels + 1;
        }
        return 0;
    }

    static std::size_t parameter_count(const Architecture& a, Head head, std::size_t length, std::size_t alphabet) {
        return backbone_size(a, length, alphabet) + (head == Head::negbin ? 1 : 0);
    }

    Predictor(Architecture arch, Head head, std::size_t length, std::string alphabet, std::vector<double> theta)
        : arch_(arch), head_(head), length_(length), alphabet_(std::move(alphabet)), theta_(std::move(theta)) {
        if (length_ == 0 || alphabet_.empty()) {
            throw error(errc::invalid_argument, "predictor needs positive length and alphabet");
        }
        if (arch_.kind == ArchKind::conv && (arch_.kernel == 0 || arch_.kernel > length_)) {
            throw error(errc::invalid_argument, "conv kernel must fit the sequence length");
        }
        if (arch_.kind == ArchKind::mlp && arch_.hidden == 0) {
            throw error(errc::invalid_argument, "mlp needs a hidden layer");
        }
        if (arch_.kind == ArchKind::conv && (arch_.channels == 0 || arch_.embedding == 0)) {
            throw error(errc::invalid_argument, "conv needs channels and embedding");
        }
        if (theta_.size() != parameter_count(arch_, head_, length_, alphabet_.size())) {
            throw error(errc::dimension_mismatch,
                        "theta has " + std::to_string(theta_.size()) + " entries, architecture needs " +
                            std::to_string(parameter_count(arch_, head_, length_, alphabet_.size())));
        }
        for (double v : theta_) {
            if (!std::isfinite(v)) {
                throw error(errc::invalid_argument, "non-finite parameter");
            }
        }
    }

    // Weights uniform(-0.05, 0.05); biases and the log-dispersion start at 0.
    static Predictor initialized(Architecture arch, Head head, std::size_t length, std::string alphabet,
                                 std::uint64_t seed) {
        const std::size_t a = alphabet.size();
        std::vector<double> theta(parameter_count(arch, head, length, a), 0.0);
        Rng rng = make_rng(seed, 0x1417);
        auto fill = [&](std::size_t from, std::size_t count) {
            for (std::size_t i = from; i < from + count; ++i) {
                theta[i] = -0.05 + 0.1 * uniform01(rng);
            }
        };
        const std::size_t onehot = length * a;
        switch (arch.kind) {
            case ArchKind::linear: fill(0, onehot); break;
            case ArchKind::mlp:
                fill(0, onehot * arch.hidden);
                fill(onehot * arch.hidden + arch.hidden, arch.hidden);
                break;
            case ArchKind::conv: {
                const std::size_t emb = a * arch.embedding;
                const std::size_t ker = arch.kernel * arch.embedding * arch.channels;
                fill(0, emb + ker);
                fill(emb + ker + arch.channels, arch.channels);
                break;
            }
        }
        return Predictor(arch, head, length, std::move(alphabet), std::move(theta));
    }

    const Architecture& architecture() const noexcept { return arch_; }
    Head head() const noexcept { return head_; }
    std::size_t length() const noexcept { return length_; }
    const std::string& alphabet() const noexcept { return alphabet_; }
    std::size_t alphabet_size() const noexcept { return alphabet_.size(); }
    std::size_t dimension() const noexcept { return theta_.size(); }
    std::span<const double> theta() const noexcept { return theta_; }
    std::span<double> mutable_theta() noexcept { return theta_; }

    std::size_t dispersion_index() const {
        if (head_ != Head::negbin) {
            throw error(errc::wrong_head, "bernoulli head has no dispersion");
        }
        return theta_.size() - 1;
    }

    double dispersion() const { return std::exp(theta_[dispersion_index()]); }

    void check_length(const Sequence& x) const {
        if (x.size() != length_) {
            throw error(errc::length_mismatch,
                        "sequence length " + std::to_string(x.size()) + " != " + std::to_string(length_));
        }
    }

    // Backbone scalar: logit (bernoulli) or log-mean (negbin).
    double output(const Sequence& x) const {
        check_length(x);
        const std::size_t a = alphabet_.size();
        const double* t = theta_.data();
        switch (arch_.kind) {
            case ArchKind::linear: {
                double f = t[length_ * a];
                for (std::size_t pos = 0; pos < length_; ++pos) {
                    f += t[pos * a + x[pos]];
                }
                return f;
            }
            case ArchKind::mlp: {
                const std::size_t h = arch_.hidden;
                const double* b1 = t + length_ * a * h;
                const double* w2 = b1 + h;
                double f = w2[h];
                std::vector<double> z(b1, b1 + h);
                for (std::size_t pos = 0; pos < length_; ++pos) {
                    const double* row = t + (pos * a + x[pos]) * h;
                    for (std::size_t j = 0; j < h; ++j) {
                        z[j] += row[j];
                    }
                }
                for (std::size_t j = 0; j < h; ++j) {
                    f += w2[j] * std::tanh(z[j]);
                }
                return f;
            }
            case ArchKind::conv: {
                std::vector<double> act;
                return conv_forward(x, act);
            }
        }
        return 0.0;
    }

    // grad[i] += scale * d output / d theta_i.
    void accumulate_output_gradient(const Sequence& x, double scale, std::span<double> grad) const {
        check_length(x);
        const std::size_t a = alphabet_.size();
        const double* t = theta_.data();
        double* g = grad.data();
        switch (arch_.kind) {
            case ArchKind::linear: {
                g[length_ * a] += scale;
                for (std::size_t pos = 0; pos < length_; ++pos) {
                    g[pos * a + x[pos]] += scale;
                }
                return;
            }
            case ArchKind::mlp: {
                const std::size_t h = arch_.hidden;
                const std::size_t b1_off = length_ * a * h;
                const std::size_t w2_off = b1_off + h;
                const double* b1 = t + b1_off;
                const double* w2 = t + w2_off;
                std::vector<double> z(b1, b1 + h);
                for (std::size_t pos = 0; pos < length_; ++pos) {
                    const double* row = t + (pos * a + x[pos]) * h;
                    for (std::size_t j = 0; j < h; ++j) {
                        z[j] += row[j];
                    }
                }
                std::vector<double> dz(h);
                for (std::size_t j = 0; j < h; ++j) {
                    const double act = std::tanh(z[j]);
                    g[w2_off + j] += scale * act;
                    dz[j] = scale * w2[j] * (1.0 - act * act);
                    g[b1_off + j] += dz[j];
                }
                g[w2_off + h] += scale;
                for (std::size_t pos = 0; pos < length_; ++pos) {
                    double* row = g + (pos * a + x[pos]) * h;
                    for (std::size_t j = 0; j < h; ++j) {
                        row[j] += dz[j];
                    }
                }
                return;
            }
            case ArchKind::conv: {
                std::vector<double> act;
                conv_forward(x, act);
                const std::size_t e = arch_.embedding;
                const std::size_t k = arch_.kernel;
                const std::size_t c = arch_.channels;
                const std::size_t positions = length_ - k + 1;
                const std::size_t ker_off = a * e;
                const std::size_t bc_off = ker_off + k * e * c;
                const std::size_t w_off = bc_off + c;
                const std::size_t b_off = w_off + c;
                const double inv_p = 1.0 / static_cast<double>(positions);
                g[b_off] += scale;
                std::vector<double> dz(positions * c);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    double pooled = 0.0;
                    for (std::size_t p = 0; p < positions; ++p) {
                        pooled += act[p * c + ch];
                    }
                    g[w_off + ch] += scale * pooled * inv_p;
                    const double upstream = scale * t[w_off + ch] * inv_p;
                    for (std::size_t p = 0; p < positions; ++p) {
                        const double h = act[p * c + ch];
                        dz[p * c + ch] = upstream * (1.0 - h * h);
                        g[bc_off + ch] += dz[p * c + ch];
                    }
                }
                for (std::size_t p = 0; p < positions; ++p) {
                    for (std::size_t j = 0; j < k; ++j) {
                        const std::size_t tok = x[p + j];
                        const double* emb = t + tok * e;
                        double* gemb = g + tok * e;
                        for (std::size_t ei = 0; ei < e; ++ei) {
                            const double* kern = t + ker_off + (j * e + ei) * c;
                            double* gkern = g + ker_off + (j * e + ei) * c;
                            double acc = 0.0;
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                const double d = dz[p * c + ch];
                                gkern[ch] += d * emb[ei];
                                acc += d * kern[ch];
                            }
                            gemb[ei] += acc;
                        }
                    }
                }
                return;
            }
        }
    }

private:
    // Fills act[p * C + c] with tanh activations; returns the scalar output.
    double conv_forward(const Sequence& x, std::vector<double>& act) const {
        const std::size_t a = alphabet_.size();
        const std::size_t e = arch_.embedding;
        const std::size_t k = arch_.kernel;
        const std::size_t c = arch_.channels;
        const std::size_t positions = length_ - k + 1;
        const double* t = theta_.data();
        const double* ker = t + a * e;
        const double* bc = ker + k * e * c;
        const double* w = bc + c;
        const double b = w[c];
        act.assign(positions * c, 0.0);
        for (std::size_t p = 0; p < positions; ++p) {
            double* z = act.data() + p * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
                z[ch] = bc[ch];
            }
            for (std::size_t j = 0; j < k; ++j) {
                const double* emb = t + static_cast<std::size_t>(x[p + j]) * e;
                for (std::size_t ei = 0; ei < e; ++ei) {
                    const double v = emb[ei];
                    const double* kern = ker + (j * e + ei) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        z[ch] += v * kern[ch];
                    }
                }
            }
        }
        double f = b;
        const double inv_p = 1.0 / static_cast<double>(positions);
        for (std::size_t p = 0; p < positions; ++p) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double h = std::tanh(act[p * c + ch]);
                act[p * c + ch] = h;
                f += w[ch] * h * inv_p;
            }
        }
        return f;
    }

    Architecture arch_;
    Head head_;
    std::size_t length_;
    std::string alphabet_;
    std::vector<double> theta_;
};

// Probability (bernoulli) or mean count (negbin).
inline double predict(const Predictor& p, const Sequence& x) {
    const double f = p.output(x);
    return p.head() == Head::bernoulli ? sigmoid(f) : std::exp(f);
}

namespace detail {

inline void check_target(const Predictor& p, std::int64_t y) {
    if (p.head() == Head::bernoulli ? (y != 0 && y != 1) : y < 0) {
        throw error(errc::head_target_mismatch,
                    "target " + std::to_string(y) + " invalid for " + head_name(p.head()) + " head");
    }
}

inline void check_batch(const Batch& batch) {
    if (batch.sequences.size() != batch.targets.size()) {
        throw error(errc::dimension_mismatch, "batch sequences and targets differ in length");
    }
}

// log p(y | f) and its derivative in f (and in the log-dispersion for negbin).
struct ExampleTerm {
    double value;
    double d_output;
    double d_log_dispersion;
};

inline ExampleTerm example_term(Head head, double f, std::int64_t y, double log_dispersion) {
    if (head == Head::bernoulli) {
        const double s = sigmoid(f);
        const double c = clamp_prob(s);
        const bool clamped = c != s;
        const double value = y == 1 ? std::log(c) : std::log1p(-c);
        return {value, clamped ? 0.0 : static_cast<double>(y) - s, 0.0};
    }
    const double mu = std::exp(f);
    const double r = std::exp(log_dispersion);
    const auto g = negbin::log_pmf_grad(y, mu, r);
    return {negbin::log_pmf(y, mu, r), g.d_mu * mu, g.d_r * r};
}

}  // namespace detail

inline double log_likelihood(const Predictor& p, const Batch& batch) {
    detail::check_batch(batch);
    const double log_r = p.head() == Head::negbin ? p.theta()[p.dispersion_index()] : 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < batch.sequences.size(); ++i) {
        detail::check_target(p, batch.targets[i]);
        total += detail::example_term(p.head(), p.output(batch.sequences[i]), batch.targets[i], log_r).value;
    }
    return total;
}

// grad += scale * d log_likelihood / d theta; returns the log likelihood.
inline double accumulate_log_likelihood_gradient(const Predictor& p, const Batch& batch, double scale,
                                                 std::span<double> grad) {
    detail::check_batch(batch);
    if (grad.size() != p.dimension()) {
        throw error(errc::dimension_mismatch, "gradient buffer has wrong dimension");
    }
    const bool nb = p.head() == Head::negbin;
    const double log_r = nb ? p.theta()[p.dispersion_index()] : 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < batch.sequences.size(); ++i) {
        detail::check_target(p, batch.targets[i]);
        const auto term = detail::example_term(p.head(), p.output(batch.sequences[i]), batch.targets[i], log_r);
        total += term.value;
        if (term.d_output != 0.0) {
            p.accumulate_output_gradient(batch.sequences[i], scale * term.d_output, grad);
        }
        if (nb) {
            grad[p.dispersion_index()] += scale * term.d_log_dispersion;
        }
    }
    return total;
}

inline std::vector<double> gradient(const Predictor& p, const Batch& batch) {
    std::vector<double> grad(p.dimension(), 0.0);
    accumulate_log_likelihood_gradient(p, batch, 1.0, grad);
    return grad;
}

// Pr_theta(Y > tau | x) for the count head.
inline double tail_probability(const Predictor& p, const Sequence& x, std::int64_t tau) {
    if (p.head() != Head::negbin) {
        throw error(errc::wrong_head, "tail_probability needs the negbin head; use predict");
    }
    if (tau < 0) {
        throw error(errc::invalid_argument, "tau must be nonnegative");
    }
    return negbin::tail(tau, std::exp(p.output(x)), p.dispersion());
}

// Probability of the "active" event: y = 1 (bernoulli) or Y > gate (negbin).
inline double positive_probability(const Predictor& p, const Sequence& x, std::int64_t gate) {
    return p.head() == Head::bernoulli ? sigmoid(p.output(x)) : tail_probability(p, x, gate);
}

// grad += scale * d positive_probability / d theta; returns the probability.
inline double accumulate_positive_probability_gradient(const Predictor& p, const Sequence& x, std::int64_t gate,
                                                       double scale, std::span<double> grad) {
    const double f = p.output(x);
    if (p.head() == Head::bernoulli) {
        const double s = sigmoid(f);
        p.accumulate_output_gradient(x, scale * s * (1.0 - s), grad);
        return s;
    }
    const auto t = negbin::tail_with_grad(gate, std::exp(f), p.dispersion());
    p.accumulate_output_gradient(x, scale * t.d_log_mu, grad);
    grad[p.dispersion_index()] += scale * t.d_log_r;
    return t.value;
}

inline void to_json(nlohmann::json& j, const Predictor& p) {
    const auto& a = p.architecture();
    j = nlohmann::json{{"architecture",
                        {{"kind", arch_name(a.kind)},
                         {"hidden", a.hidden},
                         {"channels", a.channels},
                         {"embedding", a.embedding},
                         {"kernel", a.kernel}}},
                       {"head", head_name(p.head())},
                       {"length", p.length()},
                       {"alphabet", p.alphabet()},
                       {"theta", std::vector<double>(p.theta().begin(), p.theta().end())}};
}

inline Architecture architecture_from_json(const nlohmann::json& j) {
    Architecture a;
    a.kind = parse_arch(j.value("kind", std::string("linear")));
    a.hidden = j.value("hidden", a.hidden);
    a.channels = j.value("channels", a.channels);
    a.embedding = j.value("embedding", a.embedding);
    a.kernel = j.value("kernel", a.kernel);
    return a;
}

inline Predictor predictor_from_json(const nlohmann::json& j) {
    try {
        return Predictor(architecture_from_json(j.at("architecture")), parse_head(j.at("head").get<std::string>()),
                         j.at("length").get<std::size_t>(), j.value("alphabet", std::string(amino_acids)),
                         j.at("theta").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse_error, e.what());
    }
}

}  // namespace screenlab
