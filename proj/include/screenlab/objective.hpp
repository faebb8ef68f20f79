#pragma once

// Training objectives: cross-entropy on measured pairs, and the library-marginal
// objective that adds the likelihood of the y-only pool cells, with the marginal
// p_theta(y) estimated by Monte Carlo over fresh library samples every step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "screenlab/core.hpp"
#include "screenlab/format.hpp"
#include "screenlab/predictor.hpp"
#include "screenlab/screen.hpp"
#include "screenlab/seqmodel.hpp"

namespace screenlab {

enum class Objective { cross_entropy, leavs };
enum class Optimizer { sgd, adam };

inline Objective parse_objective(const std::string& s) {
    if (s == "xy" || s == "cross-entropy" || s == "cross_entropy") return Objective::cross_entropy;
    if (s == "leavs") return Objective::leavs;
    throw error(errc::parse_error, "unknown objective '" + s + "' (expected xy or leavs)");
}

inline const char* objective_name(Objective o) { return o == Objective::leavs ? "leavs" : "xy"; }

struct TrainConfig {
    Objective objective = Objective::leavs;
    std::size_t library_samples = 1024;  // M
    std::size_t batch_size = 128;
    std::size_t epochs = 1000;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Weight of the per-cell pool loss relative to the per-example measured loss.
    // Unset means (N - n) / n, which makes the sum proportional to the full data likelihood.
    std::optional<double> pool_weight;
    std::int64_t sort_gate = 0;  // count head only: "active" means Y > sort_gate
    std::uint64_t seed = 1;

    void validate() const {
        if (objective == Objective::leavs && library_samples == 0) {
            throw error(errc::invalid_argument, "leavs needs M >= 1 library samples");
        }
        if (!(learning_rate > 0.0)) {
            throw error(errc::invalid_argument, "learning rate must be positive");
        }
        if (batch_size == 0) {
            throw error(errc::invalid_argument, "batch size must be positive");
        }
        if (pool_weight && !(*pool_weight >= 0.0)) {
            throw error(errc::invalid_argument, "pool weight must be nonnegative");
        }
    }
};

inline double loss_xy(const Predictor& p, const Batch& batch) {
    if (batch.sequences.empty()) {
        return 0.0;
    }
    return -log_likelihood(p, batch) / static_cast<double>(batch.sequences.size());
}

inline double marginal_positive_rate(const Predictor& p, std::span<const Sequence> library_samples,
                                     std::int64_t gate = 0) {
    if (library_samples.empty()) {
        throw error(errc::empty_samples, "marginal_positive_rate needs M >= 1 library samples");
    }
    double total = 0.0;
    for (const auto& x : library_samples) {
        total += positive_probability(p, x, gate);
    }
    return total / static_cast<double>(library_samples.size());
}

// Negative mean log marginal likelihood of the unmeasured pool cells, given m_hat.
inline double pool_loss(PoolCounts pool, PoolCounts measured, double m_hat) {
    if (measured.positive > pool.positive || measured.negative > pool.negative) {
        throw error(errc::invalid_argument, "measured counts exceed pool counts");
    }
    const double pos = static_cast<double>(pool.positive - measured.positive);
    const double neg = static_cast<double>(pool.negative - measured.negative);
    if (pos + neg == 0.0) {
        return 0.0;
    }
    const double m = clamp_prob(m_hat);
    return -(pos * std::log(m) + neg * std::log1p(-m)) / (pos + neg);
}

inline double loss_y(const Predictor& p, PoolCounts pool, PoolCounts measured,
                     std::span<const Sequence> library_samples, std::int64_t gate = 0) {
    if (pool.total() == measured.total()) {
        return 0.0;
    }
    return pool_loss(pool, measured, marginal_positive_rate(p, library_samples, gate));
}

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_xy = 0.0;
    double loss_y = 0.0;
    double m_hat = 0.0;
};

struct TrainResult {
    Predictor predictor;
    std::vector<EpochRecord> history;
};

inline Batch measured_batch(const ScreenDataset& ds, Head head) {
    Batch b;
    b.sequences.reserve(ds.measured.size());
    b.targets.reserve(ds.measured.size());
    for (const auto& m : ds.measured) {
        b.sequences.push_back(m.x);
        if (head == Head::negbin) {
            if (!m.count) {
                throw error(errc::head_target_mismatch, "negbin head needs counts on measured cells");
            }
            b.targets.push_back(*m.count);
        } else {
            b.targets.push_back(m.y);
        }
    }
    return b;
}

namespace detail {

class AdamState {
public:
    explicit AdamState(std::size_t d) : m_(d, 0.0), v_(d, 0.0) {}

    void step(std::span<double> theta, std::span<const double> grad, const TrainConfig& cfg) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * grad[i];
            v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            theta[i] -= cfg.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg.epsilon);
        }
    }

private:
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t t_ = 0;
};

}  // namespace detail

// Minimizes loss_xy (+ pool_weight * loss_y for leavs) by minibatch first-order steps.
inline TrainResult train(const ScreenDataset& ds, Predictor initial, const TrainConfig& cfg,
                         const SequenceDistribution& dist) {
    cfg.validate();
    if (dist.length() != initial.length() || dist.alphabet() != initial.alphabet()) {
        throw error(errc::length_mismatch, "library model does not match the predictor's input space");
    }
    const Batch all = measured_batch(ds, initial.head());
    const PoolCounts measured = ds.measured_counts();
    if (measured.positive > ds.pool.positive || measured.negative > ds.pool.negative) {
        throw error(errc::invalid_argument, "measured counts exceed pool counts");
    }
    const std::size_t n = all.sequences.size();
    const std::size_t unmeasured = ds.pool.total() - measured.total();
    const bool use_pool = cfg.objective == Objective::leavs && unmeasured > 0;
    if (n == 0 && !use_pool) {
        throw error(errc::empty_input, "nothing to train on: no measured cells and no pool term");
    }
    const double pool_weight =
        cfg.pool_weight.value_or(n == 0 ? 1.0 : static_cast<double>(unmeasured) / static_cast<double>(n));
    const double pool_pos_rate =
        unmeasured == 0 ? 0.0
                        : static_cast<double>(ds.pool.positive - measured.positive) / static_cast<double>(unmeasured);

    Predictor model = std::move(initial);
    const std::size_t d = model.dimension();
    std::vector<double> grad(d);
    std::vector<double> dm(d);
    detail::AdamState adam(d);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<Sequence> library(use_pool ? cfg.library_samples : 0);
    Batch batch;
    std::vector<EpochRecord> history;
    history.reserve(cfg.epochs);
    const std::size_t steps_per_epoch = n == 0 ? 1 : (n + cfg.batch_size - 1) / cfg.batch_size;
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = make_rng(cfg.seed, 0xe90c0000ULL + epoch);
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
            std::fill(grad.begin(), grad.end(), 0.0);
            const std::size_t lo = s * cfg.batch_size;
            const std::size_t hi = std::min(n, lo + cfg.batch_size);
            batch.sequences.clear();
            batch.targets.clear();
            for (std::size_t i = lo; i < hi; ++i) {
                batch.sequences.push_back(all.sequences[order[i]]);
                batch.targets.push_back(all.targets[order[i]]);
            }
            double lxy = 0.0;
            if (!batch.sequences.empty()) {
                const double inv_b = 1.0 / static_cast<double>(batch.sequences.size());
                lxy = -accumulate_log_likelihood_gradient(model, batch, -inv_b, grad) * inv_b;
            }
            double ly = 0.0;
            double m_hat = 0.0;
            if (use_pool) {
                Rng lib_rng = make_rng(cfg.seed, 0x11b0000000ULL + step);
                for (auto& x : library) {
                    dist.sample_into(lib_rng, x);
                }
                std::fill(dm.begin(), dm.end(), 0.0);
                const double inv_m = 1.0 / static_cast<double>(library.size());
                for (const auto& x : library) {
                    m_hat += accumulate_positive_probability_gradient(model, x, cfg.sort_gate, inv_m, dm);
                }
                m_hat *= inv_m;
                ly = pool_loss(ds.pool, measured, m_hat);
                const double m = clamp_prob(m_hat);
                const double dloss_dm = m == m_hat ? -(pool_pos_rate / m - (1.0 - pool_pos_rate) / (1.0 - m)) : 0.0;
                const double scale = pool_weight * dloss_dm;
                for (std::size_t i = 0; i < d; ++i) {
                    grad[i] += scale * dm[i];
                }
            }
            const double total = lxy + pool_weight * ly;
            if (!std::isfinite(total) ||
                !std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); })) {
                throw error(errc::non_finite_loss, "epoch " + std::to_string(epoch + 1) + " step " +
                                                       std::to_string(s) + ": loss_xy=" + std::to_string(lxy) +
                                                       " loss_y=" + std::to_string(ly) +
                                                       " m_hat=" + std::to_string(m_hat));
            }
            auto theta = model.mutable_theta();
            if (cfg.optimizer == Optimizer::adam) {
                adam.step(theta, grad, cfg);
            } else {
                for (std::size_t i = 0; i < d; ++i) {
                    theta[i] -= cfg.learning_rate * grad[i];
                }
            }
            rec.loss_xy += lxy;
            rec.loss_y += ly;
            rec.m_hat += m_hat;
        }
        const double inv_steps = 1.0 / static_cast<double>(steps_per_epoch);
        rec.loss_xy *= inv_steps;
        rec.loss_y *= inv_steps;
        rec.m_hat *= inv_steps;
        history.push_back(rec);
    }
    return {std::move(model), std::move(history)};
}

inline TrainResult train(const ScreenDataset& ds, const Architecture& arch, Head head, const TrainConfig& cfg,
                         const SequenceDistribution& dist) {
    return train(ds, Predictor::initialized(arch, head, dist.length(), dist.alphabet(), derive_seed(cfg.seed, 7)),
                 cfg, dist);
}

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,loss_xy,loss_y,m_hat\n";
    for (const auto& r : history) {
        out << r.epoch << ',' << format_real(r.loss_xy) << ',' << format_real(r.loss_y) << ','
            << format_real(r.m_hat) << '\n';
    }
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"objective", objective_name(c.objective)},
                       {"M", c.library_samples},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"learning_rate", c.learning_rate},
                       {"optimizer", c.optimizer == Optimizer::adam ? "adam" : "sgd"},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"epsilon", c.epsilon},
                       {"sort_gate", c.sort_gate},
                       {"seed", c.seed}};
    if (c.pool_weight) {
        j["pool_weight"] = *c.pool_weight;
    }
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    try {
        TrainConfig c;
        c.objective = parse_objective(j.value("objective", std::string("leavs")));
        c.library_samples = j.value("M", c.library_samples);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        const auto opt = j.value("optimizer", std::string("adam"));
        if (opt != "adam" && opt != "sgd") {
            throw error(errc::parse_error, "optimizer must be adam or sgd");
        }
        c.optimizer = opt == "adam" ? Optimizer::adam : Optimizer::sgd;
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.sort_gate = j.value("sort_gate", c.sort_gate);
        c.seed = j.value("seed", c.seed);
        if (j.contains("pool_weight") && !j.at("pool_weight").is_null()) {
            c.pool_weight = j.at("pool_weight").get<double>();
        }
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse_error, e.what());
    }
}

}  // namespace screenlab
