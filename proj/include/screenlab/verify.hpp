#pragma once

// Numerical checks of the large-sample theory on a toy space small enough to enumerate:
// consistency of the pool-constrained fit at every allocation, saturation of the plain
// fit at q = 1, and Gaussianity of the grid posterior.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "screenlab/core.hpp"
#include "screenlab/design.hpp"
#include "screenlab/format.hpp"

namespace screenlab {

struct ToyConfig {
    std::size_t length = 3;
    std::size_t alphabet = 5;
    double hit_rate = 0.1;
    std::vector<double> theta0 = {1.0};
    // Mass of the active region {x : x_0 == 0}; unset means every x is active.
    std::optional<double> eta;
};

// p_theta(y=1|x) = 1[x in S] sigmoid(beta + theta . phi(x)). In the constrained form the level
// beta = beta(theta) is pinned so that sum_x p(x) p_theta(y=1|x) equals the known hit rate.
class ToyFamily {
public:
    using point_type = std::size_t;

    explicit ToyFamily(ToyConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.length < 1 || cfg_.alphabet < 2) {
            throw error(errc::invalid_argument, "toy space needs length >= 1 and alphabet >= 2");
        }
        if (cfg_.theta0.empty() || cfg_.theta0.size() > 2) {
            throw error(errc::invalid_argument, "toy family supports 1 or 2 parameters");
        }
        const double states = std::pow(static_cast<double>(cfg_.alphabet), static_cast<double>(cfg_.length));
        if (states > 1e5) {
            throw error(errc::invalid_argument, "toy space too large to enumerate");
        }
        if (cfg_.eta && !(*cfg_.eta > 0.0 && *cfg_.eta <= 1.0)) {
            throw error(errc::domain_error, "eta must lie in (0, 1]");
        }
        const std::size_t a = cfg_.alphabet;
        std::vector<double> row_probs(cfg_.length * a);
        for (std::size_t l = 0; l < cfg_.length; ++l) {
            double total = 0.0;
            for (std::size_t k = 0; k < a; ++k) {
                row_probs[l * a + k] = 1.0 + 0.5 * static_cast<double>((k + l) % 3);
                total += row_probs[l * a + k];
            }
            for (std::size_t k = 0; k < a; ++k) {
                row_probs[l * a + k] /= total;
            }
        }
        if (cfg_.eta) {
            for (std::size_t k = 0; k < a; ++k) {
                row_probs[k] = k == 0 ? *cfg_.eta : (1.0 - *cfg_.eta) / static_cast<double>(a - 1);
            }
        }
        const auto size = static_cast<std::size_t>(states);
        px_.resize(size);
        phi_.resize(size * 2);
        active_.resize(size);
        double active_mass = 0.0;
        for (std::size_t i = 0; i < size; ++i) {
            std::size_t rest = i;
            double p = 1.0;
            double f1 = 0.0;
            double f2 = 0.0;
            for (std::size_t l = 0; l < cfg_.length; ++l) {
                const std::size_t tok = rest % a;
                rest /= a;
                if (l == 0) {
                    active_[i] = !cfg_.eta || tok == 0;
                }
                p *= row_probs[l * a + tok];
                const double centered = static_cast<double>(tok) - 0.5 * static_cast<double>(a - 1);
                f1 += centered / static_cast<double>(a - 1);
                f2 += std::cos(static_cast<double>((tok + 1) * (l + 2)));
            }
            px_[i] = p;
            phi_[2 * i] = f1;
            phi_[2 * i + 1] = f2 / static_cast<double>(cfg_.length);
            active_mass += active_[i] ? p : 0.0;
        }
        eta_ = active_mass;
        if (!(cfg_.hit_rate > 0.0 && cfg_.hit_rate < eta_)) {
            throw error(errc::domain_error, "hit rate must lie strictly between 0 and the active mass");
        }
        beta0_ = level(cfg_.theta0);
        derivatives_at_theta0();
    }

    const ToyConfig& config() const noexcept { return cfg_; }
    std::size_t size() const noexcept { return px_.size(); }
    std::size_t dimension() const noexcept { return cfg_.theta0.size(); }
    std::vector<double> theta0() const { return cfg_.theta0; }
    double beta0() const noexcept { return beta0_; }
    double hit_rate() const noexcept { return cfg_.hit_rate; }
    double eta() const noexcept { return eta_; }
    double px(std::size_t i) const { return px_[i]; }
    bool active(std::size_t i) const { return active_[i]; }
    const std::vector<double>& weights() const noexcept { return px_; }

    std::vector<std::size_t> points() const {
        std::vector<std::size_t> out(size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = i;
        }
        return out;
    }

    double feature(std::size_t i, std::size_t k) const { return phi_[2 * i + k]; }

    double linear(double beta, std::span<const double> theta, std::size_t i) const {
        double z = beta;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            z += theta[k] * feature(i, k);
        }
        return z;
    }

    double probability_free(double beta, std::span<const double> theta, std::size_t i) const {
        return active_[i] ? sigmoid(linear(beta, theta, i)) : 0.0;
    }

    // Marginal positive rate sum_x p(x) p(y=1|x) of the unconstrained model.
    double marginal(double beta, std::span<const double> theta) const {
        double m = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            if (active_[i]) {
                m += px_[i] * sigmoid(linear(beta, theta, i));
            }
        }
        return m;
    }

    // beta(theta): the unique root of marginal(beta, theta) = hit rate, by safeguarded Newton.
    double level(std::span<const double> theta) const {
        check_theta(theta);
        double lo = -60.0;
        double hi = 60.0;
        double beta = std::log(cfg_.hit_rate / (eta_ - cfg_.hit_rate));
        for (int iter = 0; iter < 200; ++iter) {
            double g = -cfg_.hit_rate;
            double dg = 0.0;
            for (std::size_t i = 0; i < size(); ++i) {
                if (active_[i]) {
                    const double s = sigmoid(linear(beta, theta, i));
                    g += px_[i] * s;
                    dg += px_[i] * s * (1.0 - s);
                }
            }
            if (g > 0.0) {
                hi = beta;
            } else {
                lo = beta;
            }
            double next = dg > 0.0 ? beta - g / dg : 0.5 * (lo + hi);
            if (!(next > lo && next < hi)) {
                next = 0.5 * (lo + hi);
            }
            if (std::abs(next - beta) <= 1e-15 * std::max(1.0, std::abs(beta)) || hi - lo < 1e-15) {
                return next;
            }
            beta = next;
        }
        return beta;
    }

    double probability(std::span<const double> theta, std::size_t i) const {
        return probability_free(level(theta), theta, i);
    }

    double true_probability(std::size_t i) const {
        return probability_free(beta0_, std::span<const double>(cfg_.theta0), i);
    }

    // p(x | y), enumerated.
    std::vector<double> conditional(int y) const {
        std::vector<double> w(size());
        double total = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            const double p = true_probability(i);
            w[i] = px_[i] * (y == 1 ? p : 1.0 - p);
            total += w[i];
        }
        for (double& v : w) {
            v /= total;
        }
        return w;
    }

    // Exact second derivatives of log p_theta(y|x) at theta0 under the constrained level.
    Eigen::MatrixXd log_likelihood_hessian(int y, std::size_t i) const {
        const std::size_t d = dimension();
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
        if (!active_[i]) {
            return out;
        }
        const double s = sigmoid(linear(beta0_, std::span<const double>(cfg_.theta0), i));
        Eigen::VectorXd v(d);
        for (std::size_t k = 0; k < d; ++k) {
            v(k) = dbeta_(k) + feature(i, k);
        }
        out = -s * (1.0 - s) * v * v.transpose() + (y == 1 ? 1.0 - s : -s) * d2beta_;
        return out;
    }

    // Gradient in theta of the constrained mean log likelihood of aggregated data.
    std::vector<double> constrained_gradient(std::span<const double> theta, std::span<const double> pos,
                                             std::span<const double> neg, double n) const {
        const double beta = level(theta);
        const std::size_t d = theta.size();
        double a0 = 0.0;
        std::vector<double> ak(d, 0.0);
        for (std::size_t i = 0; i < size(); ++i) {
            if (active_[i]) {
                const double s = sigmoid(linear(beta, theta, i));
                const double w = px_[i] * s * (1.0 - s);
                a0 += w;
                for (std::size_t k = 0; k < d; ++k) {
                    ak[k] += w * feature(i, k);
                }
            }
        }
        std::vector<double> grad(d, 0.0);
        for (std::size_t i = 0; i < size(); ++i) {
            if (!active_[i] || (pos[i] == 0.0 && neg[i] == 0.0)) {
                continue;
            }
            const double s = sigmoid(linear(beta, theta, i));
            const double r = pos[i] * (1.0 - s) - neg[i] * s;
            for (std::size_t k = 0; k < d; ++k) {
                grad[k] += r * (feature(i, k) - ak[k] / a0) / n;
            }
        }
        return grad;
    }

private:
    void check_theta(std::span<const double> theta) const {
        if (theta.size() != dimension()) {
            throw error(errc::dimension_mismatch, "theta has the wrong dimension");
        }
    }

    void derivatives_at_theta0() {
        const std::size_t d = dimension();
        const std::span<const double> theta(cfg_.theta0);
        double a0 = 0.0;
        Eigen::VectorXd ak = Eigen::VectorXd::Zero(d);
        for (std::size_t i = 0; i < size(); ++i) {
            if (active_[i]) {
                const double s = sigmoid(linear(beta0_, theta, i));
                const double w = px_[i] * s * (1.0 - s);
                a0 += w;
                for (std::size_t k = 0; k < d; ++k) {
                    ak(k) += w * feature(i, k);
                }
            }
        }
        dbeta_ = -ak / a0;
        d2beta_ = Eigen::MatrixXd::Zero(d, d);
        for (std::size_t i = 0; i < size(); ++i) {
            if (active_[i]) {
                const double s = sigmoid(linear(beta0_, theta, i));
                const double t = s * (1.0 - s) * (1.0 - 2.0 * s);
                Eigen::VectorXd v(d);
                for (std::size_t k = 0; k < d; ++k) {
                    v(k) = dbeta_(k) + feature(i, k);
                }
                d2beta_ -= px_[i] * t * v * v.transpose();
            }
        }
        d2beta_ /= a0;
    }

    ToyConfig cfg_;
    std::vector<double> px_;
    std::vector<double> phi_;
    std::vector<bool> active_;
    double eta_ = 1.0;
    double beta0_ = 0.0;
    Eigen::VectorXd dbeta_;
    Eigen::MatrixXd d2beta_;
};

inline InformationEstimate exact_information(const ToyFamily& fam) {
    const auto pts = fam.points();
    return information_matrices_exact(fam, std::span<const std::size_t>(pts), std::span<const double>(fam.weights()));
}

// Draws indices from an enumerated distribution.
class IndexSampler {
public:
    explicit IndexSampler(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            total += w;
            cumulative_.push_back(total);
        }
        if (!(total > 0.0)) {
            throw error(errc::invalid_argument, "weights must have positive total");
        }
    }

    std::size_t operator()(Rng& rng) const {
        const double u = uniform01(rng) * cumulative_.back();
        const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
    }

private:
    std::vector<double> cumulative_;
};

// Labeled toy data aggregated per point.
struct ToyData {
    std::vector<double> positives;
    std::vector<double> negatives;
    std::size_t n = 0;
};

inline ToyData sample_toy_data(const ToyFamily& fam, std::size_t n, double q, std::uint64_t seed) {
    if (!(q >= 0.0 && q <= 1.0)) {
        throw error(errc::domain_error, "q must lie in [0, 1]");
    }
    if (n == 0) {
        throw error(errc::invalid_argument, "n must be positive");
    }
    ToyData data;
    data.positives.assign(fam.size(), 0.0);
    data.negatives.assign(fam.size(), 0.0);
    data.n = n;
    const std::size_t pos = allocate_positives(n, q);
    const auto cond1 = fam.conditional(1);
    const auto cond0 = fam.conditional(0);
    const IndexSampler s1{std::span<const double>(cond1)};
    const IndexSampler s0{std::span<const double>(cond0)};
    Rng rng = make_rng(derive_seed(derive_seed(seed, n), std::bit_cast<std::uint64_t>(q)), 0x70f);
    for (std::size_t i = 0; i < pos; ++i) {
        data.positives[s1(rng)] += 1.0;
    }
    for (std::size_t i = pos; i < n; ++i) {
        data.negatives[s0(rng)] += 1.0;
    }
    return data;
}

enum class FitObjective { leavs_hard, leavs_soft, xy };

inline const char* fit_objective_name(FitObjective o) {
    switch (o) {
        case FitObjective::leavs_hard:
            return "leavs-hard";
        case FitObjective::leavs_soft:
            return "leavs-soft";
        default:
            return "xy";
    }
}

inline FitObjective parse_fit_objective(const std::string& s) {
    if (s == "leavs-hard" || s == "leavs") {
        return FitObjective::leavs_hard;
    }
    if (s == "leavs-soft") {
        return FitObjective::leavs_soft;
    }
    if (s == "xy") {
        return FitObjective::xy;
    }
    throw error(errc::parse_error, "unknown fit objective '" + s + "'");
}

inline constexpr double fit_box = 30.0;
inline constexpr double default_soft_weight = 1e5;

// Mean log likelihood (plus pool term for the soft variant) with gradient and Hessian.
struct Evaluation {
    double value = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
};

namespace detail {

// Free parameters w = (beta, theta).
inline Evaluation free_objective(const ToyFamily& fam, const ToyData& data, const Eigen::VectorXd& w,
                                 double pool_weight) {
    const std::size_t d = static_cast<std::size_t>(w.size());
    const std::vector<double> theta(w.data() + 1, w.data() + d);
    const double n = static_cast<double>(data.n);
    Evaluation e;
    e.grad = Eigen::VectorXd::Zero(d);
    e.hess = Eigen::MatrixXd::Zero(d, d);
    double m = 0.0;
    Eigen::VectorXd dm = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd d2m = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd u(d);
    for (std::size_t i = 0; i < fam.size(); ++i) {
        if (!fam.active(i)) {
            continue;
        }
        const double z = fam.linear(w(0), std::span<const double>(theta), i);
        const double s = sigmoid(z);
        u(0) = 1.0;
        for (std::size_t k = 1; k < d; ++k) {
            u(static_cast<Eigen::Index>(k)) = fam.feature(i, k - 1);
        }
        const double pos = data.positives[i];
        const double neg = data.negatives[i];
        if (pos > 0.0 || neg > 0.0) {
            e.value += (pos * log_sigmoid(z) + neg * log_sigmoid(-z)) / n;
            e.grad += (pos * (1.0 - s) - neg * s) / n * u;
            e.hess -= (pos + neg) * s * (1.0 - s) / n * u * u.transpose();
        }
        if (pool_weight > 0.0) {
            const double px = fam.px(i);
            m += px * s;
            dm += px * s * (1.0 - s) * u;
            d2m += px * s * (1.0 - s) * (1.0 - 2.0 * s) * u * u.transpose();
        }
    }
    if (pool_weight > 0.0) {
        const double p1 = fam.hit_rate();
        const double mc = std::clamp(m, 1e-300, 1.0 - 1e-16);
        const double f = p1 * std::log(mc / p1) + (1.0 - p1) * std::log((1.0 - mc) / (1.0 - p1));
        const double f1 = p1 / mc - (1.0 - p1) / (1.0 - mc);
        const double f2 = -p1 / (mc * mc) - (1.0 - p1) / ((1.0 - mc) * (1.0 - mc));
        e.value += pool_weight * f;
        e.grad += pool_weight * f1 * dm;
        e.hess += pool_weight * (f2 * dm * dm.transpose() + f1 * d2m);
    }
    return e;
}

inline double constrained_value(const ToyFamily& fam, const ToyData& data, std::span<const double> theta) {
    const double beta = fam.level(theta);
    const double n = static_cast<double>(data.n);
    double v = 0.0;
    for (std::size_t i = 0; i < fam.size(); ++i) {
        if (!fam.active(i) || (data.positives[i] == 0.0 && data.negatives[i] == 0.0)) {
            continue;
        }
        const double z = fam.linear(beta, theta, i);
        v += (data.positives[i] * log_sigmoid(z) + data.negatives[i] * log_sigmoid(-z)) / n;
    }
    return v;
}

inline Evaluation constrained_objective(const ToyFamily& fam, const ToyData& data, const Eigen::VectorXd& w) {
    const std::size_t d = static_cast<std::size_t>(w.size());
    const double n = static_cast<double>(data.n);
    const std::span<const double> pos(data.positives);
    const std::span<const double> neg(data.negatives);
    std::vector<double> theta(w.data(), w.data() + d);
    Evaluation e;
    e.value = constrained_value(fam, data, theta);
    const auto g = fam.constrained_gradient(theta, pos, neg, n);
    e.grad = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(d));
    e.hess = Eigen::MatrixXd(d, d);
    const double h = 1e-5;
    for (std::size_t k = 0; k < d; ++k) {
        std::vector<double> up = theta;
        std::vector<double> dn = theta;
        up[k] += h;
        dn[k] -= h;
        const auto gu = fam.constrained_gradient(up, pos, neg, n);
        const auto gd = fam.constrained_gradient(dn, pos, neg, n);
        for (std::size_t j = 0; j < d; ++j) {
            e.hess(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = (gu[j] - gd[j]) / (2.0 * h);
        }
    }
    e.hess = 0.5 * (e.hess + e.hess.transpose()).eval();
    return e;
}

struct Maximum {
    Eigen::VectorXd w;
    double value = 0.0;
    bool at_boundary = false;
};

// Damped Newton ascent projected onto the box |w_k| <= fit_box.
template <class Objective>
Maximum maximize(Objective&& objective, Eigen::VectorXd w) {
    const auto d = w.size();
    Evaluation e = objective(w);
    for (int iter = 0; iter < 500; ++iter) {
        Eigen::MatrixXd neg_h = -e.hess;
        double mu = 0.0;
        Eigen::VectorXd step;
        for (int attempt = 0; attempt < 60; ++attempt) {
            Eigen::LLT<Eigen::MatrixXd> llt(neg_h + mu * Eigen::MatrixXd::Identity(d, d));
            if (llt.info() == Eigen::Success) {
                step = llt.solve(e.grad);
                break;
            }
            mu = mu == 0.0 ? 1e-8 * std::max(1.0, neg_h.diagonal().cwiseAbs().maxCoeff()) : mu * 10.0;
        }
        if (step.size() == 0) {
            step = e.grad;
        }
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            Eigen::VectorXd cand = (w + t * step).cwiseMax(-fit_box).cwiseMin(fit_box);
            const Evaluation ce = objective(cand);
            if (std::isfinite(ce.value) && ce.value >= e.value - 1e-15 * std::abs(e.value)) {
                const double change = (cand - w).cwiseAbs().maxCoeff();
                w = cand;
                e = ce;
                moved = change > 1e-11;
                break;
            }
            t *= 0.5;
        }
        if (!moved) {
            break;
        }
    }
    Maximum out;
    out.w = w;
    out.value = e.value;
    out.at_boundary = (w.cwiseAbs().array() >= fit_box - 1e-9).any();
    return out;
}

}  // namespace detail

struct FitResult {
    std::vector<double> theta;
    double beta = 0.0;
    double value = 0.0;
    bool at_boundary = false;
};

inline constexpr double multistart_tolerance = 1e-4;

// Maximum likelihood fit from several starts; interior optima that disagree are reported.
inline FitResult fit_toy(const ToyFamily& fam, const ToyData& data, FitObjective objective,
                         double soft_weight = default_soft_weight) {
    const std::size_t d = fam.dimension();
    std::vector<Eigen::VectorXd> starts;
    for (double offset : {0.0, 1.5, -1.5}) {
        const Eigen::VectorXd theta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), offset);
        if (objective == FitObjective::leavs_hard) {
            starts.push_back(theta);
        } else {
            Eigen::VectorXd w(d + 1);
            w(0) = std::log(fam.hit_rate() / (fam.eta() - fam.hit_rate()));
            w.tail(static_cast<Eigen::Index>(d)) = theta;
            starts.push_back(w);
        }
    }
    std::vector<detail::Maximum> results;
    for (const auto& start : starts) {
        if (objective == FitObjective::leavs_hard) {
            results.push_back(detail::maximize(
                [&](const Eigen::VectorXd& w) { return detail::constrained_objective(fam, data, w); }, start));
        } else {
            const double weight = objective == FitObjective::leavs_soft ? soft_weight : 0.0;
            results.push_back(detail::maximize(
                [&](const Eigen::VectorXd& w) { return detail::free_objective(fam, data, w, weight); }, start));
        }
    }
    const auto best = std::max_element(results.begin(), results.end(),
                                       [](const auto& a, const auto& b) { return a.value < b.value; });
    for (const auto& r : results) {
        if (!r.at_boundary && !best->at_boundary &&
            (r.w - best->w).cwiseAbs().maxCoeff() > multistart_tolerance) {
            throw error(errc::optimization_failure,
                        std::string(fit_objective_name(objective)) + ": starts converged to different optima");
        }
    }
    FitResult out;
    out.value = best->value;
    out.at_boundary = best->at_boundary;
    if (objective == FitObjective::leavs_hard) {
        out.theta.assign(best->w.data(), best->w.data() + d);
        out.beta = fam.level(out.theta);
    } else {
        out.beta = best->w(0);
        out.theta.assign(best->w.data() + 1, best->w.data() + d + 1);
    }
    return out;
}

// E_p(x) |p_fit(y=1|x) - p(y=1|x)|, the predictive total variation.
inline double predictive_tv(const ToyFamily& fam, double beta, std::span<const double> theta) {
    double tv = 0.0;
    for (std::size_t i = 0; i < fam.size(); ++i) {
        tv += fam.px(i) * std::abs(fam.probability_free(beta, theta, i) - fam.true_probability(i));
    }
    return tv;
}

struct PathRow {
    FitObjective objective = FitObjective::leavs_hard;
    double q = 0.0;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    FitResult fit;
    double theta_error = 0.0;
    double tv = 0.0;
};

inline std::vector<PathRow> mle_path(const ToyFamily& fam, double q, std::span<const std::size_t> n_grid,
                                     FitObjective objective, std::span<const std::uint64_t> seeds) {
    std::vector<PathRow> rows;
    const auto theta0 = fam.theta0();
    for (std::uint64_t seed : seeds) {
        for (std::size_t n : n_grid) {
            const ToyData data = sample_toy_data(fam, n, q, seed);
            PathRow row;
            row.objective = objective;
            row.q = q;
            row.n = n;
            row.seed = seed;
            row.fit = fit_toy(fam, data, objective);
            double err = 0.0;
            for (std::size_t k = 0; k < theta0.size(); ++k) {
                err += (row.fit.theta[k] - theta0[k]) * (row.fit.theta[k] - theta0[k]);
            }
            row.theta_error = std::sqrt(err);
            row.tv = predictive_tv(fam, row.fit.beta, row.fit.theta);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline void write_path_csv(std::ostream& out, std::span<const PathRow> rows) {
    out << "objective,q,n,seed,theta,beta,theta_error,tv,at_boundary\n";
    for (const auto& r : rows) {
        std::string theta;
        for (std::size_t k = 0; k < r.fit.theta.size(); ++k) {
            theta += (k ? ";" : "") + format_real(r.fit.theta[k]);
        }
        out << fit_objective_name(r.objective) << ',' << format_real(r.q) << ',' << r.n << ',' << r.seed << ','
            << theta << ',' << format_real(r.fit.beta) << ',' << format_real(r.theta_error) << ','
            << format_real(r.tv) << ',' << (r.fit.at_boundary ? 1 : 0) << '\n';
    }
}

struct GridSpec {
    double lo = -2.0;
    double hi = 4.0;
    std::size_t points = 20001;
};

struct PosteriorGrid {
    std::vector<double> theta;
    std::vector<double> mass;
    std::vector<double> gaussian;
    double map = 0.0;
    double sd = 0.0;
    double tv = 0.0;
};

// Flat-prior grid posterior of the constrained 1-parameter family versus N(MAP, (n H_q)^-1).
inline PosteriorGrid posterior_grid(const ToyFamily& fam, const ToyData& data, double q, const GridSpec& grid) {
    if (fam.dimension() != 1) {
        throw error(errc::dimension_mismatch, "posterior_grid supports one parameter");
    }
    if (grid.points < 3 || !(grid.hi > grid.lo)) {
        throw error(errc::invalid_argument, "grid needs at least 3 points on a nonempty interval");
    }
    PosteriorGrid out;
    const double step = (grid.hi - grid.lo) / static_cast<double>(grid.points - 1);
    std::vector<double> logpost(grid.points);
    const double n = static_cast<double>(data.n);
    std::size_t best = 0;
    for (std::size_t i = 0; i < grid.points; ++i) {
        const double theta = grid.lo + step * static_cast<double>(i);
        out.theta.push_back(theta);
        const double t[1] = {theta};
        logpost[i] = n * detail::constrained_value(fam, data, std::span<const double>(t, 1));
        if (logpost[i] > logpost[best]) {
            best = i;
        }
    }
    if (best == 0 || best + 1 == grid.points) {
        throw error(errc::grid_too_coarse, "posterior mode sits on the grid boundary");
    }
    double total = 0.0;
    out.mass.resize(grid.points);
    for (std::size_t i = 0; i < grid.points; ++i) {
        out.mass[i] = std::exp(logpost[i] - logpost[best]);
        total += out.mass[i];
    }
    for (double& m : out.mass) {
        m /= total;
    }
    out.map = out.theta[best];
    const auto info = exact_information(fam);
    const double h = asymptotic_precision(q, info.i0, info.i1, info.p_s0_given_y0)(0, 0);
    if (!(h > 0.0)) {
        throw error(errc::singular_precision, "H_q is not positive");
    }
    out.sd = 1.0 / std::sqrt(n * h);
    auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - out.map) / (out.sd * std::sqrt(2.0))); };
    double covered = 0.0;
    out.gaussian.resize(grid.points);
    for (std::size_t i = 0; i < grid.points; ++i) {
        const double left = out.theta[i] - 0.5 * step;
        const double right = out.theta[i] + 0.5 * step;
        out.gaussian[i] = cdf(right) - cdf(left);
        covered += out.gaussian[i];
        out.tv += std::abs(out.mass[i] - out.gaussian[i]);
    }
    out.tv = 0.5 * (out.tv + std::max(0.0, 1.0 - covered));
    return out;
}

inline double entropy_gain(const ToyFamily& fam, double q_a, double q_b) {
    const auto info = exact_information(fam);
    return entropy_gain(info.i0, info.i1, info.p_s0_given_y0, q_a, q_b);
}

struct BvmRow {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    double q = 1.0;
    double map = 0.0;
    double sd = 0.0;
    double tv = 0.0;
};

inline void write_bvm_csv(std::ostream& out, std::span<const BvmRow> rows) {
    out << "q,n,seed,map,sd,tv\n";
    for (const auto& r : rows) {
        out << format_real(r.q) << ',' << r.n << ',' << r.seed << ',' << format_real(r.map) << ','
            << format_real(r.sd) << ',' << format_real(r.tv) << '\n';
    }
}

}  // namespace screenlab
