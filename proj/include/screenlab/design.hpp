#pragma once

// Asymptotic posterior precision H_q = q I1 + (1-q) p(S0|y=0) I0 and the
// allocation choices derived from it.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "screenlab/core.hpp"
#include "screenlab/format.hpp"

namespace screenlab {

// A parametric p_theta(y=1|x) with a fixed active region S0 = S_{theta0} outside which the
// predicted probability is exactly zero.
template <class F>
concept SparseFamily = requires(const F& f, std::span<const double> theta, const typename F::point_type& x) {
    { f.dimension() } -> std::convertible_to<std::size_t>;
    { f.theta0() } -> std::convertible_to<std::vector<double>>;
    { f.probability(theta, x) } -> std::convertible_to<double>;
    { f.active(x) } -> std::convertible_to<bool>;
};

// Families may supply exact second derivatives of log p_theta(y|x) at theta0.
template <class F>
concept HasLogLikelihoodHessian = requires(const F& f, int y, const typename F::point_type& x) {
    { f.log_likelihood_hessian(y, x) } -> std::convertible_to<Eigen::MatrixXd>;
};

inline constexpr double hessian_step = 1e-4;
inline constexpr std::size_t min_active_samples = 100;

// Central differences of log p_theta(y|x) around theta0, symmetrized.
template <SparseFamily F>
Eigen::MatrixXd log_likelihood_hessian(const F& fam, int y, const typename F::point_type& x) {
    if constexpr (HasLogLikelihoodHessian<F>) {
        return fam.log_likelihood_hessian(y, x);
    } else {
        const std::vector<double> base = fam.theta0();
        const std::size_t d = base.size();
        const double h = hessian_step;
        std::vector<double> theta = base;
        auto f = [&](int dj, std::size_t j, int dk, std::size_t k) {
            theta = base;
            theta[j] += dj * h;
            theta[k] += dk * h;
            const double p = fam.probability(std::span<const double>(theta), x);
            return y == 1 ? std::log(p) : std::log1p(-p);
        };
        Eigen::MatrixXd out(d, d);
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = j; k < d; ++k) {
                const double v = (f(1, j, 1, k) - f(1, j, -1, k) - f(-1, j, 1, k) + f(-1, j, -1, k)) / (4.0 * h * h);
                out(j, k) = v;
                out(k, j) = v;
            }
        }
        return 0.5 * (out + out.transpose());
    }
}

struct InformationBatch {
    Eigen::MatrixXd i0;
    Eigen::MatrixXd i1;
    double eta = 0.0;
    double p_s0_given_y0 = 0.0;
};

struct InformationEstimate {
    Eigen::MatrixXd i0;
    Eigen::MatrixXd i1;
    double eta = 0.0;
    double p_s0_given_y0 = 0.0;
    std::size_t samples = 0;
    std::size_t active_samples = 0;
    // Batch-means replicates for error bars; empty for exact (enumerated) inputs.
    std::vector<InformationBatch> batches;

    std::size_t dimension() const { return static_cast<std::size_t>(i0.rows()); }
};

namespace detail {

struct InformationAccumulator {
    Eigen::MatrixXd s0, s1;
    double w0 = 0.0, w1 = 0.0, active = 0.0, total = 0.0, neg_active = 0.0, neg_total = 0.0;
    std::size_t active_count = 0;

    explicit InformationAccumulator(std::size_t d) : s0(Eigen::MatrixXd::Zero(d, d)), s1(Eigen::MatrixXd::Zero(d, d)) {}

    template <SparseFamily F>
    void add(const F& fam, std::span<const double> theta0, const typename F::point_type& x, double weight) {
        const double p = fam.probability(theta0, x);
        total += weight;
        neg_total += weight * (1.0 - p);
        if (!fam.active(x)) {
            return;
        }
        ++active_count;
        active += weight;
        neg_active += weight * (1.0 - p);
        if (p > 0.0) {
            s1 -= weight * p * log_likelihood_hessian(fam, 1, x);
            w1 += weight * p;
        }
        if (p < 1.0) {
            s0 -= weight * (1.0 - p) * log_likelihood_hessian(fam, 0, x);
            w0 += weight * (1.0 - p);
        }
    }

    InformationBatch finish() const {
        InformationBatch b;
        b.i0 = w0 > 0.0 ? Eigen::MatrixXd(s0 / w0) : Eigen::MatrixXd(s0);
        b.i1 = w1 > 0.0 ? Eigen::MatrixXd(s1 / w1) : Eigen::MatrixXd(s1);
        b.eta = total > 0.0 ? active / total : 0.0;
        b.p_s0_given_y0 = neg_total > 0.0 ? neg_active / neg_total : 0.0;
        return b;
    }

    void merge(const InformationAccumulator& o) {
        s0 += o.s0;
        s1 += o.s1;
        w0 += o.w0;
        w1 += o.w1;
        active += o.active;
        total += o.total;
        neg_active += o.neg_active;
        neg_total += o.neg_total;
        active_count += o.active_count;
    }
};

inline void require_weights(const InformationAccumulator& acc, std::size_t min_active) {
    if (acc.active_count < min_active) {
        throw error(errc::too_few_active_samples, std::to_string(acc.active_count) +
                                                      " samples landed in the active region; need at least " +
                                                      std::to_string(min_active));
    }
    if (acc.w1 <= 0.0) {
        throw error(errc::too_few_active_samples, "no positive-label weight inside the active region (I1 path)");
    }
    if (acc.w0 <= 0.0) {
        throw error(errc::too_few_active_samples, "no negative-label weight inside the active region (I0 path)");
    }
}

}  // namespace detail

inline constexpr std::size_t information_batches = 20;

// Monte Carlo I0, I1, eta and p(S0|y=0) from x ~ p(x), weighting each active sample by p(y|x).
template <SparseFamily F, class Sampler>
InformationEstimate information_matrices(const F& fam, Sampler&& sample, std::size_t samples, std::uint64_t seed,
                                         std::size_t min_active = min_active_samples) {
    if (samples < information_batches) {
        throw error(errc::invalid_argument, "information_matrices needs M >= " + std::to_string(information_batches));
    }
    const std::vector<double> theta0 = fam.theta0();
    const std::size_t d = theta0.size();
    Rng rng = make_rng(seed, 0xd0e);
    detail::InformationAccumulator all(d);
    InformationEstimate est;
    const std::size_t per_batch = samples / information_batches;
    for (std::size_t b = 0; b < information_batches; ++b) {
        const std::size_t count = b + 1 == information_batches ? samples - per_batch * b : per_batch;
        detail::InformationAccumulator acc(d);
        for (std::size_t i = 0; i < count; ++i) {
            acc.add(fam, std::span<const double>(theta0), sample(rng), 1.0);
        }
        est.batches.push_back(acc.finish());
        all.merge(acc);
    }
    detail::require_weights(all, min_active);
    const auto total = all.finish();
    est.i0 = total.i0;
    est.i1 = total.i1;
    est.eta = total.eta;
    est.p_s0_given_y0 = total.p_s0_given_y0;
    est.samples = samples;
    est.active_samples = all.active_count;
    return est;
}

// Exact version over an enumerated space with probabilities p(x).
template <SparseFamily F>
InformationEstimate information_matrices_exact(const F& fam, std::span<const typename F::point_type> points,
                                               std::span<const double> weights) {
    if (points.size() != weights.size() || points.empty()) {
        throw error(errc::length_mismatch, "points and weights must be nonempty and aligned");
    }
    const std::vector<double> theta0 = fam.theta0();
    detail::InformationAccumulator acc(theta0.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (weights[i] > 0.0) {
            acc.add(fam, std::span<const double>(theta0), points[i], weights[i]);
        }
    }
    detail::require_weights(acc, 1);
    const auto b = acc.finish();
    InformationEstimate est;
    est.i0 = b.i0;
    est.i1 = b.i1;
    est.eta = b.eta;
    est.p_s0_given_y0 = b.p_s0_given_y0;
    est.samples = points.size();
    est.active_samples = acc.active_count;
    return est;
}

inline Eigen::MatrixXd asymptotic_precision(double q, const Eigen::MatrixXd& i0, const Eigen::MatrixXd& i1,
                                            double p_s0_given_y0) {
    if (!(q >= 0.0 && q <= 1.0)) {
        throw error(errc::domain_error, "q must lie in [0, 1]");
    }
    if (i0.rows() != i0.cols() || i1.rows() != i1.cols() || i0.rows() != i1.rows() || i0.rows() == 0) {
        throw error(errc::dimension_mismatch, "I0 and I1 must be square matrices of one size");
    }
    const Eigen::MatrixXd h = q * i1 + (1.0 - q) * p_s0_given_y0 * i0;
    return 0.5 * (h + h.transpose());
}

inline std::vector<double> default_q_grid(std::optional<double> hit_rate = std::nullopt) {
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) {
        grid.push_back(i / 20.0);
    }
    if (hit_rate) {
        if (!(*hit_rate >= 0.0 && *hit_rate <= 1.0)) {
            throw error(errc::domain_error, "hit rate must lie in [0, 1]");
        }
        grid.push_back(*hit_rate);
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

struct DetPoint {
    double q = 0.0;
    double det = 0.0;
    double det_se = 0.0;
};

struct OptimalQ {
    double q = 1.0;
    std::vector<DetPoint> curve;
};

inline OptimalQ optimal_q(const Eigen::MatrixXd& i0, const Eigen::MatrixXd& i1, double p_s0_given_y0,
                          std::span<const double> grid) {
    if (grid.empty() || std::find(grid.begin(), grid.end(), 0.0) == grid.end() ||
        std::find(grid.begin(), grid.end(), 1.0) == grid.end()) {
        throw error(errc::invalid_argument, "q grid must contain both endpoints 0 and 1");
    }
    OptimalQ out;
    double best = -std::numeric_limits<double>::infinity();
    for (double q : grid) {
        const double det = asymptotic_precision(q, i0, i1, p_s0_given_y0).determinant();
        out.curve.push_back({q, det, 0.0});
        if (det > best || (det == best && q > out.q)) {
            best = det;
            out.q = q;
        }
    }
    return out;
}

// Same, with batch-means standard errors on each determinant.
inline OptimalQ optimal_q(const InformationEstimate& est, std::span<const double> grid) {
    OptimalQ out = optimal_q(est.i0, est.i1, est.p_s0_given_y0, grid);
    if (est.batches.size() < 2) {
        return out;
    }
    const double b = static_cast<double>(est.batches.size());
    for (auto& pt : out.curve) {
        double mean = 0.0, sq = 0.0;
        for (const auto& batch : est.batches) {
            const double v = asymptotic_precision(pt.q, batch.i0, batch.i1, batch.p_s0_given_y0).determinant();
            mean += v;
            sq += v * v;
        }
        mean /= b;
        pt.det_se = std::sqrt(std::max(0.0, (sq / b - mean * mean) * b / (b - 1.0)) / b);
    }
    return out;
}

// Standard error of a scalar statistic of the information estimate, by batch means.
template <class Stat>
double batch_standard_error(const InformationEstimate& est, Stat&& stat) {
    if (est.batches.size() < 2) {
        return 0.0;
    }
    const double b = static_cast<double>(est.batches.size());
    double mean = 0.0, sq = 0.0;
    for (const auto& batch : est.batches) {
        const double v = stat(batch);
        mean += v;
        sq += v * v;
    }
    mean /= b;
    return std::sqrt(std::max(0.0, (sq / b - mean * mean) * b / (b - 1.0)) / b);
}

// det(I1 - eta/(1-eta) I0); positive means q = 1 is optimal for every admissible p(S0|y=0).
inline double condition_value(const Eigen::MatrixXd& i0, const Eigen::MatrixXd& i1, double eta) {
    if (!(eta >= 0.0 && eta < 1.0)) {
        throw error(errc::domain_error, "eta must lie in [0, 1)");
    }
    if (i0.rows() != i1.rows() || i0.cols() != i1.cols()) {
        throw error(errc::dimension_mismatch, "I0 and I1 differ in shape");
    }
    return (i1 - eta / (1.0 - eta) * i0).determinant();
}

enum class Definiteness { definite, indefinite, inconclusive };

inline const char* definiteness_name(Definiteness d) {
    switch (d) {
        case Definiteness::definite:
            return "definite";
        case Definiteness::indefinite:
            return "indefinite";
        default:
            return "inconclusive";
    }
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

struct EigenVerdict {
    double min_eigenvalue = 0.0;
    double se = 0.0;
    Definiteness verdict = Definiteness::inconclusive;
};

// Smallest eigenvalue with a 3-sigma band decides definite / indefinite / inconclusive.
inline EigenVerdict definiteness(const Eigen::MatrixXd& m, double se) {
    EigenVerdict v;
    v.min_eigenvalue = min_eigenvalue(m);
    v.se = se;
    if (v.min_eigenvalue - 3.0 * se > 0.0) {
        v.verdict = Definiteness::definite;
    } else if (v.min_eigenvalue + 3.0 * se < 0.0) {
        v.verdict = Definiteness::indefinite;
    }
    return v;
}

struct Allocation {
    double q = 1.0;
    bool fallback = false;
};

inline constexpr double positives_only_cutoff = 0.25;

inline Allocation recommend_allocation(double observed_hit_rate) {
    if (!(observed_hit_rate >= 0.0 && observed_hit_rate <= 1.0)) {
        throw error(errc::domain_error, "hit rate must lie in [0, 1]");
    }
    if (observed_hit_rate < positives_only_cutoff) {
        return {1.0, false};
    }
    return {observed_hit_rate, true};
}

struct InfoGainBound {
    double nats = 0.0;
    double sample_multiplier = 0.0;
};

inline InfoGainBound info_gain_bound(double p1, std::size_t d) {
    if (!(p1 > 0.0) || !(3.0 * p1 < 1.0)) {
        throw error(errc::domain_error, "info_gain_bound needs 0 < 3 p1 < 1");
    }
    if (d == 0) {
        throw error(errc::invalid_argument, "dimension must be positive");
    }
    return {-0.5 * static_cast<double>(d) * std::log(3.0 * p1), 1.0 / (3.0 * p1)};
}

inline double log_det_spd(const Eigen::MatrixXd& h) {
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (h + h.transpose()));
    if (llt.info() != Eigen::Success) {
        throw error(errc::singular_precision, "precision matrix is not positive definite");
    }
    double out = 0.0;
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
        out += 2.0 * std::log(llt.matrixL()(i, i));
    }
    return out;
}

// Entropy reduction of the asymptotic Gaussian posterior going from design b to design a.
inline double entropy_gain(const Eigen::MatrixXd& h_a, const Eigen::MatrixXd& h_b) {
    return 0.5 * log_det_spd(h_a) - 0.5 * log_det_spd(h_b);
}

inline double entropy_gain(const Eigen::MatrixXd& i0, const Eigen::MatrixXd& i1, double p_s0_given_y0, double q_a,
                           double q_b) {
    return entropy_gain(asymptotic_precision(q_a, i0, i1, p_s0_given_y0),
                        asymptotic_precision(q_b, i0, i1, p_s0_given_y0));
}

struct DesignReport {
    InformationEstimate info;
    double eta_se = 0.0;
    double p_s0_given_y0_se = 0.0;
    OptimalQ optimum;
    double condition = 0.0;
    double condition_se = 0.0;
    EigenVerdict i0_verdict;
    EigenVerdict i1_verdict;
    bool singular_warning = false;
    std::optional<double> hit_rate;
    Allocation recommendation;
    std::optional<InfoGainBound> bound;
};

inline DesignReport design_report(InformationEstimate info, std::span<const double> grid,
                                  std::optional<double> hit_rate) {
    DesignReport r;
    r.info = std::move(info);
    const auto& est = r.info;
    r.eta_se = batch_standard_error(est, [](const InformationBatch& b) { return b.eta; });
    r.p_s0_given_y0_se = batch_standard_error(est, [](const InformationBatch& b) { return b.p_s0_given_y0; });
    r.optimum = optimal_q(est, grid);
    for (const auto& pt : r.optimum.curve) {
        r.singular_warning = r.singular_warning || pt.det <= 3.0 * pt.det_se;
    }
    if (est.eta < 1.0) {
        r.condition = condition_value(est.i0, est.i1, est.eta);
        r.condition_se = batch_standard_error(est, [](const InformationBatch& b) {
            return b.eta < 1.0 ? condition_value(b.i0, b.i1, b.eta) : 0.0;
        });
    } else {
        r.condition = std::numeric_limits<double>::quiet_NaN();
    }
    r.i0_verdict = definiteness(est.i0, batch_standard_error(est, [](const InformationBatch& b) {
                                    return min_eigenvalue(b.i0);
                                }));
    r.i1_verdict = definiteness(est.i1, batch_standard_error(est, [](const InformationBatch& b) {
                                    return min_eigenvalue(b.i1);
                                }));
    r.hit_rate = hit_rate;
    const double rate = hit_rate.value_or(est.eta);
    r.recommendation = recommend_allocation(rate);
    if (rate > 0.0 && 3.0 * rate < 1.0) {
        r.bound = info_gain_bound(rate, est.dimension());
    }
    return r;
}

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            row.push_back(m(i, j));
        }
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    try {
        const auto rows = j.get<std::vector<std::vector<double>>>();
        if (rows.empty()) {
            throw error(errc::parse_error, "matrix must be nonempty");
        }
        Eigen::MatrixXd m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows.front().size()) {
                throw error(errc::parse_error, "ragged matrix rows");
            }
            for (std::size_t k = 0; k < rows[i].size(); ++k) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
            }
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse_error, e.what());
    }
}

inline void to_json(nlohmann::json& j, const DesignReport& r) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& pt : r.optimum.curve) {
        curve.push_back({{"q", pt.q}, {"det", pt.det}, {"det_se", pt.det_se}});
    }
    auto verdict = [](const EigenVerdict& v) {
        return nlohmann::json{{"min_eigenvalue", v.min_eigenvalue}, {"se", v.se}, {"verdict", definiteness_name(v.verdict)}};
    };
    j = nlohmann::json{{"I0", matrix_json(r.info.i0)},
                       {"I1", matrix_json(r.info.i1)},
                       {"eta", r.info.eta},
                       {"eta_se", r.eta_se},
                       {"p_S0_given_y0", r.info.p_s0_given_y0},
                       {"p_S0_given_y0_se", r.p_s0_given_y0_se},
                       {"samples", r.info.samples},
                       {"active_samples", r.info.active_samples},
                       {"det_curve", curve},
                       {"optimal_q", r.optimum.q},
                       {"condition_value", std::isnan(r.condition) ? nlohmann::json(nullptr) : nlohmann::json(r.condition)},
                       {"condition_value_se", r.condition_se},
                       {"I0_definiteness", verdict(r.i0_verdict)},
                       {"I1_definiteness", verdict(r.i1_verdict)},
                       {"singular_warning", r.singular_warning},
                       {"recommended_q", r.recommendation.q},
                       {"fallback", r.recommendation.fallback}};
    j["hit_rate"] = r.hit_rate ? nlohmann::json(*r.hit_rate) : nlohmann::json(nullptr);
    if (r.bound) {
        j["info_gain_bound_nats"] = r.bound->nats;
        j["sample_multiplier"] = r.bound->sample_multiplier;
    } else {
        j["info_gain_bound_nats"] = nullptr;
        j["sample_multiplier"] = nullptr;
    }
}

inline void write_det_csv(std::ostream& out, const OptimalQ& opt) {
    out << "q,det,det_se\n";
    for (const auto& pt : opt.curve) {
        out << format_real(pt.q) << ',' << format_real(pt.det) << ',' << format_real(pt.det_se) << '\n';
    }
}

}  // namespace screenlab
