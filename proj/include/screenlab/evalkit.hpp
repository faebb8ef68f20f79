#pragma once

// Evaluation without negative examples. The library samples stand in for p(x), the
// heldout positives for p(x | y=1), and the pool rate for p(y=1); accuracy, precision
// and calibration are rewritten in terms of those three quantities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "screenlab/core.hpp"
#include "screenlab/format.hpp"
#include "screenlab/predictor.hpp"

namespace screenlab {

inline std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 0; i <= 100; ++i) {
        t.push_back(i / 100.0);
    }
    t.push_back(0.5);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

struct EvalInputs {
    std::vector<Sequence> heldout_positives;
    double pool_rate = 0.0;
    std::vector<Sequence> library_samples;
    std::vector<double> thresholds = default_thresholds();
    std::size_t bins = 10;
};

// Predictor scores for the heldout positives and the library samples.
struct ScoredInputs {
    std::vector<double> positive_scores;
    std::vector<double> library_scores;
    double pool_rate = 0.0;
    std::vector<double> thresholds = default_thresholds();
    std::size_t bins = 10;

    void validate() const {
        if (!(pool_rate >= 0.0 && pool_rate <= 1.0)) {
            throw error(errc::invalid_argument, "pool rate must lie in [0, 1]");
        }
        if (bins < 2) {
            throw error(errc::invalid_argument, "ECE needs K >= 2 bins");
        }
        if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
            throw error(errc::invalid_argument, "thresholds must be sorted");
        }
        if (library_scores.empty()) {
            throw error(errc::empty_samples, "library samples must be nonempty");
        }
        if (positive_scores.empty() && pool_rate > 0.0) {
            throw error(errc::empty_positives, "no heldout positives but pool rate is positive");
        }
    }
};

template <class Scorer>
std::vector<double> score_all(Scorer&& score, std::span<const Sequence> xs) {
    std::vector<double> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
        out.push_back(score(x));
    }
    return out;
}

template <class Scorer>
ScoredInputs score_inputs(Scorer&& score, const EvalInputs& in) {
    ScoredInputs s;
    s.positive_scores = score_all(score, in.heldout_positives);
    s.library_scores = score_all(score, in.library_samples);
    s.pool_rate = in.pool_rate;
    s.thresholds = in.thresholds;
    s.bins = in.bins;
    return s;
}

// Score used for classification: probability for the bernoulli head, Pr(Y > tau) for counts.
inline auto predictor_scorer(const Predictor& p, std::int64_t tau = 30) {
    return [&p, tau](const Sequence& x) {
        return p.head() == Head::bernoulli ? predict(p, x) : tail_probability(p, x, tau);
    };
}

namespace detail {

inline double fraction_above(std::span<const double> scores, double threshold) {
    if (scores.empty()) {
        return 0.0;
    }
    std::size_t k = 0;
    for (double s : scores) {
        k += s > threshold ? 1 : 0;
    }
    return static_cast<double>(k) / static_cast<double>(scores.size());
}

inline double clip01(double v, bool& clipped) {
    if (v < 0.0) {
        clipped = true;
        return 0.0;
    }
    if (v > 1.0) {
        clipped = true;
        return 1.0;
    }
    return v;
}

inline std::size_t bin_of(double score, std::size_t bins) {
    const double b = std::floor(score * static_cast<double>(bins));
    if (!(b >= 0.0)) {
        return 0;
    }
    return std::min(static_cast<std::size_t>(b), bins - 1);
}

}  // namespace detail

struct Estimate {
    double value = 0.0;
    bool clipped = false;
};

inline Estimate estimate_accuracy(const ScoredInputs& in, double threshold) {
    in.validate();
    const double p1 = in.pool_rate;
    const double tp = detail::fraction_above(in.positive_scores, threshold);
    const double predicted_negative = 1.0 - detail::fraction_above(in.library_scores, threshold);
    const double fn = 1.0 - tp;
    Estimate e;
    e.value = detail::clip01(p1 * tp + predicted_negative - p1 * fn, e.clipped);
    return e;
}

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    bool clipped = false;
};

struct PrCurve {
    std::vector<PrPoint> points;
    double auprc = 0.0;
    bool clipped = false;
};

// Trapezoid over recall, with the highest-threshold precision carried back to recall 0.
// Zero-recall points carry no precision information (no positives above threshold) and are skipped.
inline double area_under_pr(std::vector<PrPoint> pts) {
    std::erase_if(pts, [](const PrPoint& p) { return !(p.recall > 0.0); });
    if (pts.empty()) {
        return 0.0;
    }
    std::stable_sort(pts.begin(), pts.end(), [](const PrPoint& a, const PrPoint& b) {
        return a.recall < b.recall || (a.recall == b.recall && a.threshold > b.threshold);
    });
    double area = pts.front().recall * pts.front().precision;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        area += 0.5 * (pts[i].recall - pts[i - 1].recall) * (pts[i].precision + pts[i - 1].precision);
    }
    return area;
}

inline PrCurve estimate_precision_recall(const ScoredInputs& in) {
    in.validate();
    PrCurve curve;
    for (double t : in.thresholds) {
        const double denom = detail::fraction_above(in.library_scores, t);
        if (denom <= 0.0) {
            continue;
        }
        PrPoint pt;
        pt.threshold = t;
        pt.recall = detail::fraction_above(in.positive_scores, t);
        pt.precision = detail::clip01(in.pool_rate * pt.recall / denom, pt.clipped);
        curve.clipped = curve.clipped || pt.clipped;
        curve.points.push_back(pt);
    }
    curve.auprc = area_under_pr(curve.points);
    return curve;
}

inline Estimate estimate_ece(const ScoredInputs& in) {
    in.validate();
    const std::size_t k = in.bins;
    std::vector<double> lib_count(k, 0.0);
    std::vector<double> lib_conf(k, 0.0);
    std::vector<double> pos_count(k, 0.0);
    for (double s : in.library_scores) {
        const auto b = detail::bin_of(s, k);
        lib_count[b] += 1.0;
        lib_conf[b] += s;
    }
    for (double s : in.positive_scores) {
        pos_count[detail::bin_of(s, k)] += 1.0;
    }
    const double m = static_cast<double>(in.library_scores.size());
    const double n_pos = static_cast<double>(in.positive_scores.size());
    Estimate e;
    for (std::size_t b = 0; b < k; ++b) {
        if (lib_count[b] == 0.0) {
            continue;
        }
        const double weight = lib_count[b] / m;
        const double pos_frac = n_pos > 0.0 ? pos_count[b] / n_pos : 0.0;
        bool clipped = false;
        const double outcome = detail::clip01(in.pool_rate * pos_frac / weight, clipped);
        e.clipped = e.clipped || clipped;
        const double confidence = lib_conf[b] / lib_count[b];
        e.value += weight * std::abs(outcome - confidence);
    }
    return e;
}

struct TrueMetrics {
    double accuracy = 0.0;
    PrCurve curve;
    double auprc = 0.0;
    double ece = 0.0;
};

// Standard empirical metrics on a fully labeled set of (score, y).
inline TrueMetrics true_metrics(std::span<const double> scores, std::span<const int> labels,
                                std::span<const double> thresholds, std::size_t bins, double threshold = 0.5) {
    if (scores.empty() || scores.size() != labels.size()) {
        throw error(errc::empty_input, "labeled test set must be nonempty and aligned");
    }
    if (bins < 2) {
        throw error(errc::invalid_argument, "ECE needs K >= 2 bins");
    }
    const double n = static_cast<double>(scores.size());
    double positives = 0.0;
    double correct = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        positives += labels[i];
        const int pred = scores[i] > threshold ? 1 : 0;
        correct += pred == labels[i] ? 1.0 : 0.0;
    }
    TrueMetrics out;
    out.accuracy = correct / n;
    for (double t : thresholds) {
        double predicted = 0.0;
        double tp = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] > t) {
                predicted += 1.0;
                tp += labels[i];
            }
        }
        if (predicted == 0.0) {
            continue;
        }
        out.curve.points.push_back({t, tp / predicted, positives > 0.0 ? tp / positives : 0.0, false});
    }
    out.curve.auprc = area_under_pr(out.curve.points);
    out.auprc = out.curve.auprc;
    std::vector<double> count(bins, 0.0), conf(bins, 0.0), hits(bins, 0.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto b = detail::bin_of(scores[i], bins);
        count[b] += 1.0;
        conf[b] += scores[i];
        hits[b] += labels[i];
    }
    for (std::size_t b = 0; b < bins; ++b) {
        if (count[b] > 0.0) {
            out.ece += (count[b] / n) * std::abs(hits[b] / count[b] - conf[b] / count[b]);
        }
    }
    return out;
}

struct EvalReport {
    double threshold = 0.5;
    Estimate accuracy;
    PrCurve curve;
    Estimate ece;
    std::optional<TrueMetrics> truth;

    bool any_clipped() const { return accuracy.clipped || curve.clipped || ece.clipped; }
};

inline EvalReport evaluate(const ScoredInputs& in, double threshold = 0.5) {
    EvalReport r;
    r.threshold = threshold;
    r.accuracy = estimate_accuracy(in, threshold);
    r.curve = estimate_precision_recall(in);
    r.ece = estimate_ece(in);
    return r;
}

template <class Scorer>
Estimate estimate_accuracy(Scorer&& score, const EvalInputs& in, double threshold) {
    return estimate_accuracy(score_inputs(score, in), threshold);
}

template <class Scorer>
PrCurve estimate_precision_recall(Scorer&& score, const EvalInputs& in) {
    return estimate_precision_recall(score_inputs(score, in));
}

template <class Scorer>
Estimate estimate_ece(Scorer&& score, const EvalInputs& in) {
    return estimate_ece(score_inputs(score, in));
}

template <class Scorer>
TrueMetrics true_metrics(Scorer&& score, std::span<const Sequence> xs, std::span<const int> labels,
                         std::span<const double> thresholds, std::size_t bins, double threshold = 0.5) {
    const auto scores = score_all(score, xs);
    return true_metrics(std::span<const double>(scores), labels, thresholds, bins, threshold);
}

inline nlohmann::json curve_json(const PrCurve& c) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points) {
        pts.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
    }
    return pts;
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
    j = nlohmann::json{{"threshold", r.threshold},
                       {"accuracy_est", r.accuracy.value},
                       {"auprc_est", r.curve.auprc},
                       {"ece_est", r.ece.value},
                       {"clipped", r.any_clipped()},
                       {"precision_recall", curve_json(r.curve)}};
    if (r.truth) {
        j["accuracy_true"] = r.truth->accuracy;
        j["auprc_true"] = r.truth->auprc;
        j["ece_true"] = r.truth->ece;
        j["precision_recall_true"] = curve_json(r.truth->curve);
    }
}

inline void write_pr_csv(std::ostream& out, const PrCurve& c) {
    out << "threshold,precision,recall\n";
    for (const auto& p : c.points) {
        out << format_real(p.threshold) << ',' << format_real(p.precision) << ',' << format_real(p.recall) << '\n';
    }
}

}  // namespace screenlab
