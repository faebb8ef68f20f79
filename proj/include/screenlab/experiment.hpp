#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance suite: config
// loading, fully labeled test benches on the synthetic screen, and the q sweep.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "screenlab/core.hpp"
#include "screenlab/design.hpp"
#include "screenlab/evalkit.hpp"
#include "screenlab/format.hpp"
#include "screenlab/objective.hpp"
#include "screenlab/oracle.hpp"
#include "screenlab/parallel.hpp"
#include "screenlab/predictor.hpp"
#include "screenlab/screen.hpp"
#include "screenlab/seqmodel.hpp"
#include "screenlab/verify.hpp"

namespace screenlab {

struct ModelConfig {
    Architecture architecture = Architecture::mlp(32);
    Head head = Head::bernoulli;
};

struct EvalConfig {
    std::size_t library_samples = 100000;
    std::size_t test_cells = 100000;
    std::size_t bins = 10;
    double threshold = 0.5;
};

struct DesignConfig {
    ToyConfig toy{3, 5, 0.015, {1.0}, 0.03};
    std::size_t samples = 100000;
    std::optional<double> hit_rate;
};

struct VerifyConfig {
    ToyConfig toy;
    std::vector<std::size_t> n_grid = {50, 500, 5000};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    // Empty means {p(y=1), 0.5, 1}.
    std::vector<double> q_values;
    GridSpec grid;
};

// Desk-scale training defaults: the MLP converges in tens of epochs on n = 2000.
inline TrainConfig desk_train_config() {
    TrainConfig c;
    c.library_samples = 256;
    c.batch_size = 128;
    c.epochs = 60;
    c.learning_rate = 1e-2;
    return c;
}

struct ExperimentConfig {
    SequenceDistribution library = default_library();
    ActivityOracle oracle = ActivityOracle::defaults();
    ScreenConfig screen;
    ModelConfig model;
    TrainConfig train = desk_train_config();
    EvalConfig eval;
    std::vector<double> q_grid;  // empty: 0, 0.05, ..., 1 plus the screen's observed hit rate
    std::vector<std::uint64_t> seeds = {1};
    std::optional<std::filesystem::path> dataset;
    std::optional<std::filesystem::path> checkpoint;
    DesignConfig design;
    VerifyConfig verify;
};

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw error(errc::io_error, "cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse_error, path.string() + ": " + e.what());
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) {
        throw error(errc::parse_error, where + " must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw error(errc::parse_error, "unknown key '" + key + "' in " + where);
        }
    }
}

inline ToyConfig toy_from_json(const nlohmann::json& j, ToyConfig c) {
    reject_unknown(j, {"length", "alphabet", "hit_rate", "theta0", "eta"}, "toy");
    c.length = j.value("length", c.length);
    c.alphabet = j.value("alphabet", c.alphabet);
    c.hit_rate = j.value("hit_rate", c.hit_rate);
    c.theta0 = j.value("theta0", c.theta0);
    if (j.contains("eta")) {
        c.eta = j.at("eta").is_null() ? std::nullopt : std::optional<double>(j.at("eta").get<double>());
    }
    return c;
}

}  // namespace detail

// Relative paths inside the config resolve against `base`.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
    try {
        detail::reject_unknown(j,
                               {"library", "oracle", "screen", "model", "train", "eval", "q_grid", "seeds", "dataset",
                                "checkpoint", "design", "verify"},
                               "experiment config");
        ExperimentConfig c;
        auto resolve = [&](const std::string& p) { return (base / p).lexically_normal(); };
        if (j.contains("library")) {
            c.library = distribution_from_json(detail::read_json_file(resolve(j.at("library").get<std::string>())));
        }
        if (j.contains("oracle")) {
            c.oracle = oracle_from_json(detail::read_json_file(resolve(j.at("oracle").get<std::string>())));
        }
        if (j.contains("screen")) {
            const auto& s = j.at("screen");
            detail::reject_unknown(s, {"N", "n", "q"}, "screen");
            c.screen.N = s.value("N", c.screen.N);
            c.screen.n = s.value("n", c.screen.n);
            c.screen.q = s.value("q", c.screen.q);
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            detail::reject_unknown(m, {"architecture", "head"}, "model");
            if (m.contains("architecture")) {
                c.model.architecture = architecture_from_json(m.at("architecture"));
            }
            c.model.head = parse_head(m.value("head", std::string(head_name(c.model.head))));
        }
        if (j.contains("train")) {
            nlohmann::json t = nlohmann::json(c.train);
            for (const auto& [k, v] : j.at("train").items()) {
                t[k] = v;
            }
            c.train = train_config_from_json(t);
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            detail::reject_unknown(e, {"M", "test_cells", "bins", "threshold"}, "eval");
            c.eval.library_samples = e.value("M", c.eval.library_samples);
            c.eval.test_cells = e.value("test_cells", c.eval.test_cells);
            c.eval.bins = e.value("bins", c.eval.bins);
            c.eval.threshold = e.value("threshold", c.eval.threshold);
        }
        c.q_grid = j.value("q_grid", c.q_grid);
        c.seeds = j.value("seeds", c.seeds);
        if (j.contains("dataset")) {
            c.dataset = resolve(j.at("dataset").get<std::string>());
        }
        if (j.contains("checkpoint")) {
            c.checkpoint = resolve(j.at("checkpoint").get<std::string>());
        }
        if (j.contains("design")) {
            const auto& d = j.at("design");
            detail::reject_unknown(d, {"toy", "M", "hit_rate"}, "design");
            if (d.contains("toy")) {
                c.design.toy = detail::toy_from_json(d.at("toy"), c.design.toy);
            }
            c.design.samples = d.value("M", c.design.samples);
            if (d.contains("hit_rate")) {
                c.design.hit_rate = d.at("hit_rate").get<double>();
            }
        }
        if (j.contains("verify")) {
            const auto& v = j.at("verify");
            detail::reject_unknown(v, {"toy", "n_grid", "seeds", "q_values", "grid"}, "verify");
            if (v.contains("toy")) {
                c.verify.toy = detail::toy_from_json(v.at("toy"), c.verify.toy);
            }
            c.verify.n_grid = v.value("n_grid", c.verify.n_grid);
            c.verify.seeds = v.value("seeds", c.verify.seeds);
            c.verify.q_values = v.value("q_values", c.verify.q_values);
            if (v.contains("grid")) {
                const auto& g = v.at("grid");
                detail::reject_unknown(g, {"lo", "hi", "points"}, "verify.grid");
                c.verify.grid.lo = g.value("lo", c.verify.grid.lo);
                c.verify.grid.hi = g.value("hi", c.verify.grid.hi);
                c.verify.grid.points = g.value("points", c.verify.grid.points);
            }
        }
        c.screen.validate();
        if (c.seeds.empty()) {
            throw error(errc::invalid_argument, "seeds must be nonempty");
        }
        if (c.eval.bins < 2 || c.eval.library_samples == 0 || c.eval.test_cells == 0) {
            throw error(errc::invalid_argument, "eval needs bins >= 2 and positive M and test_cells");
        }
        for (double q : c.q_grid) {
            if (!(q >= 0.0 && q <= 1.0)) {
                throw error(errc::invalid_argument, "q_grid entries must lie in [0, 1]");
            }
        }
        if (c.oracle.span() > c.library.length()) {
            throw error(errc::rule_out_of_range, "oracle rules exceed library length");
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse_error, e.what());
    }
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
    return experiment_from_json(detail::read_json_file(path), path.parent_path());
}

// A fresh fully labeled screen: its positives and positive rate feed the positives-only
// estimators, its labels feed the ground-truth metrics.
struct TestBench {
    std::vector<Sequence> xs;
    std::vector<int> ys;
    EvalInputs inputs;
};

inline TestBench make_test_bench(const SequenceDistribution& library, const ActivityOracle& oracle,
                                 const EvalConfig& cfg, std::uint64_t seed) {
    TestBench b;
    auto cells = simulate_cells(library, oracle, cfg.test_cells, derive_seed(seed, 0xbe7c));
    std::size_t positives = 0;
    for (auto& c : cells) {
        if (c.y == 1) {
            b.inputs.heldout_positives.push_back(c.x);
            ++positives;
        }
        b.ys.push_back(c.y);
        b.xs.push_back(std::move(c.x));
    }
    b.inputs.pool_rate = static_cast<double>(positives) / static_cast<double>(cells.size());
    b.inputs.library_samples = sample_sequences(library, cfg.library_samples, derive_seed(seed, 0x11b));
    b.inputs.bins = cfg.bins;
    return b;
}

inline EvalReport evaluate_predictor(const Predictor& p, const TestBench& bench, std::int64_t tau,
                                     double threshold) {
    auto scorer = predictor_scorer(p, tau);
    EvalReport r = evaluate(score_inputs(scorer, bench.inputs), threshold);
    r.truth = true_metrics(scorer, std::span<const Sequence>(bench.xs), std::span<const int>(bench.ys),
                           std::span<const double>(bench.inputs.thresholds), bench.inputs.bins, threshold);
    return r;
}

struct SweepRow {
    double q = 0.0;
    Objective objective = Objective::leavs;
    std::uint64_t seed = 0;
    double accuracy_est = 0.0;
    double accuracy_true = 0.0;
    double auprc_est = 0.0;
    double auprc_true = 0.0;
    double ece_est = 0.0;
    double ece_true = 0.0;
};

// Everything a sweep cell needs that is shared across q and objective for one seed.
struct SweepSeed {
    std::uint64_t seed = 0;
    std::vector<LabeledCell> screen;
    double observed_hit_rate = 0.0;
    TestBench bench;
};

inline SweepSeed prepare_sweep_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    SweepSeed s;
    s.seed = seed;
    s.screen = simulate_cells(cfg.library, cfg.oracle, cfg.screen.N, seed);
    std::size_t pos = 0;
    for (const auto& c : s.screen) {
        pos += static_cast<std::size_t>(c.y);
    }
    s.observed_hit_rate = static_cast<double>(pos) / static_cast<double>(s.screen.size());
    s.bench = make_test_bench(cfg.library, cfg.oracle, cfg.eval, seed);
    return s;
}

inline std::vector<double> sweep_grid(const ExperimentConfig& cfg, double observed_hit_rate) {
    if (cfg.q_grid.empty()) {
        return default_q_grid(observed_hit_rate);
    }
    std::vector<double> g = cfg.q_grid;
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    return g;
}

// Both objectives at one q see the same subsampled screen.
inline SweepRow run_sweep_cell(const ExperimentConfig& cfg, const SweepSeed& s, double q, Objective objective) {
    const auto ds = subsample_screen(s.screen, q, cfg.screen.n,
                                     derive_seed(derive_seed(s.seed, 0x5eed), std::bit_cast<std::uint64_t>(q)));
    TrainConfig tc = cfg.train;
    tc.objective = objective;
    tc.seed = s.seed;
    const auto result = train(ds, cfg.model.architecture, cfg.model.head, tc, cfg.library);
    const auto report = evaluate_predictor(result.predictor, s.bench, cfg.oracle.threshold(), cfg.eval.threshold);
    SweepRow row;
    row.q = q;
    row.objective = objective;
    row.seed = s.seed;
    row.accuracy_est = report.accuracy.value;
    row.auprc_est = report.curve.auprc;
    row.ece_est = report.ece.value;
    row.accuracy_true = report.truth->accuracy;
    row.auprc_true = report.truth->auprc;
    row.ece_true = report.truth->ece;
    return row;
}

inline std::vector<SweepRow> sweep_q(const ExperimentConfig& cfg, std::span<const std::uint64_t> seeds,
                                     std::span<const Objective> objectives) {
    std::vector<SweepRow> rows;
    for (std::uint64_t seed : seeds) {
        const SweepSeed s = prepare_sweep_seed(cfg, seed);
        const auto grid = sweep_grid(cfg, s.observed_hit_rate);
        std::vector<SweepRow> cells(grid.size() * objectives.size());
        parallel_for(cells.size(), [&](std::size_t i) {
            cells[i] = run_sweep_cell(cfg, s, grid[i / objectives.size()], objectives[i % objectives.size()]);
        });
        rows.insert(rows.end(), cells.begin(), cells.end());
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.q != b.q) {
            return a.q < b.q;
        }
        if (a.objective != b.objective) {
            return std::string(objective_name(a.objective)) < objective_name(b.objective);
        }
        return a.seed < b.seed;
    });
    return rows;
}

inline void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
    out << "q,objective,seed,accuracy_est,accuracy_true,auprc_est,auprc_true,ece_est,ece_true\n";
    for (const auto& r : rows) {
        out << format_real(r.q) << ',' << objective_name(r.objective) << ',' << r.seed << ','
            << format_real(r.accuracy_est) << ',' << format_real(r.accuracy_true) << ',' << format_real(r.auprc_est)
            << ',' << format_real(r.auprc_true) << ',' << format_real(r.ece_est) << ',' << format_real(r.ece_true)
            << '\n';
    }
}

}  // namespace screenlab
