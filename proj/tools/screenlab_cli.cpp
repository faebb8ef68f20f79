// screenlab: simulate screens, train and evaluate predictors, and compute design quantities.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "screenlab/screenlab.hpp"

namespace fs = std::filesystem;
using namespace screenlab;

namespace {

constexpr int exit_config = 2;
constexpr int exit_runtime = 3;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::optional<std::string> config;
    std::string out = "screenlab_out";
    std::vector<std::uint64_t> seeds;
    std::optional<double> q;
    std::optional<std::string> objective;
    std::optional<double> hit_rate;
    bool quiet = false;
};

class Runner {
public:
    explicit Runner(Options opt) : opt_(std::move(opt)) {}

    // Everything that can fail because of user input happens here and maps to exit code 2.
    void load() {
        try {
            cfg_ = opt_.config ? load_experiment(*opt_.config) : ExperimentConfig{};
        } catch (const error& e) {
            throw ConfigError(std::string("--config: ") + e.what());
        }
        if (!opt_.seeds.empty()) {
            cfg_.seeds = opt_.seeds;
        }
        if (opt_.q) {
            cfg_.screen.q = *opt_.q;
        }
        if (opt_.objective) {
            cfg_.train.objective = parse_objective(*opt_.objective);
        }
        std::error_code ec;
        fs::create_directories(opt_.out, ec);
        if (ec || !fs::is_directory(opt_.out)) {
            throw ConfigError("--out: cannot create directory " + opt_.out);
        }
    }

    void simulate() {
        const auto ds = screen(seed());
        write_file("dataset.jsonl", [&](std::ostream& out) { write_dataset_jsonl(out, ds); });
        note("simulated " + std::to_string(ds.measured.size()) + " measured cells, pool " +
             std::to_string(ds.pool.positive) + "+/" + std::to_string(ds.pool.negative) + "-");
    }

    void train_model() {
        const ScreenDataset ds = cfg_.dataset ? read_dataset(*cfg_.dataset) : screen(seed());
        TrainConfig tc = cfg_.train;
        tc.seed = seed();
        const auto result = train(ds, cfg_.model.architecture, cfg_.model.head, tc, cfg_.library);
        nlohmann::json ckpt{{"predictor", result.predictor}, {"train", tc}, {"dataset", ds.meta}};
        write_file("checkpoint.json", [&](std::ostream& out) { out << ckpt.dump(2) << '\n'; });
        write_file("history.csv", [&](std::ostream& out) { write_history_csv(out, result.history); });
        const auto& last = result.history.back();
        note("trained " + std::string(objective_name(tc.objective)) + ": final loss_xy " + format_real(last.loss_xy) +
             ", loss_y " + format_real(last.loss_y));
    }

    void evaluate_model() {
        const fs::path path = cfg_.checkpoint.value_or(fs::path(opt_.out) / "checkpoint.json");
        Predictor p = [&] {
            try {
                const auto j = detail::read_json_file(path);
                return predictor_from_json(j.contains("predictor") ? j.at("predictor") : j);
            } catch (const error& e) {
                throw ConfigError("checkpoint " + path.string() + ": " + e.what());
            }
        }();
        const auto bench = make_test_bench(cfg_.library, cfg_.oracle, cfg_.eval, seed());
        const auto report = evaluate_predictor(p, bench, cfg_.oracle.threshold(), cfg_.eval.threshold);
        nlohmann::json j = report;
        j["pool_rate"] = bench.inputs.pool_rate;
        j["heldout_positives"] = bench.inputs.heldout_positives.size();
        j["library_samples"] = bench.inputs.library_samples.size();
        write_file("eval.json", [&](std::ostream& out) { out << j.dump(2) << '\n'; });
        write_file("pr.csv", [&](std::ostream& out) { write_pr_csv(out, report.curve); });
        note("accuracy_est " + format_real(report.accuracy.value) + ", auprc_est " + format_real(report.curve.auprc) +
             ", ece_est " + format_real(report.ece.value));
    }

    void design() {
        const ToyFamily fam(cfg_.design.toy);
        const IndexSampler sampler{std::span<const double>(fam.weights())};
        auto info = information_matrices(fam, sampler, cfg_.design.samples, seed());
        const std::optional<double> rate = opt_.hit_rate ? opt_.hit_rate : cfg_.design.hit_rate;
        const auto grid = default_q_grid(rate.value_or(fam.hit_rate()));
        const auto report = design_report(std::move(info), grid, rate ? rate : std::optional<double>(fam.hit_rate()));
        const nlohmann::json j = report;
        write_file("design.json", [&](std::ostream& out) { out << j.dump(2) << '\n'; });
        write_file("design_det.csv", [&](std::ostream& out) { write_det_csv(out, report.optimum); });
        note("recommended q " + format_real(report.recommendation.q) + ", grid optimum " +
             format_real(report.optimum.q));
    }

    void sweep() {
        std::vector<Objective> objectives = {Objective::cross_entropy, Objective::leavs};
        if (opt_.objective) {
            objectives = {parse_objective(*opt_.objective)};
        }
        const auto rows = sweep_q(cfg_, std::span<const std::uint64_t>(cfg_.seeds),
                                  std::span<const Objective>(objectives));
        write_file("sweep_q.csv", [&](std::ostream& out) { write_sweep_csv(out, rows); });
        note("wrote " + std::to_string(rows.size()) + " sweep rows");
    }

    void verify_theory() {
        const ToyFamily fam(cfg_.verify.toy);
        std::vector<double> qs = cfg_.verify.q_values;
        if (qs.empty()) {
            qs = {fam.hit_rate(), 0.5, 1.0};
        }
        const std::vector<FitObjective> objectives = {FitObjective::leavs_hard, FitObjective::leavs_soft,
                                                      FitObjective::xy};
        const auto& seeds = opt_.seeds.empty() ? cfg_.verify.seeds : opt_.seeds;
        std::vector<std::vector<PathRow>> cells(qs.size() * objectives.size());
        parallel_for(cells.size(), [&](std::size_t i) {
            cells[i] = mle_path(fam, qs[i / objectives.size()], std::span<const std::size_t>(cfg_.verify.n_grid),
                                objectives[i % objectives.size()], std::span<const std::uint64_t>(seeds));
        });
        std::vector<PathRow> rows;
        for (auto& c : cells) {
            rows.insert(rows.end(), c.begin(), c.end());
        }
        write_file("mle_path.csv", [&](std::ostream& out) { write_path_csv(out, rows); });

        std::vector<BvmRow> bvm(seeds.size() * cfg_.verify.n_grid.size());
        if (fam.dimension() == 1) {
            parallel_for(bvm.size(), [&](std::size_t i) {
                const std::size_t n = cfg_.verify.n_grid[i % cfg_.verify.n_grid.size()];
                const std::uint64_t s = seeds[i / cfg_.verify.n_grid.size()];
                const auto data = sample_toy_data(fam, n, 1.0, s);
                const auto post = posterior_grid(fam, data, 1.0, cfg_.verify.grid);
                bvm[i] = {n, s, 1.0, post.map, post.sd, post.tv};
            });
        } else {
            bvm.clear();
        }
        write_file("bvm.csv", [&](std::ostream& out) { write_bvm_csv(out, bvm); });
        note("wrote " + std::to_string(rows.size()) + " fit rows and " + std::to_string(bvm.size()) +
             " posterior rows");
    }

private:
    std::uint64_t seed() const { return cfg_.seeds.front(); }

    ScreenDataset screen(std::uint64_t seed) const {
        ScreenConfig sc = cfg_.screen;
        sc.seed = seed;
        return run_screen(cfg_.library, cfg_.oracle, sc);
    }

    ScreenDataset read_dataset(const fs::path& path) const {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("dataset: cannot open " + path.string());
        }
        try {
            return read_dataset_jsonl(in);
        } catch (const error& e) {
            throw ConfigError("dataset " + path.string() + ": " + e.what());
        }
    }

    template <class Fn>
    void write_file(const std::string& name, Fn&& fn) const {
        const fs::path path = fs::path(opt_.out) / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw error(errc::io_error, "cannot write " + path.string());
        }
        fn(out);
        if (!out) {
            throw error(errc::io_error, "write failed for " + path.string());
        }
    }

    void note(const std::string& msg) const {
        if (!opt_.quiet) {
            std::cerr << msg << '\n';
        }
    }

    Options opt_;
    ExperimentConfig cfg_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Screen simulation, positives-only training and evaluation, and allocation design"};
    app.require_subcommand(1);
    Options opt;
    app.add_option("--config", opt.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--out", opt.out, "Output directory");
    app.add_option("--seed", opt.seeds, "Seed; repeat for several")->take_all();
    app.add_option("--q", opt.q, "Allocation fraction for the positive pool")->check(CLI::Range(0.0, 1.0));
    app.add_option("--objective", opt.objective, "Training objective")->check(CLI::IsMember({"xy", "leavs"}));
    app.add_option("--hit-rate", opt.hit_rate, "Observed hit rate for the design decision")
        ->check(CLI::Range(0.0, 1.0));
    app.add_flag("--quiet", opt.quiet, "Suppress progress messages");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"simulate", "Simulate a screen and write the measured dataset"},
        {"train", "Train a predictor and write a checkpoint and loss history"},
        {"evaluate", "Evaluate a checkpoint with positives-only estimators and ground truth"},
        {"design", "Information matrices, det H_q over q, and the allocation recommendation"},
        {"sweep-q", "Train and evaluate both objectives across the allocation grid"},
        {"verify-theory", "Consistency and posterior-shape checks on the toy family"},
    };
    for (const auto& [name, help] : commands) {
        app.add_subcommand(name, help)->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    Runner runner(opt);
    try {
        runner.load();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    }
    try {
        if (command == "simulate") {
            runner.simulate();
        } else if (command == "train") {
            runner.train_model();
        } else if (command == "evaluate") {
            runner.evaluate_model();
        } else if (command == "design") {
            runner.design();
        } else if (command == "sweep-q") {
            runner.sweep();
        } else {
            runner.verify_theory();
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime;
    }
    return 0;
}
