// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "screenlab/screenlab.hpp"

namespace fs = std::filesystem;
using namespace screenlab;

namespace {

const fs::path data_dir = SCREENLAB_DATA_DIR;
const std::string cli = SCREENLAB_CLI_PATH;

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        pass = pass && ok;
        if (!ok) {
            detail += " [failed: " + what + "]";
        }
    }
    void note(const std::string& s) { detail += " " + s; }
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

// 1. Qualitative shape of the allocation sweep on the calibrated synthetic screen.
Outcome sweep_shape() {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    const auto cfg = load_experiment(data_dir / "experiment.json");
    o.require(cfg.seeds.size() >= 5, "at least 5 seeds");
    double leavs_auprc = 0.0, leavs_auprc_true = 0.0, xy_rep_auprc = 0.0, xy_rep_auprc_true = 0.0;
    double xy_acc = 0.0, xy_acc_true = 0.0, leavs_acc = 0.0, leavs_acc_true = 0.0, rate = 0.0;
    for (std::uint64_t seed : cfg.seeds) {
        const auto s = prepare_sweep_seed(cfg, seed);
        o.require(std::abs(s.observed_hit_rate - 0.015) <= 0.003, "hit rate 0.015 +- 0.003 for seed " + std::to_string(seed));
        const auto leavs = run_sweep_cell(cfg, s, 1.0, Objective::leavs);
        const auto xy_rep = run_sweep_cell(cfg, s, s.observed_hit_rate, Objective::cross_entropy);
        const auto xy_pos = run_sweep_cell(cfg, s, 1.0, Objective::cross_entropy);
        leavs_auprc += leavs.auprc_est;
        leavs_auprc_true += leavs.auprc_true;
        leavs_acc += leavs.accuracy_est;
        leavs_acc_true += leavs.accuracy_true;
        xy_rep_auprc += xy_rep.auprc_est;
        xy_rep_auprc_true += xy_rep.auprc_true;
        xy_acc += xy_pos.accuracy_est;
        xy_acc_true += xy_pos.accuracy_true;
        rate += s.observed_hit_rate;
    }
    const double k = static_cast<double>(cfg.seeds.size());
    leavs_auprc /= k, leavs_auprc_true /= k, leavs_acc /= k, leavs_acc_true /= k;
    xy_rep_auprc /= k, xy_rep_auprc_true /= k, xy_acc /= k, xy_acc_true /= k, rate /= k;
    // Estimated metrics are what a positives-only screen can report; the labeled test set must agree.
    for (const auto& [est, tru, tag] : {std::tuple{leavs_auprc, xy_rep_auprc, "est"},
                                        std::tuple{leavs_auprc_true, xy_rep_auprc_true, "true"}}) {
        o.require(est >= 2.0 * tru, std::string("(a) ") + tag);
    }
    o.require(leavs_auprc >= 5.0 * rate && leavs_auprc_true >= 5.0 * rate, "(b)");
    o.require(xy_acc <= 0.05 && xy_acc_true <= 0.05, "(c)");
    o.require(leavs_acc >= xy_acc + 0.5 && leavs_acc_true >= xy_acc_true + 0.5, "(d)");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.require(secs <= 1200.0, "runtime <= 20 min");
    o.note("p1=" + fmt(rate) + " auprc leavs@1=" + fmt(leavs_auprc) + "/" + fmt(leavs_auprc_true) +
           " xy@p1=" + fmt(xy_rep_auprc) + "/" + fmt(xy_rep_auprc_true) + " acc xy@1=" + fmt(xy_acc) + "/" +
           fmt(xy_acc_true) + " leavs@1=" + fmt(leavs_acc) + "/" + fmt(leavs_acc_true) + " (est/true) " +
           fmt(secs, 3) + "s");
    return o;
}

struct World {
    EvalInputs inputs;
    std::vector<Sequence> test_x;
    std::vector<int> test_y;
};

World make_world() {
    World w;
    const auto& lib = default_library();
    const auto oracle = ActivityOracle::defaults();
    const auto heldout = simulate_cells(lib, oracle, 400000, 101);
    std::size_t pos = 0;
    for (const auto& c : heldout) {
        if (c.y == 1 && w.inputs.heldout_positives.size() < 500) {
            w.inputs.heldout_positives.push_back(c.x);
        }
        pos += static_cast<std::size_t>(c.y);
    }
    w.inputs.pool_rate = static_cast<double>(pos) / static_cast<double>(heldout.size());
    w.inputs.library_samples = sample_sequences(lib, 100000, 102);
    for (auto& c : simulate_cells(lib, oracle, 100000, 103)) {
        w.test_x.push_back(std::move(c.x));
        w.test_y.push_back(c.y);
    }
    return w;
}

// 2. Positives-only estimates agree with labeled ground truth.
Outcome estimator_fidelity(const World& w) {
    Outcome o;
    const auto score = [oracle = ActivityOracle::defaults()](const Sequence& x) {
        return negbin::tail(oracle.threshold(), oracle.strength(x), oracle.dispersion());
    };
    const auto scored = score_inputs(score, w.inputs);
    const auto truth = true_metrics(score, std::span<const Sequence>(w.test_x), std::span<const int>(w.test_y),
                                    scored.thresholds, scored.bins);
    const double acc_err = std::abs(estimate_accuracy(scored, 0.5).value - truth.accuracy);
    const double ece_err = std::abs(estimate_ece(scored).value - truth.ece);
    const auto est = estimate_precision_recall(scored);
    double pr_err = 0.0;
    std::size_t compared = 0;
    for (const auto& e : est.points) {
        if (detail::fraction_above(scored.library_scores, e.threshold) < 0.001) {
            continue;
        }
        for (const auto& t : truth.curve.points) {
            if (t.threshold == e.threshold) {
                pr_err = std::max({pr_err, std::abs(e.recall - t.recall), std::abs(e.precision - t.precision)});
                ++compared;
            }
        }
    }
    o.require(w.inputs.heldout_positives.size() >= 500, "heldout positives >= 500");
    o.require(acc_err <= 0.02, "accuracy");
    o.require(compared > 0 && pr_err <= 0.03, "pointwise PR");
    o.require(ece_err <= 0.03, "ECE");
    o.note("|acc err|=" + fmt(acc_err) + " max PR err=" + fmt(pr_err) + " over " + std::to_string(compared) +
           " thresholds |ECE err|=" + fmt(ece_err));
    return o;
}

// 3. Exact algebraic cases.
Outcome exact_cases(const World& w) {
    Outcome o;
    const auto one = score_inputs([](const Sequence&) { return 1.0; }, w.inputs);
    const auto zero = score_inputs([](const Sequence&) { return 0.0; }, w.inputs);
    o.require(estimate_accuracy(one, 0.5).value == w.inputs.pool_rate, "t=1 gives p1");
    o.require(estimate_accuracy(zero, 0.5).value == 1.0 - w.inputs.pool_rate, "t=0 gives 1-p1");

    const auto& lib = default_library();
    const auto cells = simulate_cells(lib, ActivityOracle::defaults(), 3000, 7);
    ScreenDataset ds;
    ds.alphabet = lib.alphabet();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        ds.measured.push_back({cells[i].x, cells[i].y, cells[i].count, i});
    }
    ds.pool = ds.measured_counts();
    const auto p = Predictor::initialized(Architecture::mlp(8), Head::bernoulli, lib.length(), lib.alphabet(), 3);
    const auto samples = sample_sequences(lib, 1000, 8);
    const auto batch = measured_batch(ds, Head::bernoulli);
    const double xy = loss_xy(p, batch);
    const double leavs = xy + 5.0 * loss_y(p, ds.pool, ds.measured_counts(), samples);
    o.require(leavs == xy, "leavs with N=n equals loss_xy");
    TrainConfig tc;
    tc.epochs = 2;
    tc.library_samples = 64;
    tc.objective = Objective::leavs;
    const auto a = train(ds, p, tc, lib);
    tc.objective = Objective::cross_entropy;
    const auto b = train(ds, p, tc, lib);
    o.require(a.predictor.theta().size() == b.predictor.theta().size() &&
                  std::equal(a.predictor.theta().begin(), a.predictor.theta().end(), b.predictor.theta().begin()),
              "training with N=n matches cross-entropy bitwise");
    const Predictor flat(Architecture::linear(), Head::bernoulli, lib.length(), lib.alphabet(),
                         std::vector<double>(lib.length() * lib.alphabet_size() + 1, 0.0));
    o.require(marginal_positive_rate(flat, samples) == 0.5, "m_hat(theta=0) = 0.5");
    o.note("loss_xy=" + fmt(xy, 10) + " m_hat(0)=" + fmt(marginal_positive_rate(flat, samples)));
    return o;
}

std::vector<Sequence> enumerate(const SequenceDistribution& d) {
    std::vector<Sequence> out;
    std::size_t total = 1;
    for (std::size_t i = 0; i < d.length(); ++i) {
        total *= d.alphabet_size();
    }
    for (std::size_t code = 0; code < total; ++code) {
        Sequence x;
        for (std::size_t i = 0, c = code; i < d.length(); ++i, c /= d.alphabet_size()) {
            x.tokens.push_back(static_cast<Token>(c % d.alphabet_size()));
        }
        out.push_back(std::move(x));
    }
    return out;
}

// 4. The Monte Carlo marginal is unbiased and its error shrinks as M^-1/2.
Outcome mc_estimator() {
    Outcome o;
    const SequenceDistribution lib("ABC", 3, {0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.25, 0.25, 0.5});
    auto p = Predictor::initialized(Architecture::mlp(4), Head::bernoulli, lib.length(), lib.alphabet(), 2);
    Rng rng = make_rng(2, 1);
    for (double& v : p.mutable_theta()) {
        v = -1.5 + 3.0 * uniform01(rng);
    }
    double exact = 0.0;
    for (const auto& x : enumerate(lib)) {
        exact += std::exp(log_prob(lib, x).value()) * predict(p, x);
    }
    const double bias = std::abs(marginal_positive_rate(p, sample_sequences(lib, 100000, 5)) - exact);
    o.require(bias <= 1e-3, "bias at M=1e5");

    std::vector<double> lx, ly;
    const std::size_t reps = 400;
    for (std::size_t M : {100u, 1000u, 10000u, 100000u}) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t r = 0; r < reps; ++r) {
            const double m = marginal_positive_rate(p, sample_sequences(lib, M, derive_seed(M, r)));
            sum += m;
            sq += m * m;
        }
        const double mean = sum / reps;
        lx.push_back(std::log(static_cast<double>(M)));
        ly.push_back(0.5 * std::log(sq / reps - mean * mean));
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = num / den;
    o.require(std::abs(slope + 0.5) <= 0.05, "SE slope");
    o.note("exact=" + fmt(exact, 6) + " |bias|=" + fmt(bias) + " SE slope=" + fmt(slope));
    return o;
}

// 5. Analytic gradients against central differences for every architecture and head.
Outcome gradients() {
    Outcome o;
    const std::size_t length = 12;
    const auto lib = SequenceDistribution::uniform(length);
    Rng rng = make_rng(9);
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto& arch : {Architecture::linear(), Architecture::mlp(8), Architecture::conv(4, 3, 5)}) {
        for (Head head : {Head::bernoulli, Head::negbin}) {
            for (int draw = 0; draw < 20; ++draw) {
                auto p = Predictor::initialized(arch, head, length, lib.alphabet(), 1);
                for (double& v : p.mutable_theta()) {
                    v = -0.6 + 1.2 * uniform01(rng);
                }
                Batch batch;
                batch.sequences = sample_sequences(lib, 6, rng());
                for (std::size_t i = 0; i < 6; ++i) {
                    batch.targets.push_back(static_cast<std::int64_t>(uniform_index(rng, head == Head::bernoulli ? 2 : 40)));
                }
                const auto g = gradient(p, batch);
                const double h = 1e-5;
                for (std::size_t i = 0; i < p.dimension(); ++i) {
                    const double orig = p.theta()[i];
                    p.mutable_theta()[i] = orig + h;
                    const double up = log_likelihood(p, batch);
                    p.mutable_theta()[i] = orig - h;
                    const double down = log_likelihood(p, batch);
                    p.mutable_theta()[i] = orig;
                    const double fd = (up - down) / (2 * h);
                    const double err = std::abs(g[i] - fd) / (std::abs(fd) + 1e-3);
                    worst = std::max(worst, err);
                    if (std::abs(g[i] - fd) > 1e-4 * std::abs(fd) + 1e-7) {
                        o.require(false, std::string(arch_name(arch.kind)) + "/" + head_name(head));
                    }
                    ++checked;
                }
            }
        }
    }
    o.note(std::to_string(checked) + " coordinates, worst relative error " + fmt(worst));
    return o;
}

std::vector<std::uint64_t> ten_seeds() {
    std::vector<std::uint64_t> s(10);
    std::iota(s.begin(), s.end(), 1);
    return s;
}

std::size_t count_if_rows(const std::vector<PathRow>& rows, const std::function<bool(const PathRow&)>& f) {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), f));
}

// 6. Pool-likelihood fits are consistent at every allocation; cross-entropy is not.
Outcome consistency(const ToyFamily& fam) {
    Outcome o;
    const auto seeds = ten_seeds();
    const std::vector<std::size_t> big = {5000};
    std::string summary;
    for (double q : {fam.hit_rate(), 0.5, 1.0}) {
        const auto rows = mle_path(fam, q, big, FitObjective::leavs_hard, seeds);
        const auto good = count_if_rows(rows, [](const PathRow& r) { return r.tv < 0.05; });
        o.require(good * 2 > seeds.size(), "leavs q=" + fmt(q));
        summary += "leavs@" + fmt(q) + " " + std::to_string(good) + "/10 ";
    }
    const std::vector<std::size_t> all_n = {50, 100, 200, 500, 1000, 2000, 5000};
    bool every_n = true;
    double min_tv = 1.0;
    for (std::size_t n : all_n) {
        const auto rows = mle_path(fam, 1.0, std::vector<std::size_t>{n}, FitObjective::xy, seeds);
        const auto bad = count_if_rows(rows, [](const PathRow& r) { return r.tv > 0.3; });
        every_n = every_n && bad * 2 > seeds.size();
        for (const auto& r : rows) {
            min_tv = std::min(min_tv, r.tv);
        }
    }
    o.require(every_n, "xy q=1 TV > 0.3 at every n");
    const auto rep = mle_path(fam, fam.hit_rate(), big, FitObjective::xy, seeds);
    const auto rep_good = count_if_rows(rep, [](const PathRow& r) { return r.tv < 0.05; });
    o.require(rep_good * 2 > seeds.size(), "xy q=p1");
    o.note(summary + "xy@1 min TV " + fmt(min_tv) + " xy@p1 " + std::to_string(rep_good) + "/10");
    return o;
}

// 7. D-optimality of positives-only measurement for sparse activity, and its failure otherwise.
Outcome d_optimality() {
    Outcome o;
    const ToyFamily sparse(ToyConfig{3, 5, 0.015, {1.0}, 0.03});
    const IndexSampler sampler{std::span<const double>(sparse.weights())};
    const auto grid = default_q_grid(sparse.hit_rate());
    double worst_z = 1e300;
    double worst_slack_z = -1e300;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto est = information_matrices(sparse, sampler, 100000, seed);
        const auto opt = optimal_q(est, grid);
        const double top = opt.curve.back().det;
        o.require(opt.curve.back().q == 1.0 && opt.q == 1.0, "argmax at q=1");
        for (const auto& pt : opt.curve) {
            if (pt.q >= 1.0) {
                continue;
            }
            const double se = batch_standard_error(est, [q = pt.q](const InformationBatch& b) {
                return asymptotic_precision(1.0, b.i0, b.i1, b.p_s0_given_y0).determinant() -
                       asymptotic_precision(q, b.i0, b.i1, b.p_s0_given_y0).determinant();
            });
            worst_z = std::min(worst_z, (top - pt.det) / se);
        }
        const double slack_se = batch_standard_error(est, [](const InformationBatch& b) {
            return b.p_s0_given_y0 - b.eta / (1 - b.eta);
        });
        worst_slack_z = std::max(worst_slack_z, (est.p_s0_given_y0 - est.eta / (1 - est.eta)) / slack_se);
    }
    o.require(worst_z > 3.0, "det H_1 > det H_q beyond 3 sigma");
    o.require(worst_slack_z <= 3.0, "p(S0|y0) <= eta/(1-eta)");
    const ToyFamily dense(ToyConfig{3, 5, 0.25, {1.0}, 0.5});
    const auto exact = exact_information(dense);
    const auto weak = optimal_q(exact.i0, Eigen::MatrixXd(0.005 * exact.i0), exact.p_s0_given_y0, default_q_grid());
    o.require(weak.q != 1.0, "weak positives argmax not 1");
    o.note("min z(det gap)=" + fmt(worst_z) + " max z(slack)=" + fmt(worst_slack_z) + " dense argmax q=" + fmt(weak.q));
    return o;
}

// 8. Entropy reduction of positives-only measurement under the back-of-envelope configuration.
Outcome information_gain() {
    Outcome o;
    const double p1 = 0.015;
    const double eta = 2 * p1;
    const Eigen::MatrixXd i = Eigen::MatrixXd::Identity(1, 1);
    const double gain = entropy_gain(i, i, eta / (1 - eta), 1.0, p1);
    const auto bound = info_gain_bound(p1, 1);
    o.require(gain >= -0.5 * std::log(3 * p1) - 0.05, "entropy gain");
    o.require(std::abs(bound.nats - 1.551) <= 0.001, "bound nats");
    o.require(std::abs(bound.sample_multiplier - 22.2) <= 0.1, "multiplier");
    o.note("gain=" + fmt(gain) + " bound=" + fmt(bound.nats) + " multiplier=" + fmt(bound.sample_multiplier, 3));
    return o;
}

// 9. The grid posterior approaches its Gaussian approximation.
Outcome bernstein_von_mises(const ToyFamily& fam) {
    Outcome o;
    const auto post = posterior_grid(fam, sample_toy_data(fam, 5000, 1.0, 1), 1.0, GridSpec{});
    o.require(post.tv <= 0.05, "TV at n=5000");
    std::size_t monotone = 0;
    for (std::uint64_t seed : ten_seeds()) {
        std::vector<double> tv;
        for (std::size_t n : {50u, 500u, 5000u}) {
            tv.push_back(posterior_grid(fam, sample_toy_data(fam, n, 1.0, seed), 1.0, GridSpec{}).tv);
        }
        monotone += tv[0] > tv[1] && tv[1] > tv[2] ? 1 : 0;
    }
    o.require(monotone >= 7, "TV decreasing");
    o.note("TV(n=5000)=" + fmt(post.tv) + " decreasing in " + std::to_string(monotone) + "/10 seeds");
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& command, const fs::path& out, int threads) {
    const std::string cmd = "SCREENLAB_THREADS=" + std::to_string(threads) + " '" + cli + "' " + command +
                            " --config '" + (data_dir / "smoke.json").string() + "' --out '" + out.string() +
                            "' --quiet >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 10. Every CLI command is byte-reproducible, independent of the worker count.
Outcome determinism() {
    Outcome o;
    const fs::path root = fs::temp_directory_path() / "screenlab_acceptance";
    fs::remove_all(root);
    const std::vector<std::pair<fs::path, int>> runs = {{root / "a", 1}, {root / "b", 1}, {root / "c", 4}};
    const std::vector<std::string> commands = {"simulate", "train", "evaluate", "design", "sweep-q", "verify-theory"};
    for (const auto& [dir, threads] : runs) {
        for (const auto& c : commands) {
            o.require(run_cli(c, dir, threads) == 0, c + " exit code");
        }
    }
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        const auto name = entry.path().filename();
        for (const auto& other : {root / "b", root / "c"}) {
            o.require(slurp(entry.path()) == slurp(other / name), name.string() + " differs in " + other.filename().string());
        }
        ++files;
    }
    o.require(files == 10, "ten output files");
    o.note(std::to_string(files) + " files identical across 2 runs and SCREENLAB_THREADS 1 vs 4");
    fs::remove_all(root);
    return o;
}

}  // namespace

int main() {
    const auto verify_cfg = load_experiment(data_dir / "experiment.json").verify;
    const ToyFamily fam(verify_cfg.toy);
    const World world = make_world();
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"allocation sweep shape", sweep_shape},
        {"estimator fidelity", [&] { return estimator_fidelity(world); }},
        {"exact algebraic cases", [&] { return exact_cases(world); }},
        {"Monte Carlo marginal", mc_estimator},
        {"gradient correctness", gradients},
        {"consistency", [&] { return consistency(fam); }},
        {"D-optimality", d_optimality},
        {"information gain", information_gain},
        {"posterior normality", [&] { return bernstein_von_mises(fam); }},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s %zu %s:%s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
