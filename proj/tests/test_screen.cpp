#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "screenlab/screen.hpp"
#include "support.hpp"

using namespace screenlab;

namespace {

std::vector<LabeledCell> synthetic(std::size_t positives, std::size_t negatives) {
    const auto d = SequenceDistribution::uniform(4);
    const auto xs = sample_sequences(d, positives + negatives, 99);
    std::vector<int> ys(xs.size(), 0);
    std::fill(ys.begin(), ys.begin() + static_cast<std::ptrdiff_t>(positives), 1);
    Rng rng = make_rng(100);
    std::shuffle(ys.begin(), ys.end(), rng);
    std::vector<LabeledCell> out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out.push_back({xs[i], ys[i], std::nullopt});
    }
    return out;
}

void check_invariants(const ScreenDataset& ds, std::size_t n, double q, std::size_t N) {
    const auto mc = ds.measured_counts();
    EXPECT_EQ(mc.positive, allocate_positives(n, q));
    EXPECT_EQ(mc.negative, n - allocate_positives(n, q));
    EXPECT_EQ(ds.pool.total(), N);
    EXPECT_LE(mc.positive, ds.pool.positive);
    EXPECT_LE(mc.negative, ds.pool.negative);
    for (std::size_t i = 1; i < ds.measured.size(); ++i) {
        EXPECT_LT(ds.measured[i - 1].cell, ds.measured[i].cell);
    }
}

class ThreadEnv {
public:
    explicit ThreadEnv(const char* value) {
        if (const char* old = std::getenv("SCREENLAB_THREADS")) {
            saved_ = old;
        }
        ::setenv("SCREENLAB_THREADS", value, 1);
    }
    ~ThreadEnv() {
        if (saved_) {
            ::setenv("SCREENLAB_THREADS", saved_->c_str(), 1);
        } else {
            ::unsetenv("SCREENLAB_THREADS");
        }
    }

private:
    std::optional<std::string> saved_;
};

}  // namespace

TEST(Allocation, RoundsHalfToEven) {
    EXPECT_EQ(allocate_positives(5, 0.5), 2u);
    EXPECT_EQ(allocate_positives(7, 0.5), 4u);
    EXPECT_EQ(allocate_positives(10, 0.5), 5u);
    EXPECT_EQ(allocate_positives(100, 1.0), 100u);
    EXPECT_EQ(allocate_positives(100, 0.0), 0u);
    EXPECT_EQ(allocate_positives(2000, 0.015), 30u);
}

TEST(ScreenConfig, Validation) {
    EXPECT_SCREENLAB_ERROR((ScreenConfig{10, 11, 0.5, 1}.validate()), errc::invalid_argument);
    EXPECT_SCREENLAB_ERROR((ScreenConfig{10, 5, 1.5, 1}.validate()), errc::invalid_argument);
    EXPECT_SCREENLAB_ERROR((ScreenConfig{10, 5, -0.1, 1}.validate()), errc::invalid_argument);
    EXPECT_SCREENLAB_ERROR((ScreenConfig{0, 0, 0.5, 1}.validate()), errc::invalid_argument);
}

TEST(SubsampleScreen, AllPositivesAtQOne) {
    const auto full = synthetic(340, 5000);
    const auto ds = subsample_screen(full, 1.0, 100, 1);
    EXPECT_EQ(ds.measured_counts(), (PoolCounts{100, 0}));
    EXPECT_EQ(ds.pool, (PoolCounts{340, 5000}));
    check_invariants(ds, 100, 1.0, 5340);
}

TEST(SubsampleScreen, HalfSplit) {
    const auto full = synthetic(340, 5000);
    const auto ds = subsample_screen(full, 0.5, 10, 2);
    EXPECT_EQ(ds.measured_counts(), (PoolCounts{5, 5}));
}

TEST(SubsampleScreen, InsufficientPools) {
    const auto full = synthetic(340, 5000);
    EXPECT_SCREENLAB_ERROR(subsample_screen(full, 1.0, 400, 1), errc::insufficient_positives);
    const auto few_neg = synthetic(400, 3);
    EXPECT_SCREENLAB_ERROR(subsample_screen(few_neg, 0.0, 5, 1), errc::insufficient_negatives);
    EXPECT_SCREENLAB_ERROR(subsample_screen(full, 1.1, 5, 1), errc::invalid_argument);
}

TEST(SubsampleScreen, LargeNegativePool) {
    const auto full = synthetic(400, 11000);
    const auto ds = subsample_screen(full, 1.0, 170, 3);
    EXPECT_EQ(ds.measured_counts(), (PoolCounts{170, 0}));
    const auto neg = subsample_screen(full, 0.0, 5, 3);
    EXPECT_EQ(neg.measured_counts(), (PoolCounts{0, 5}));
}

TEST(SubsampleScreen, ZeroBudgetKeepsPoolCounts) {
    const auto full = synthetic(400, 11000);
    const auto ds = subsample_screen(full, 0.3, 0, 3);
    EXPECT_TRUE(ds.measured.empty());
    EXPECT_EQ(ds.pool, (PoolCounts{400, 11000}));
}

TEST(SubsampleScreen, WithoutReplacementAndFaithfulToSource) {
    const auto full = synthetic(300, 700);
    const auto ds = subsample_screen(full, 0.3, 900, 8);
    check_invariants(ds, 900, 0.3, 1000);
    for (const auto& m : ds.measured) {
        EXPECT_EQ(m.x, full[m.cell].x);
        EXPECT_EQ(m.y, full[m.cell].y);
    }
}

TEST(SubsampleScreen, InvariantsAcrossGrid) {
    const auto full = synthetic(500, 1500);
    for (double q : {0.0, 0.013, 0.25, 0.5, 0.77, 1.0}) {
        for (std::size_t n : {0u, 1u, 3u, 99u, 400u}) {
            check_invariants(subsample_screen(full, q, n, n + 17), n, q, 2000);
        }
    }
}

TEST(RunScreen, ReportsPoolsAndRetainsCounts) {
    const auto oracle = ActivityOracle::defaults();
    const ScreenConfig cfg{50000, 200, 0.5, 4};
    const auto ds = run_screen(default_library(), oracle, cfg);
    check_invariants(ds, 200, 0.5, 50000);
    for (const auto& m : ds.measured) {
        ASSERT_TRUE(m.count.has_value());
        EXPECT_EQ(m.y, label(*m.count, oracle.threshold()));
    }
    const double rate = ds.pool.positive_rate();
    EXPECT_NEAR(rate, 0.015, 4.0 * std::sqrt(0.015 * 0.985 / 50000));
    EXPECT_EQ(ds.meta.at("seed"), 4u);
}

TEST(RunScreen, BudgetBeyondPositivesFails) {
    const ScreenConfig cfg{10000, 400, 1.0, 1};
    EXPECT_SCREENLAB_ERROR(run_screen(default_library(), ActivityOracle::defaults(), cfg),
                           errc::insufficient_positives);
}

TEST(RunScreen, ShortLibraryIsRejected) {
    const ScreenConfig cfg{100, 10, 0.0, 1};
    EXPECT_SCREENLAB_ERROR(run_screen(SequenceDistribution::uniform(6), ActivityOracle::defaults(), cfg),
                           errc::rule_out_of_range);
}

TEST(RunScreen, IndependentOfThreadCount) {
    const ScreenConfig cfg{200000, 500, 0.3, 12};
    ScreenDataset a;
    ScreenDataset b;
    {
        ThreadEnv env("1");
        a = run_screen(default_library(), ActivityOracle::defaults(), cfg);
    }
    {
        ThreadEnv env("4");
        b = run_screen(default_library(), ActivityOracle::defaults(), cfg);
    }
    std::ostringstream sa;
    std::ostringstream sb;
    write_dataset_jsonl(sa, a);
    write_dataset_jsonl(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
}

// At q equal to the observed pool rate the measured cells look like an iid sample of (x, y).
TEST(RunScreen, ObservedRateAllocationIsExchangeable) {
    const auto& lib = default_library();
    const auto oracle = ActivityOracle::defaults();
    const std::size_t N = 400000;
    const std::size_t n = 40000;
    const auto cells = simulate_cells(lib, oracle, N, 21);
    std::size_t pos = 0;
    for (const auto& c : cells) {
        pos += c.y;
    }
    const double q = static_cast<double>(pos) / N;
    const auto ds = subsample_screen(cells, q, n, 22);
    const auto mc = ds.measured_counts();
    const double p1 = 0.015;
    EXPECT_NEAR(static_cast<double>(mc.positive) / n, p1, 3.0 * std::sqrt(p1 * (1 - p1) / n) + 3.0 * std::sqrt(p1 * (1 - p1) / N));

    std::vector<std::size_t> counts(lib.length() * lib.alphabet_size(), 0);
    for (const auto& m : ds.measured) {
        for (std::size_t pos_i = 0; pos_i < lib.length(); ++pos_i) {
            ++counts[pos_i * lib.alphabet_size() + m.x[pos_i]];
        }
    }
    // Mixing the pools at the observed rate recovers the library marginals.
    for (std::size_t pos_i = 0; pos_i < lib.length(); ++pos_i) {
        for (std::size_t a = 0; a < lib.alphabet_size(); ++a) {
            const double p = lib.prob(pos_i, static_cast<Token>(a));
            const double freq = static_cast<double>(counts[pos_i * lib.alphabet_size() + a]) / n;
            EXPECT_NEAR(freq, p, 3.5 * std::sqrt(p * (1 - p) / n) + 1e-12) << "pos " << pos_i << " token " << a;
        }
    }
}

// At q=1 the measured cells are draws from p(x | y=1); compare with rejection sampling.
TEST(RunScreen, PositivesMatchRejectionSampler) {
    const auto& lib = default_library();
    const auto oracle = ActivityOracle::defaults();
    const std::size_t n = 10000;
    const ScreenConfig cfg{900000, n, 1.0, 31};
    const auto ds = run_screen(lib, oracle, cfg);

    std::vector<Sequence> reference;
    Rng rng = make_rng(32);
    Sequence x;
    while (reference.size() < n) {
        lib.sample_into(rng, x);
        if (label(oracle.sample_count(x, rng), oracle.threshold()) == 1) {
            reference.push_back(x);
        }
    }
    const std::size_t a_size = lib.alphabet_size();
    std::vector<double> f_screen(lib.length() * a_size, 0.0);
    std::vector<double> f_ref(lib.length() * a_size, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < lib.length(); ++p) {
            f_screen[p * a_size + ds.measured[i].x[p]] += 1.0 / n;
            f_ref[p * a_size + reference[i][p]] += 1.0 / n;
        }
    }
    for (std::size_t k = 0; k < f_ref.size(); ++k) {
        EXPECT_NEAR(f_screen[k], f_ref[k], 0.02) << "pos " << k / a_size << " token " << k % a_size;
    }
}

TEST(SplitHoldout, Halves) {
    const auto full = synthetic(300, 700);
    const auto ds = subsample_screen(full, 0.5, 100, 1);
    const auto [train, held] = split_holdout(ds, 0.5, 7);
    EXPECT_EQ(train.measured.size(), 50u);
    EXPECT_EQ(held.measured.size(), 50u);
    EXPECT_EQ(train.pool.total() + held.pool.total(), 1000u);
    EXPECT_EQ(train.pool.positive + held.pool.positive, 300u);
    EXPECT_LE(held.measured_counts().positive, held.pool.positive);
    EXPECT_LE(train.measured_counts().negative, train.pool.negative);
}

TEST(SplitHoldout, TenPercent) {
    const auto full = synthetic(9000, 20000);
    const auto ds = subsample_screen(full, 1.0, 9000, 1);
    const auto [train, held] = split_holdout(ds, 0.1, 3);
    EXPECT_EQ(held.measured.size(), 900u);
    EXPECT_EQ(train.measured.size(), 8100u);
    EXPECT_EQ(held.pool.positive, 900u);
    EXPECT_EQ(held.pool.negative, 2000u);
    std::vector<std::size_t> cells;
    for (const auto& m : train.measured) {
        cells.push_back(m.cell);
    }
    for (const auto& m : held.measured) {
        cells.push_back(m.cell);
    }
    std::sort(cells.begin(), cells.end());
    EXPECT_EQ(std::adjacent_find(cells.begin(), cells.end()), cells.end());
    EXPECT_EQ(cells.size(), 9000u);
}

TEST(SplitHoldout, DegenerateAndInvalid) {
    const auto full = synthetic(10, 10);
    const auto ds = subsample_screen(full, 0.5, 4, 1);
    EXPECT_SCREENLAB_ERROR(split_holdout(ds, 0.01, 1), errc::degenerate_split);
    EXPECT_SCREENLAB_ERROR(split_holdout(ds, 0.99, 1), errc::degenerate_split);
    EXPECT_SCREENLAB_ERROR(split_holdout(ds, 1.0, 1), errc::invalid_argument);
}

TEST(DatasetJsonl, RoundTrip) {
    const ScreenConfig cfg{30000, 60, 0.5, 9};
    const auto ds = run_screen(default_library(), ActivityOracle::defaults(), cfg);
    std::stringstream buf;
    write_dataset_jsonl(buf, ds);
    const auto back = read_dataset_jsonl(buf);
    EXPECT_EQ(back.pool, ds.pool);
    ASSERT_EQ(back.measured.size(), ds.measured.size());
    for (std::size_t i = 0; i < ds.measured.size(); ++i) {
        EXPECT_EQ(back.measured[i].x, ds.measured[i].x);
        EXPECT_EQ(back.measured[i].y, ds.measured[i].y);
        EXPECT_EQ(back.measured[i].count, ds.measured[i].count);
        EXPECT_EQ(back.measured[i].cell, ds.measured[i].cell);
    }
    EXPECT_EQ(back.meta, ds.meta);
    std::stringstream again;
    write_dataset_jsonl(again, back);
    std::stringstream first;
    write_dataset_jsonl(first, ds);
    EXPECT_EQ(again.str(), first.str());
}

TEST(DatasetJsonl, RejectsMalformed) {
    std::stringstream no_header(R"({"seq":"AC","y":1})");
    EXPECT_SCREENLAB_ERROR(read_dataset_jsonl(no_header), errc::parse_error);
    std::stringstream bad_json("{not json\n");
    EXPECT_SCREENLAB_ERROR(read_dataset_jsonl(bad_json), errc::parse_error);
    std::stringstream bad_label(
        "{\"type\":\"header\",\"pool_counts\":[1,1],\"alphabet\":\"AC\"}\n{\"seq\":\"AC\",\"y\":2}\n");
    EXPECT_SCREENLAB_ERROR(read_dataset_jsonl(bad_label), errc::parse_error);
    std::stringstream too_many(
        "{\"type\":\"header\",\"pool_counts\":[0,1],\"alphabet\":\"AC\"}\n{\"seq\":\"AC\",\"y\":1}\n");
    EXPECT_SCREENLAB_ERROR(read_dataset_jsonl(too_many), errc::parse_error);
    std::stringstream missing_seq("{\"type\":\"header\",\"pool_counts\":[1,1],\"alphabet\":\"AC\"}\n{\"y\":1}\n");
    EXPECT_SCREENLAB_ERROR(read_dataset_jsonl(missing_seq), errc::parse_error);
}

TEST(LabeledCsv, ReadsColumnsInAnyOrder) {
    std::stringstream in("y,count,seq\n1,40,ACDE\n0,,CCCC\r\n\n0,3,DDDD\n");
    const auto cells = read_labeled_csv(in, std::string(amino_acids));
    ASSERT_EQ(cells.size(), 3u);
    EXPECT_EQ(cells[0].y, 1);
    EXPECT_EQ(cells[0].count, 40);
    EXPECT_FALSE(cells[1].count.has_value());
    EXPECT_EQ(cells[2].count, 3);
    const auto ds = subsample_screen(cells, 0.5, 2, 1);
    EXPECT_EQ(ds.measured_counts(), (PoolCounts{1, 1}));
}

TEST(LabeledCsv, RejectsMalformed) {
    std::stringstream no_y("seq,count\nACDE,3\n");
    EXPECT_SCREENLAB_ERROR(read_labeled_csv(no_y, std::string(amino_acids)), errc::parse_error);
    std::stringstream bad_y("seq,y\nACDE,yes\n");
    EXPECT_SCREENLAB_ERROR(read_labeled_csv(bad_y, std::string(amino_acids)), errc::parse_error);
    std::stringstream y_two("seq,y\nACDE,2\n");
    EXPECT_SCREENLAB_ERROR(read_labeled_csv(y_two, std::string(amino_acids)), errc::parse_error);
    std::stringstream empty("");
    EXPECT_SCREENLAB_ERROR(read_labeled_csv(empty, std::string(amino_acids)), errc::parse_error);
}
