#pragma once

// Sort-then-sequence screen: N cells are sorted into positive and negative pools, and a
// sequencing budget n is split between the pools by the allocation fraction q.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "screenlab/core.hpp"
#include "screenlab/oracle.hpp"
#include "screenlab/parallel.hpp"
#include "screenlab/seqmodel.hpp"

namespace screenlab {

struct ScreenConfig {
    std::size_t N = 400000;
    std::size_t n = 2000;
    double q = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (N == 0) {
            throw error(errc::invalid_argument, "N must be positive");
        }
        if (n > N) {
            throw error(errc::invalid_argument, "sequencing budget n exceeds N");
        }
        if (!(q >= 0.0 && q <= 1.0)) {
            throw error(errc::invalid_argument, "allocation q must lie in [0, 1]");
        }
    }
};

struct LabeledCell {
    Sequence x;
    int y = 0;
    std::optional<std::int64_t> count;
};

struct MeasuredCell {
    Sequence x;
    int y = 0;
    std::optional<std::int64_t> count;
    std::size_t cell = 0;  // index in the originating screen
};

struct PoolCounts {
    std::size_t positive = 0;
    std::size_t negative = 0;

    std::size_t total() const noexcept { return positive + negative; }
    double positive_rate() const noexcept {
        return total() == 0 ? 0.0 : static_cast<double>(positive) / static_cast<double>(total());
    }
    bool operator==(const PoolCounts&) const = default;
};

struct ScreenDataset {
    std::vector<MeasuredCell> measured;
    PoolCounts pool;
    std::string alphabet = std::string(amino_acids);
    nlohmann::json meta = nlohmann::json::object();

    PoolCounts measured_counts() const {
        PoolCounts c;
        for (const auto& m : measured) {
            (m.y == 1 ? c.positive : c.negative) += 1;
        }
        return c;
    }
};

inline constexpr std::size_t screen_shard_size = 1 << 16;

// Simulates N cells. Shards draw from independent derived streams, so the result does not
// depend on how shards are scheduled.
inline std::vector<LabeledCell> simulate_cells(const SequenceDistribution& dist, const ActivityOracle& oracle,
                                               std::size_t cells, std::uint64_t seed) {
    if (oracle.span() > dist.length()) {
        throw error(errc::rule_out_of_range, "oracle rules exceed library length");
    }
    std::vector<LabeledCell> out(cells);
    const std::size_t shards = (cells + screen_shard_size - 1) / screen_shard_size;
    parallel_for(shards, [&](std::size_t shard) {
        Rng rng = make_rng(seed, 0x5c4ee0000ULL + shard);
        const std::size_t start = shard * screen_shard_size;
        const std::size_t stop = std::min(cells, start + screen_shard_size);
        for (std::size_t i = start; i < stop; ++i) {
            auto& cell = out[i];
            dist.sample_into(rng, cell.x);
            const auto c = oracle.sample_count(cell.x, rng);
            cell.count = c;
            cell.y = label(c, oracle.threshold());
        }
    });
    return out;
}

namespace detail {

// k distinct elements of `pool`, uniformly, by partial Fisher-Yates.
inline std::vector<std::size_t> choose_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + uniform_index(rng, pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace detail

inline ScreenDataset subsample_screen(const std::vector<LabeledCell>& full, double q, std::size_t n,
                                      std::uint64_t seed) {
    if (!(q >= 0.0 && q <= 1.0)) {
        throw error(errc::invalid_argument, "allocation q must lie in [0, 1]");
    }
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < full.size(); ++i) {
        (full[i].y == 1 ? positives : negatives).push_back(i);
    }
    const std::size_t want_pos = allocate_positives(n, q);
    const std::size_t want_neg = n - want_pos;
    if (want_pos > positives.size()) {
        throw error(errc::insufficient_positives, "need " + std::to_string(want_pos) + " positives, pool has " +
                                                      std::to_string(positives.size()));
    }
    if (want_neg > negatives.size()) {
        throw error(errc::insufficient_negatives, "need " + std::to_string(want_neg) + " negatives, pool has " +
                                                      std::to_string(negatives.size()));
    }
    Rng rng = make_rng(seed, 0xa110c);
    auto chosen = detail::choose_without_replacement(std::move(positives), want_pos, rng);
    auto chosen_neg = detail::choose_without_replacement(std::move(negatives), want_neg, rng);
    chosen.insert(chosen.end(), chosen_neg.begin(), chosen_neg.end());
    std::sort(chosen.begin(), chosen.end());

    ScreenDataset ds;
    ds.pool.positive = static_cast<std::size_t>(
        std::count_if(full.begin(), full.end(), [](const LabeledCell& c) { return c.y == 1; }));
    ds.pool.negative = full.size() - ds.pool.positive;
    ds.measured.reserve(chosen.size());
    for (std::size_t idx : chosen) {
        ds.measured.push_back(MeasuredCell{full[idx].x, full[idx].y, full[idx].count, idx});
    }
    ds.meta = {{"q", q}, {"n", n}, {"N", full.size()}, {"seed", seed}};
    return ds;
}

inline ScreenDataset run_screen(const SequenceDistribution& dist, const ActivityOracle& oracle,
                                const ScreenConfig& cfg) {
    cfg.validate();
    const auto cells = simulate_cells(dist, oracle, cfg.N, cfg.seed);
    auto ds = subsample_screen(cells, cfg.q, cfg.n, derive_seed(cfg.seed, 1));
    ds.alphabet = dist.alphabet();
    ds.meta["subsample_seed"] = ds.meta["seed"];
    ds.meta["seed"] = cfg.seed;
    ds.meta["source"] = "simulated";
    return ds;
}

inline std::pair<ScreenDataset, ScreenDataset> split_holdout(const ScreenDataset& ds, double fraction,
                                                             std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw error(errc::invalid_argument, "holdout fraction must lie in (0, 1)");
    }
    const std::size_t m = ds.measured.size();
    const auto held = static_cast<std::size_t>(std::nearbyint(fraction * static_cast<double>(m)));
    if (held == 0 || held >= m) {
        throw error(errc::degenerate_split, "split of " + std::to_string(m) + " cells at fraction " +
                                                std::to_string(fraction) + " leaves a side empty");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed, 0x5b117);
    auto held_idx = detail::choose_without_replacement(order, held, rng);
    std::sort(held_idx.begin(), held_idx.end());

    ScreenDataset train;
    ScreenDataset heldout;
    train.alphabet = heldout.alphabet = ds.alphabet;
    std::size_t h = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (h < held_idx.size() && held_idx[h] == i) {
            heldout.measured.push_back(ds.measured[i]);
            ++h;
        } else {
            train.measured.push_back(ds.measured[i]);
        }
    }
    // Pools are split in proportion, then nudged so each side still contains its measured cells.
    const auto held_m = heldout.measured_counts();
    const auto train_m = train.measured_counts();
    auto share = [fraction](std::size_t total, std::size_t held_measured, std::size_t train_measured) {
        auto v = static_cast<std::size_t>(std::nearbyint(fraction * static_cast<double>(total)));
        v = std::max(v, held_measured);
        v = std::min(v, total - train_measured);
        return v;
    };
    heldout.pool.positive = share(ds.pool.positive, held_m.positive, train_m.positive);
    heldout.pool.negative = share(ds.pool.negative, held_m.negative, train_m.negative);
    train.pool.positive = ds.pool.positive - heldout.pool.positive;
    train.pool.negative = ds.pool.negative - heldout.pool.negative;
    train.meta = ds.meta;
    heldout.meta = ds.meta;
    train.meta["split"] = "train";
    heldout.meta["split"] = "heldout";
    return {std::move(train), std::move(heldout)};
}

// JSON-lines: a header record, then one record per measured cell.
inline void write_dataset_jsonl(std::ostream& out, const ScreenDataset& ds) {
    nlohmann::json header{{"type", "header"},
                          {"pool_counts", {ds.pool.positive, ds.pool.negative}},
                          {"alphabet", ds.alphabet},
                          {"config", ds.meta}};
    out << header.dump() << '\n';
    const SequenceDistribution codec = SequenceDistribution::uniform(1, ds.alphabet);
    for (const auto& m : ds.measured) {
        nlohmann::json rec{{"seq", codec.decode(m.x)}, {"y", m.y}};
        if (m.count) {
            rec["count"] = *m.count;
        }
        rec["cell"] = m.cell;
        out << rec.dump() << '\n';
    }
}

namespace detail {

inline ScreenDataset read_dataset_records(std::istream& in) {
    ScreenDataset ds;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    std::optional<SequenceDistribution> codec;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw error(errc::parse_error, "line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!have_header) {
            if (j.value("type", "") != "header") {
                throw error(errc::parse_error, "first record must be the header");
            }
            const auto pc = j.at("pool_counts").get<std::vector<std::size_t>>();
            if (pc.size() != 2) {
                throw error(errc::parse_error, "pool_counts must be [N+, N-]");
            }
            ds.pool = {pc[0], pc[1]};
            ds.alphabet = j.value("alphabet", std::string(amino_acids));
            ds.meta = j.value("config", nlohmann::json::object());
            codec.emplace(SequenceDistribution::uniform(1, ds.alphabet));
            have_header = true;
            continue;
        }
        MeasuredCell m;
        m.x = codec->encode(j.at("seq").get<std::string>());
        m.y = j.at("y").get<int>();
        if (m.y != 0 && m.y != 1) {
            throw error(errc::parse_error, "line " + std::to_string(line_no) + ": y must be 0 or 1");
        }
        if (j.contains("count")) {
            m.count = j.at("count").get<std::int64_t>();
        }
        m.cell = j.value("cell", ds.measured.size());
        ds.measured.push_back(std::move(m));
    }
    if (!have_header) {
        throw error(errc::parse_error, "dataset has no header record");
    }
    const auto mc = ds.measured_counts();
    if (mc.positive > ds.pool.positive || mc.negative > ds.pool.negative) {
        throw error(errc::parse_error, "measured cells exceed pool counts");
    }
    return ds;
}

}  // namespace detail

inline ScreenDataset read_dataset_jsonl(std::istream& in) {
    try {
        return detail::read_dataset_records(in);
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::parse_error, e.what());
    }
}

// CSV with a header naming seq, y and optionally count.
inline std::vector<LabeledCell> read_labeled_csv(std::istream& in, const std::string& alphabet) {
    const SequenceDistribution codec = SequenceDistribution::uniform(1, alphabet);
    std::string line;
    if (!std::getline(in, line)) {
        throw error(errc::parse_error, "empty CSV");
    }
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string field;
        while (std::getline(ss, field, ',')) {
            while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) {
                field.pop_back();
            }
            out.push_back(field);
        }
        return out;
    };
    const auto cols = split(line);
    auto find = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (cols[i] == name) {
                return i;
            }
        }
        return std::nullopt;
    };
    const auto seq_col = find("seq");
    const auto y_col = find("y");
    const auto count_col = find("count");
    if (!seq_col || !y_col) {
        throw error(errc::parse_error, "CSV header must name seq and y columns");
    }
    std::vector<LabeledCell> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto f = split(line);
        if (f.size() < cols.size()) {
            throw error(errc::parse_error, "line " + std::to_string(line_no) + ": missing fields");
        }
        LabeledCell c;
        c.x = codec.encode(f[*seq_col]);
        try {
            c.y = std::stoi(f[*y_col]);
            if (count_col && !f[*count_col].empty()) {
                c.count = std::stoll(f[*count_col]);
            }
        } catch (const std::exception&) {
            throw error(errc::parse_error, "line " + std::to_string(line_no) + ": bad number");
        }
        if (c.y != 0 && c.y != 1) {
            throw error(errc::parse_error, "line " + std::to_string(line_no) + ": y must be 0 or 1");
        }
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace screenlab
