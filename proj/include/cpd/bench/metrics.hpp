#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpd/curves.hpp"
#include "cpd/distill.hpp"
#include "cpd/replay.hpp"

namespace cpd::bench {

using Rows = std::vector<std::vector<double>>;

/// Identifies one cell of the sweep. `capacity` is 0 for strategies that ignore it.
struct CellKey {
    replay::StrategyKind strategy = replay::StrategyKind::Naive;
    std::size_t capacity = 0;
    distill::LossKind loss = distill::LossKind::KL;

    friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

inline CellKey make_cell_key(replay::StrategyKind s, std::size_t m, distill::LossKind loss) {
    return {s, replay::uses_capacity(s) ? m : 0, loss};
}

inline std::string capacity_label(std::size_t m) { return m == 0 ? "all" : std::to_string(m); }

inline std::string cell_label(const CellKey& k) {
    return replay::to_string(k.strategy) + "_M" + capacity_label(k.capacity) + "_" + distill::to_string(k.loss);
}

/// Experiences x tasks. Columns are task ids; rows follow `task_order`.
struct ScoreMatrix {
    CellKey key;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> task_order;
    Rows rows;

    void validate() const {
        if (rows.size() > task_order.size()) throw std::invalid_argument("ScoreMatrix: more rows than experiences");
        for (const auto& r : rows)
            if (r.size() != task_order.size()) throw std::invalid_argument("ScoreMatrix: ragged rows");
    }

    friend bool operator==(const ScoreMatrix&, const ScoreMatrix&) = default;
};

inline void require_permutation(const std::vector<std::uint32_t>& order, std::size_t k) {
    std::vector<bool> hit(k, false);
    if (order.size() != k) throw std::invalid_argument("experience order must cover every task column");
    for (auto t : order) {
        if (t >= k || hit[t]) throw std::invalid_argument("experience order is not a permutation");
        hit[t] = true;
    }
}

/// Entry r: mean of row r over the first r+1 tasks in experience order.
inline std::vector<double> avg_seen_tasks(const Rows& rows, const std::vector<std::uint32_t>& order) {
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require_permutation(order, rows[r].size());
        if (r >= order.size()) throw std::invalid_argument("avg_seen_tasks: more rows than experiences");
        double s = 0.0;
        for (std::size_t j = 0; j <= r; ++j) s += rows[r][order[j]];
        out.push_back(s / static_cast<double>(r + 1));
    }
    return out;
}

inline std::vector<double> avg_seen_tasks(const ScoreMatrix& m) { return avg_seen_tasks(m.rows, m.task_order); }

/// Per task: best score over all rows minus the final-row score.
inline std::vector<double> forgetting(const Rows& rows) {
    if (rows.size() < 2) throw std::invalid_argument("forgetting: needs at least 2 rows");
    const auto k = rows.front().size();
    std::vector<double> out(k);
    for (std::size_t t = 0; t < k; ++t) {
        double best = rows.front()[t];
        for (const auto& r : rows) {
            if (r.size() != k) throw std::invalid_argument("forgetting: ragged rows");
            best = std::max(best, r[t]);
        }
        out[t] = best - rows.back()[t];
    }
    return out;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population (divide by n)
};

inline MeanStd mean_std(const std::vector<double>& xs) { return {cpd::mean(xs), population_std(xs)}; }

/// Seed-level aggregation of one cell.
struct CellAggregate {
    CellKey key;
    std::vector<ScoreMatrix> runs;     // one per seed, in seed-list order
    std::vector<std::vector<MeanStd>> matrix;   // experiences x tasks
    std::vector<MeanStd> avg_seen;               // per experience
    MeanStd overall;                             // mean over experiences of avg_seen
    std::vector<MeanStd> forgetting_per_task;    // empty when only one experience
    MeanStd forgetting_mean;

    MeanStd final_avg() const { return avg_seen.back(); }
};

inline CellAggregate aggregate_cell(std::vector<ScoreMatrix> runs) {
    if (runs.empty()) throw std::invalid_argument("aggregate_cell: no runs");
    CellAggregate a;
    a.key = runs.front().key;
    const auto& ref = runs.front();
    const auto n_rows = ref.rows.size();
    const auto k = ref.task_order.size();
    if (n_rows == 0) throw std::invalid_argument("aggregate_cell: empty score matrix");
    for (const auto& r : runs) {
        r.validate();
        if (r.key != a.key || r.rows.size() != n_rows || r.task_order != ref.task_order)
            throw std::invalid_argument("aggregate_cell: runs do not share a shape");
    }
    a.matrix.assign(n_rows, std::vector<MeanStd>(k));
    for (std::size_t i = 0; i < n_rows; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            std::vector<double> v;
            for (const auto& r : runs) v.push_back(r.rows[i][t]);
            a.matrix[i][t] = mean_std(v);
        }
    std::vector<std::vector<double>> seen;
    for (const auto& r : runs) seen.push_back(avg_seen_tasks(r));
    for (std::size_t i = 0; i < n_rows; ++i) {
        std::vector<double> v;
        for (const auto& s : seen) v.push_back(s[i]);
        a.avg_seen.push_back(mean_std(v));
    }
    std::vector<double> overall;
    for (const auto& s : seen) overall.push_back(cpd::mean(s));
    a.overall = mean_std(overall);
    if (n_rows >= 2) {
        std::vector<std::vector<double>> f;
        std::vector<double> fm;
        for (const auto& r : runs) {
            f.push_back(forgetting(r.rows));
            fm.push_back(cpd::mean(f.back()));
        }
        for (std::size_t t = 0; t < k; ++t) {
            std::vector<double> v;
            for (const auto& x : f) v.push_back(x[t]);
            a.forgetting_per_task.push_back(mean_std(v));
        }
        a.forgetting_mean = mean_std(fm);
    }
    a.runs = std::move(runs);
    return a;
}

struct ExpertSummary {
    std::uint64_t seed = 0;
    std::uint32_t task = 0;
    std::uint32_t runs = 1;
    double initial_score = 0.0;
    double best_score = 0.0;
    bool diverged = false;
    std::vector<double> training_rewards;  // selected run, per finished episode
};

struct AggregateReport {
    std::string config_hash;
    std::vector<std::uint32_t> task_order;
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> buffer_sizes;
    std::vector<replay::StrategyKind> strategies;
    distill::LossKind main_loss = distill::LossKind::KL;
    std::vector<CellAggregate> cells;       // strategy x buffer-size grid under the main loss
    std::vector<CellAggregate> loss_cells;  // Cumulative, one per compared loss
    std::vector<ExpertSummary> experts;

    const CellAggregate* find(const CellKey& k) const {
        for (const auto* list : {&cells, &loss_cells})
            for (const auto& c : *list)
                if (c.key == k) return &c;
        return nullptr;
    }
};

}  // namespace cpd::bench
