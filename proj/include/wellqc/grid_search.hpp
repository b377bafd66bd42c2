#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wellqc/errors.hpp"
#include "wellqc/parallel.hpp"
#include "wellqc/rng.hpp"
#include "wellqc/text_format.hpp"
#include "wellqc/training.hpp"

namespace wellqc {

struct GridSpec {
    std::vector<double> learning_rate{0.001};
    std::vector<int> batch_size{16};
    std::vector<double> dropout_rate{0.2};
    std::vector<double> l2_lambda{0.3};

    std::size_t size() const {
        return learning_rate.size() * batch_size.size() * dropout_rate.size() * l2_lambda.size();
    }

    void validate() const {
        if (size() == 0) throw ConfigError("grid has an empty candidate list");
    }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Cartesian cells in row-major order: learning_rate varies slowest, l2_lambda fastest.
inline std::vector<Hyperparams> grid_cells(const GridSpec& grid, const Hyperparams& base) {
    grid.validate();
    std::vector<Hyperparams> cells;
    cells.reserve(grid.size());
    for (double lr : grid.learning_rate)
        for (int bs : grid.batch_size)
            for (double dr : grid.dropout_rate)
                for (double l2 : grid.l2_lambda) {
                    Hyperparams h = base;
                    h.learning_rate = lr;
                    h.batch_size = bs;
                    h.dropout_rate = dr;
                    h.l2_lambda = l2;
                    cells.push_back(h);
                }
    return cells;
}

/// Seed used for grid cell `index` under master seed `seed`.
inline std::uint64_t grid_cell_seed(std::uint64_t seed, std::size_t index) {
    return derive_seed(seed, StreamDomain::GridCell, index);
}

struct GridCellResult {
    std::size_t cell = 0;
    std::uint64_t seed = 0;
    Hyperparams hyperparams;
    bool failed = false;
    std::string error;
    double val_accuracy = 0.0;  // at the best epoch
    double val_loss = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
};

struct GridSearchResult {
    std::vector<GridCellResult> ranked;  // best first, failed cells last
    std::optional<RunConfig> best_config;
};

namespace detail {
inline bool ranks_before(const GridCellResult& a, const GridCellResult& b) {
    if (a.failed != b.failed) return !a.failed;
    if (!a.failed) {
        if (a.val_accuracy != b.val_accuracy) return a.val_accuracy > b.val_accuracy;
        if (a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
    }
    return a.cell < b.cell;
}
} // namespace detail

/// One independent training run per cell, `jobs` cells at a time. A cell that
/// throws is recorded as failed and the sweep continues.
inline GridSearchResult grid_search(const GridSpec& grid, const RunConfig& base, std::span<const LabeledExample> train_set,
                                    std::span<const LabeledExample> val_set, int jobs = 1) {
    base.validate();
    const auto cells = grid_cells(grid, base.hyperparams);
    std::vector<GridCellResult> results(cells.size());
    parallel_for(cells.size(), jobs, [&](std::size_t i) {
        auto& r = results[i];
        r.cell = i;
        r.seed = grid_cell_seed(base.seed, i);
        r.hyperparams = cells[i];
        RunConfig cfg = base;
        cfg.hyperparams = cells[i];
        cfg.seed = r.seed;
        try {
            const auto run = train(cfg, train_set, val_set);
            const auto& best = run.history.at(static_cast<std::size_t>(run.best_epoch - 1));
            r.val_accuracy = best.val_accuracy;
            r.val_loss = best.val_loss;
            r.best_epoch = run.best_epoch;
            r.epochs_run = run.epochs_run;
        } catch (const Error& e) {
            r.failed = true;
            r.error = std::string(e.kind()) + ": " + e.what();
        }
    });
    GridSearchResult out;
    out.ranked = std::move(results);
    std::stable_sort(out.ranked.begin(), out.ranked.end(), detail::ranks_before);
    if (!out.ranked.empty() && !out.ranked.front().failed) {
        RunConfig best = base;
        best.hyperparams = out.ranked.front().hyperparams;
        best.seed = out.ranked.front().seed;
        out.best_config = best;
    }
    return out;
}

/// Ranked table, one row per cell. Errors have commas replaced so the CSV stays rectangular.
inline std::string grid_table_csv(const GridSearchResult& result) {
    using text::format_double;
    std::ostringstream os;
    os << "rank,cell,seed,learning_rate,batch_size,dropout_rate,l2_lambda,status,val_accuracy,val_loss,best_epoch,"
          "epochs_run,error\n";
    std::size_t rank = 1;
    for (const auto& r : result.ranked) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << rank++ << ',' << r.cell << ',' << r.seed << ',' << format_double(r.hyperparams.learning_rate) << ','
           << r.hyperparams.batch_size << ',' << format_double(r.hyperparams.dropout_rate) << ','
           << format_double(r.hyperparams.l2_lambda) << ',' << (r.failed ? "failed" : "ok") << ',';
        if (r.failed) os << ",,,,";
        else
            os << format_double(r.val_accuracy) << ',' << format_double(r.val_loss) << ',' << r.best_epoch << ','
               << r.epochs_run << ',';
        os << err << '\n';
    }
    return os.str();
}

} // namespace wellqc
