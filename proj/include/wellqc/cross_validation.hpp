#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wellqc/dataset.hpp"
#include "wellqc/metrics.hpp"
#include "wellqc/parallel.hpp"
#include "wellqc/rng.hpp"
#include "wellqc/text_format.hpp"
#include "wellqc/training.hpp"

namespace wellqc {

struct FoldResult {
    std::size_t fold = 0;
    std::uint64_t seed = 0;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    int best_epoch = 0;
    double val_loss = 0.0;
    ConfusionMatrix confusion;
    Metrics metrics;
    Checkpoint checkpoint;
};

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
    std::size_t count = 0;  // folds where the metric is defined
};

struct CrossValidationResult {
    std::size_t k = 0;
    std::uint64_t assignment_hash = 0;
    std::vector<FoldResult> folds;
    Aggregate accuracy, precision, recall, f1;
};

inline Aggregate aggregate(std::span<const double> values) {
    Aggregate a;
    a.count = values.size();
    if (values.empty()) return a;
    double sum = 0.0;
    for (double v : values) sum += v;
    a.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

/// Stratified k-fold with one independent model per fold (reporting only).
/// Each fold's held-out part is also its early-stopping monitor.
inline CrossValidationResult cross_validate(const RunConfig& config, std::span<const LabeledExample> examples,
                                            std::size_t k, int jobs = 1) {
    config.validate();
    std::vector<int> labels;
    labels.reserve(examples.size());
    for (const auto& e : examples) labels.push_back(e.label);
    const auto splits = stratified_kfold(labels, k, config.seed);
    const std::vector<LabeledExample> all(examples.begin(), examples.end());

    CrossValidationResult out;
    out.k = k;
    out.assignment_hash = fold_assignment_hash(splits, examples.size());
    out.folds.resize(k);
    parallel_for(k, jobs, [&](std::size_t f) {
        auto& r = out.folds[f];
        r.fold = f;
        r.seed = derive_seed(config.seed, StreamDomain::Fold, f);
        const auto train_set = select(all, splits[f].train);
        const auto val_set = select(all, splits[f].val);
        r.n_train = train_set.size();
        r.n_val = val_set.size();
        RunConfig cfg = config;
        cfg.seed = r.seed;
        auto run = train(cfg, train_set, val_set);
        r.best_epoch = run.best_epoch;
        const auto model = run.checkpoint.model();
        const auto ev = evaluate(model, val_set);
        r.val_loss = ev.loss;
        std::vector<int> truth, predicted;
        for (std::size_t i = 0; i < val_set.size(); ++i) {
            truth.push_back(val_set[i].label);
            predicted.push_back(predicted_label(ev.probabilities[i]));
        }
        r.confusion = confusion(truth, predicted);
        r.metrics = metrics(r.confusion);
        r.checkpoint = std::move(run.checkpoint);
    });

    std::vector<double> acc, prec, rec, f1;
    for (const auto& r : out.folds) {
        acc.push_back(r.metrics.accuracy);
        if (r.metrics.precision) prec.push_back(*r.metrics.precision);
        if (r.metrics.recall) rec.push_back(*r.metrics.recall);
        if (r.metrics.f1) f1.push_back(*r.metrics.f1);
    }
    out.accuracy = aggregate(acc);
    out.precision = aggregate(prec);
    out.recall = aggregate(rec);
    out.f1 = aggregate(f1);
    return out;
}

namespace detail {
inline std::string optional_cell(const std::optional<double>& v) { return v ? text::format_double(*v) : ""; }
} // namespace detail

/// Per-fold rows followed by `mean` and `std` rows. Undefined metrics are empty cells.
inline std::string cv_report_csv(const CrossValidationResult& r) {
    using text::format_double;
    std::ostringstream os;
    os << "# k=" << r.k << " assignment_hash=" << r.assignment_hash << '\n';
    os << "fold,seed,n_train,n_val,best_epoch,val_loss,tp,tn,fp,fn,accuracy,precision,recall,f1\n";
    for (const auto& f : r.folds)
        os << f.fold << ',' << f.seed << ',' << f.n_train << ',' << f.n_val << ',' << f.best_epoch << ','
           << format_double(f.val_loss) << ',' << f.confusion.tp << ',' << f.confusion.tn << ',' << f.confusion.fp << ','
           << f.confusion.fn << ',' << format_double(f.metrics.accuracy) << ',' << detail::optional_cell(f.metrics.precision)
           << ',' << detail::optional_cell(f.metrics.recall) << ',' << detail::optional_cell(f.metrics.f1) << '\n';
    os << "mean,,,,,,,,,," << format_double(r.accuracy.mean) << ',' << format_double(r.precision.mean) << ','
       << format_double(r.recall.mean) << ',' << format_double(r.f1.mean) << '\n';
    os << "std,,,,,,,,,," << format_double(r.accuracy.std) << ',' << format_double(r.precision.std) << ','
       << format_double(r.recall.std) << ',' << format_double(r.f1.std) << '\n';
    return os.str();
}

} // namespace wellqc
