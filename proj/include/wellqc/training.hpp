#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "wellqc/architecture.hpp"
#include "wellqc/checkpoint.hpp"
#include "wellqc/dataset.hpp"
#include "wellqc/errors.hpp"
#include "wellqc/model.hpp"
#include "wellqc/optim.hpp"
#include "wellqc/parallel.hpp"
#include "wellqc/rng.hpp"
#include "wellqc/text_format.hpp"

namespace wellqc {

enum class Monitor { ValLoss, ValAccuracy };

struct EarlyStopping {
    bool enabled = true;
    Monitor monitor = Monitor::ValLoss;
    int patience = 5;

    friend bool operator==(const EarlyStopping&, const EarlyStopping&) = default;
};

inline constexpr std::uint64_t kDefaultSeed = 20240917;

struct RunConfig {
    ArchitectureSpec architecture = default_cnn_spec();
    Hyperparams hyperparams;
    double val_fraction = 0.2;
    std::uint64_t seed = kDefaultSeed;
    EarlyStopping early_stopping;
    std::size_t folds = 5;
    std::string method = "CNN";
    // A batch whose mean cross-entropy exceeds this (in nats) ends the run
    // with TrainingDiverged. Chance level for two classes is ln 2.
    double max_batch_loss = 1e3;

    void validate() const {
        wellqc::validate(architecture);
        hyperparams.validate();
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
        if (early_stopping.patience < 1) throw ConfigError("patience must be at least 1");
        if (folds < 2) throw ConfigError("folds must be at least 2");
        if (!(max_batch_loss > 0.0)) throw ConfigError("max_batch_loss must be positive");
    }

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// ------------------------------------------------------- early stopping

struct StopDecision {
    bool stop = false;
    int best_epoch = 0;  // 1-based, earliest among ties
};

/// Stop once the monitored metric has gone `patience` consecutive epochs
/// without strict improvement over the best value so far.
inline StopDecision early_stop_check(std::span<const EpochRecord> history, Monitor monitor, int patience) {
    if (history.empty()) throw ConfigError("early_stop_check needs a non-empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        const bool better = monitor == Monitor::ValLoss ? history[i].val_loss < history[best].val_loss
                                                        : history[i].val_accuracy > history[best].val_accuracy;
        if (better) best = i;
    }
    const auto since_best = static_cast<int>(history.size() - 1 - best);
    return {since_best >= patience, history[best].epoch};
}

// ----------------------------------------------------------- evaluation

struct Evaluation {
    double loss = 0.0;  // mean cross-entropy
    double accuracy = 0.0;
    std::vector<Tensor<float>> probabilities;
};

/// Infer-mode pass over `examples`, parallel per example with ordered results.
inline Evaluation evaluate(const Model<float>& model, std::span<const LabeledExample> examples, int jobs = 1,
                           double threshold = 0.5) {
    if (examples.empty()) throw EmptyEvaluation("no examples to evaluate");
    Evaluation ev;
    ev.probabilities.resize(examples.size());
    std::vector<Tensor<float>> logits(examples.size());
    parallel_for(examples.size(), jobs, [&](std::size_t i) {
        auto pass = model.forward(examples[i].image.pixels, Mode::Infer);
        logits[i] = std::move(pass.logits);
        ev.probabilities[i] = std::move(pass.probabilities);
    });
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const int label = examples[i].label;
        if (label < 0) throw LabelError("cannot evaluate loss on unlabeled example " + examples[i].image.source_id);
        loss += sparse_ce_from_logits(logits[i], static_cast<std::size_t>(label)).loss;
        if (predicted_label(ev.probabilities[i], threshold) == label) ++correct;
    }
    ev.loss = loss / static_cast<double>(examples.size());
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    return ev;
}

// -------------------------------------------------------------- training

struct TrainOptions {
    int jobs = 1;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    Checkpoint checkpoint;  // weights of the best monitored epoch
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    int epochs_run = 0;
    bool stopped_early = false;
    std::size_t optimizer_steps = 0;
};

namespace detail {
inline void require_disjoint(std::span<const LabeledExample> a, std::span<const LabeledExample> b) {
    std::set<std::string> ids;
    for (const auto& e : a)
        if (!e.image.source_id.empty()) ids.insert(e.image.source_id);
    for (const auto& e : b)
        if (!e.image.source_id.empty() && ids.count(e.image.source_id))
            throw ConfigError("train and validation sets share example " + e.image.source_id);
}
} // namespace detail

/// Mini-batch Adam on mean cross-entropy + l2 * sum(weight^2). The train set
/// is reshuffled every epoch; the last partial batch is kept. With early
/// stopping enabled the returned weights are those of the best epoch.
inline TrainResult train(const RunConfig& config, std::span<const LabeledExample> train_set,
                         std::span<const LabeledExample> val_set, const TrainOptions& options = {}) {
    config.validate();
    if (train_set.empty() || val_set.empty()) throw ConfigError("train and validation sets must be non-empty");
    detail::require_disjoint(train_set, val_set);
    for (const auto& e : train_set)
        if (e.label < 0 || static_cast<std::size_t>(e.label) >= config.architecture.num_classes)
            throw LabelError("training label " + std::to_string(e.label) + " out of range for " + e.image.source_id);

    const auto& hp = config.hyperparams;
    Model<float> model(config.architecture, derive_seed(config.seed, StreamDomain::Init));
    model.set_dropout_rate(hp.dropout_rate);
    Rng shuffle_rng(derive_seed(config.seed, StreamDomain::Shuffle));
    Rng dropout_rng(derive_seed(config.seed, StreamDomain::Dropout));
    AdamState<float> adam(std::span<const Parameter<float>>(model.params()));

    TrainResult result;
    std::vector<Parameter<float>> best_params = model.params();
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch_size = static_cast<std::size_t>(hp.batch_size);

    for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0, ce_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size, ++batch_index) {
            const std::size_t n = std::min(batch_size, order.size() - start);
            std::vector<std::uint64_t> seeds(n);
            for (auto& s : seeds) s = dropout_rng.next_u64();
            std::vector<ForwardPass<float>> passes(n);
            std::vector<int> labels(n);
            parallel_for(n, options.jobs, [&](std::size_t i) {
                Rng rng(seeds[i]);
                passes[i] = model.forward(train_set[order[start + i]].image.pixels, Mode::Train, &rng);
            });
            for (std::size_t i = 0; i < n; ++i) labels[i] = train_set[order[start + i]].label;
            auto g = model_backward(model, passes, labels, options.jobs);
            const double penalty = l2_penalty(model.params(), hp.l2_lambda);
            apply_l2(g.grads, model.params(), hp.l2_lambda);
            const auto where = " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ")";
            if (!std::isfinite(g.loss_sum) || !std::isfinite(penalty))
                throw NonFiniteGradient("loss is not finite" + where);
            if (g.loss_sum / static_cast<double>(n) > config.max_batch_loss)
                throw TrainingDiverged("batch cross-entropy " + text::format_double(g.loss_sum / static_cast<double>(n)) +
                                       " exceeds max_batch_loss " + text::format_double(config.max_batch_loss) + where);
            try {
                adam_step(model.params(), g.grads, adam, hp.learning_rate);
            } catch (const NonFiniteGradient& e) {
                throw NonFiniteGradient(e.what() + where);
            }
            ++result.optimizer_steps;
            ce_sum += g.loss_sum;
            loss_sum += g.loss_sum + penalty * static_cast<double>(n);
            correct += g.correct;
        }
        for (const auto& p : model.params())
            if (!p.value.all_finite()) throw NonFiniteGradient("parameters diverged in " + p.name + " (epoch " + std::to_string(epoch) + ")");

        const auto val = evaluate(model, val_set, options.jobs);
        const double n_train = static_cast<double>(train_set.size());
        EpochRecord rec{epoch,
                        loss_sum / n_train,
                        ce_sum / n_train,
                        static_cast<double>(correct) / n_train,
                        val.loss,
                        val.accuracy,
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
        result.history.push_back(rec);
        if (options.on_epoch) options.on_epoch(rec);

        const auto decision = early_stop_check(result.history, config.early_stopping.monitor, config.early_stopping.patience);
        if (decision.best_epoch == epoch) best_params = model.params();
        result.best_epoch = decision.best_epoch;
        result.epochs_run = epoch;
        if (config.early_stopping.enabled && decision.stop) {
            result.stopped_early = epoch < hp.epochs;
            break;
        }
    }

    if (config.early_stopping.enabled) {
        model.params() = std::move(best_params);
    } else {
        result.best_epoch = result.epochs_run;
    }
    result.checkpoint.method = config.method;
    result.checkpoint.architecture = model.spec();
    result.checkpoint.hyperparams = hp;
    result.checkpoint.seed = config.seed;
    result.checkpoint.best_epoch = result.best_epoch;
    result.checkpoint.history = result.history;
    result.checkpoint.params = model.params();
    return result;
}

/// Multinomial logistic regression on raw pixels, trained with the same
/// machinery: the architecture becomes [Flatten, Dense(num_classes), Softmax].
inline TrainResult train_logistic_baseline(RunConfig config, std::span<const LabeledExample> train_set,
                                           std::span<const LabeledExample> val_set, const TrainOptions& options = {}) {
    config.architecture = logistic_spec(config.architecture.input_shape, config.architecture.num_classes);
    config.hyperparams.dropout_rate = 0.0;
    config.method = "Logistic Regression";
    return train(config, train_set, val_set, options);
}

} // namespace wellqc
