#pragma once

#include <cstddef>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wellqc/dataset.hpp"
#include "wellqc/errors.hpp"
#include "wellqc/text_format.hpp"

namespace wellqc {

/// Binary confusion counts; the positive class is "defective" (label 1).
struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size())
        throw ShapeError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                         std::to_string(predicted.size()) + " predictions");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i], p = predicted[i];
        if ((t != 0 && t != 1) || (p != 0 && p != 1))
            throw LabelError("confusion: label pair (" + std::to_string(t) + ", " + std::to_string(p) + ") at index " +
                             std::to_string(i) + " is not binary");
        if (t == 1) (p == 1 ? cm.tp : cm.fn) += 1;
        else (p == 1 ? cm.fp : cm.tn) += 1;
    }
    return cm;
}

/// Undefined ratios (zero denominator) are std::nullopt rather than 0.
struct Metrics {
    double accuracy = 0.0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline Metrics metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw EmptyEvaluation("metrics of an empty confusion matrix");
    const auto d = [](std::size_t v) { return static_cast<double>(v); };
    Metrics m;
    m.accuracy = d(cm.tp + cm.tn) / d(cm.total());
    if (cm.tp + cm.fp > 0) m.precision = d(cm.tp) / d(cm.tp + cm.fp);
    if (cm.tp + cm.fn > 0) m.recall = d(cm.tp) / d(cm.tp + cm.fn);
    if (m.precision && m.recall) m.f1 = d(2 * cm.tp) / d(2 * cm.tp + cm.fp + cm.fn);
    return m;
}

/// Harmonic mean of precision and recall; 0 when both are 0.
inline double f1_from_precision_recall(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// Inclusive threshold: a probability exactly equal to the threshold is defective.
inline int predict_label(double p_defective, double threshold = 0.5) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    return p_defective >= threshold ? kLabelNg : kLabelOk;
}

struct PredictionRow {
    std::string id;
    int true_label = kUnlabeled;
    int predicted_label = kLabelOk;
    double p_defective = 0.0;

    friend bool operator==(const PredictionRow&, const PredictionRow&) = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct MetricsReport {
    std::string method = "CNN";
    double threshold = 0.5;
    ConfusionMatrix confusion;
    Metrics metrics;
    std::vector<PredictionRow> predictions;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline MetricsReport make_report(std::string method, std::vector<PredictionRow> rows, double threshold = 0.5) {
    MetricsReport r;
    r.method = std::move(method);
    r.threshold = threshold;
    std::vector<int> truth, predicted;
    for (const auto& row : rows) {
        truth.push_back(row.true_label);
        predicted.push_back(row.predicted_label);
    }
    r.confusion = confusion(truth, predicted);
    r.metrics = metrics(r.confusion);
    r.predictions = std::move(rows);
    return r;
}

// ------------------------------------------------------------- emitters

namespace detail {
inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
inline std::optional<double> optional_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}
inline std::string fixed4(const std::optional<double>& v) {
    if (!v) return "null";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return buf;
}
} // namespace detail

inline std::string report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["schema_version"] = kReportSchemaVersion;
    j["method"] = r.method;
    j["threshold"] = r.threshold;
    j["confusion"] = {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}};
    j["metrics"] = {{"accuracy", r.metrics.accuracy},
                    {"precision", detail::optional_json(r.metrics.precision)},
                    {"recall", detail::optional_json(r.metrics.recall)},
                    {"f1", detail::optional_json(r.metrics.f1)}};
    auto& rows = j["predictions"] = nlohmann::json::array();
    for (const auto& p : r.predictions)
        rows.push_back({{"id", p.id}, {"true_label", p.true_label}, {"predicted_label", p.predicted_label},
                        {"p_defective", p.p_defective}});
    return j.dump(2) + "\n";
}

inline MetricsReport report_from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics report: ") + e.what());
    }
    try {
        if (j.at("schema_version").get<int>() != kReportSchemaVersion)
            throw FormatError("metrics report: unsupported schema_version " + j.at("schema_version").dump());
        MetricsReport r;
        r.method = j.at("method").get<std::string>();
        r.threshold = j.at("threshold").get<double>();
        const auto& c = j.at("confusion");
        r.confusion = {c.at("tp").get<std::size_t>(), c.at("tn").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                       c.at("fn").get<std::size_t>()};
        const auto& m = j.at("metrics");
        r.metrics.accuracy = m.at("accuracy").get<double>();
        r.metrics.precision = detail::optional_from_json(m.at("precision"));
        r.metrics.recall = detail::optional_from_json(m.at("recall"));
        r.metrics.f1 = detail::optional_from_json(m.at("f1"));
        for (const auto& p : j.at("predictions"))
            r.predictions.push_back({p.at("id").get<std::string>(), p.at("true_label").get<int>(),
                                     p.at("predicted_label").get<int>(), p.at("p_defective").get<double>()});
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics report: ") + e.what());
    }
}

inline std::string predictions_csv(std::span<const PredictionRow> rows) {
    std::ostringstream os;
    os << "id,true_label,predicted_label,p_defective\n";
    for (const auto& p : rows) {
        os << p.id << ',';
        if (p.true_label == kUnlabeled) os << '-';
        else os << p.true_label;
        os << ',' << p.predicted_label << ',' << text::format_double(p.p_defective) << '\n';
    }
    return os.str();
}

inline const char* kReportTextHeader = "Method, Accuracy, Precision, Recall, F1 score";

/// Table-style summary: one header line, then one row per report.
inline std::string reports_to_text(std::span<const MetricsReport> reports) {
    std::string out = std::string(kReportTextHeader) + "\n";
    for (const auto& r : reports)
        out += r.method + ", " + detail::fixed4(r.metrics.accuracy) + ", " + detail::fixed4(r.metrics.precision) + ", " +
               detail::fixed4(r.metrics.recall) + ", " + detail::fixed4(r.metrics.f1) + "\n";
    return out;
}

inline std::string report_to_text(const MetricsReport& r) { return reports_to_text(std::span(&r, 1)); }

} // namespace wellqc
