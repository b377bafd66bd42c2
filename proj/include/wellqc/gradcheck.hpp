#pragma once

// Finite-difference verification of hand-written backward passes. The model is
// re-run in double precision and every (or a sampled subset of) parameter
// coordinate is compared against the central difference
// (L(theta + h) - L(theta - h)) / 2h.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wellqc/errors.hpp"
#include "wellqc/model.hpp"
#include "wellqc/optim.hpp"
#include "wellqc/rng.hpp"
#include "wellqc/text_format.hpp"

namespace wellqc {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-6;
    // Denominator floor of the relative error. Rounding in a double-precision
    // loss evaluation leaves ~1e-11 absolute noise in the difference quotient,
    // so gradients below this magnitude are held to |a - n| < tolerance * floor.
    double magnitude_floor = 1e-4;
    std::size_t max_coords_per_param = 0;  // 0 = every coordinate
    std::uint64_t seed = 0;
    double l2_lambda = 0.0;
};

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t skipped_kinks = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    double step = 0.0;
    bool passed = true;

    std::vector<std::string> failing() const {
        std::vector<std::string> out;
        for (const auto& e : entries)
            if (!(e.max_rel_error < tolerance)) out.push_back(e.name);
        return out;
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "parameter,checked,skipped_kinks,max_rel_error,max_abs_error\n";
        for (const auto& e : entries)
            os << e.name << ',' << e.checked << ',' << e.skipped_kinks << ',' << text::format_double(e.max_rel_error)
               << ',' << text::format_double(e.max_abs_error) << '\n';
        os << "# max_rel_error=" << text::format_double(max_rel_error) << " tolerance=" << text::format_double(tolerance)
           << " step=" << text::format_double(step) << " result=" << (passed ? "pass" : "fail") << '\n';
        return os.str();
    }
};

class GradCheckFailure : public Error {
public:
    explicit GradCheckFailure(GradCheckReport report)
        : Error("GradCheckFailure", message(report)), report_(std::move(report)) {}
    const GradCheckReport& report() const noexcept { return report_; }

private:
    static std::string message(const GradCheckReport& r) {
        std::string s = "gradient check failed (max relative error " + text::format_double(r.max_rel_error) + "):";
        for (const auto& n : r.failing()) s += " " + n;
        return s;
    }
    GradCheckReport report_;
};

inline double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// Central difference of `loss` at coordinate `index`; theta is restored.
inline double central_difference(const std::function<double()>& loss, double& coordinate, double h) {
    const double saved = coordinate;
    coordinate = saved + h;
    const double plus = loss();
    coordinate = saved - h;
    const double minus = loss();
    coordinate = saved;
    return (plus - minus) / (2.0 * h);
}

/// Generic harness: compares `analytic` with central differences of `loss`
/// over every coordinate of `theta`.
inline GradCheckEntry check_gradient(const std::string& name, std::span<double> theta, std::span<const double> analytic,
                                     const std::function<double()>& loss, const GradCheckOptions& opt) {
    GradCheckEntry e{name};
    for (std::size_t j = 0; j < theta.size(); ++j) {
        const double numeric = central_difference(loss, theta[j], opt.step);
        e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic[j] - numeric));
        e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[j], numeric, opt.magnitude_floor));
        ++e.checked;
    }
    return e;
}

/// Mutation hook for analytic gradients (used to prove the harness catches a
/// broken backward pass).
using GradientTamper = std::function<void(std::vector<Tensor<double>>&)>;

/// Objective: mean sparse cross-entropy over the batch plus
/// l2_lambda * sum(weight^2). Dropout is disabled (Infer mode).
template <typename T>
GradCheckReport run_grad_check(const Model<T>& source, std::span<const Tensor<T>> batch, std::span<const int> labels,
                               const GradCheckOptions& opt = {}, const GradientTamper& tamper = {}) {
    if (batch.empty() || batch.size() != labels.size()) throw ShapeError("grad_check: need one label per sample");
    Model<double> model = source.template cast<double>();
    std::vector<Tensor<double>> inputs;
    for (const auto& s : batch) inputs.push_back(s.template cast<double>());

    // The penalty is evaluated relative to the unperturbed weights. This
    // shifts the objective by a constant and keeps the large penalty sum from
    // swamping the difference quotient with rounding error.
    const std::vector<Parameter<double>> reference = model.params();
    auto penalty_delta = [&]() {
        if (opt.l2_lambda == 0.0) return 0.0;
        double sum = 0.0;
        for (std::size_t p = 0; p < reference.size(); ++p) {
            if (!reference[p].is_weight) continue;
            const auto now = model.params()[p].value.data();
            const auto ref = reference[p].value.data();
            for (std::size_t j = 0; j < now.size(); ++j)
                if (now[j] != ref[j]) sum += (now[j] - ref[j]) * (now[j] + ref[j]);
        }
        return opt.l2_lambda * sum;
    };
    // Each evaluation also fingerprints the piecewise-linear regime (ReLU signs,
    // max-pool winners). A coordinate whose +h/-h probes land in a different
    // regime straddles a kink; its difference quotient is meaningless and it
    // is counted as skipped instead of compared.
    std::uint64_t regime = 0;
    auto objective = [&]() {
        double sum = 0.0;
        regime = 0xcbf29ce484222325ULL;
        auto mix = [&](std::uint64_t v) { regime = (regime ^ v) * 0x100000001b3ULL; };
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const auto pass = model.forward(inputs[i], Mode::Infer);
            for (std::size_t l = 0; l < pass.caches.size(); ++l) {
                const auto kind = model.spec().layers[l].kind;
                if (kind == LayerKind::ReLU)
                    for (auto v : pass.caches[l].input.data()) mix(v > 0.0 ? 1 : 0);
                else if (kind == LayerKind::MaxPool2D)
                    for (auto a : pass.caches[l].argmax) mix(a);
            }
            sum += sparse_ce_from_logits(pass.logits, static_cast<std::size_t>(labels[i])).loss;
        }
        return sum / static_cast<double>(inputs.size()) + penalty_delta();
    };
    objective();
    const std::uint64_t base_regime = regime;

    std::vector<ForwardPass<double>> passes;
    for (const auto& x : inputs) passes.push_back(model.forward(x, Mode::Infer));
    auto analytic = model_backward(model, passes, labels).grads;
    apply_l2(analytic, model.params(), opt.l2_lambda);
    if (tamper) tamper(analytic);

    GradCheckReport report;
    report.tolerance = opt.tolerance;
    report.step = opt.step;
    Rng rng(derive_seed(opt.seed, StreamDomain::GradCheck));
    for (std::size_t p = 0; p < model.params().size(); ++p) {
        auto& param = model.params()[p];
        auto theta = param.value.data();
        std::vector<std::size_t> coords(theta.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opt.max_coords_per_param && coords.size() > opt.max_coords_per_param) {
            rng.shuffle(coords);
            coords.resize(opt.max_coords_per_param);
            std::sort(coords.begin(), coords.end());
        }
        GradCheckEntry e{param.name};
        for (auto j : coords) {
            const double saved = theta[j];
            theta[j] = saved + opt.step;
            const double plus = objective();
            const bool plus_kink = regime != base_regime;
            theta[j] = saved - opt.step;
            const double minus = objective();
            const bool minus_kink = regime != base_regime;
            theta[j] = saved;
            if (plus_kink || minus_kink) {
                ++e.skipped_kinks;
                continue;
            }
            const double numeric = (plus - minus) / (2.0 * opt.step);
            const double a = analytic[p][j];
            e.max_abs_error = std::max(e.max_abs_error, std::abs(a - numeric));
            e.max_rel_error = std::max(e.max_rel_error, relative_error(a, numeric, opt.magnitude_floor));
            ++e.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
        report.entries.push_back(std::move(e));
    }
    report.passed = report.max_rel_error < opt.tolerance;
    return report;
}

/// As run_grad_check, but throws GradCheckFailure listing the offending
/// parameters when the tolerance is exceeded.
template <typename T>
GradCheckReport grad_check(const Model<T>& model, std::span<const Tensor<T>> batch, std::span<const int> labels,
                           const GradCheckOptions& opt = {}, const GradientTamper& tamper = {}) {
    auto report = run_grad_check(model, batch, labels, opt, tamper);
    if (!report.passed) throw GradCheckFailure(report);
    return report;
}

/// Small architecture used by the `grad-check` command and the gradient suite.
inline ArchitectureSpec toy_spec() {
    ArchitectureSpec spec;
    spec.input_shape = {12, 12, 1};
    spec.num_classes = 2;
    spec.layers = {LayerSpec::conv2d(3, 3), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2), LayerSpec::flatten(),
                   LayerSpec::dense(8),     LayerSpec::relu(), LayerSpec::dropout(0.2),    LayerSpec::dense(2),
                   LayerSpec::softmax()};
    return spec;
}

} // namespace wellqc
