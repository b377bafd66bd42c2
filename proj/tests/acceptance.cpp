// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "wellqc/checkpoint.hpp"
#include "wellqc/config.hpp"
#include "wellqc/gradcheck.hpp"
#include "wellqc/grid_search.hpp"
#include "wellqc/metrics.hpp"
#include "wellqc/pgm.hpp"
#include "wellqc/synthetic.hpp"
#include "wellqc/tiling.hpp"
#include "wellqc/training.hpp"

using namespace wellqc;
using wellqc::test::naive_conv;
using wellqc::test::random_tensor;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kSource = WELLQC_SOURCE_DIR;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// Shared between criteria so the corpus is built and the reference CNN trained once.
struct Shared {
    std::optional<DatasetManifest> manifest;
    std::vector<LabeledExample> corpus;
    ResolvedConfig config;
    std::optional<Checkpoint> cnn;
    std::optional<TrainResult> cnn_result;
    double cnn_seconds = 0.0;
} shared;

void load_corpus() {
    if (shared.manifest) return;
    auto [m, ex] = build_corpus(load_corpus_spec(kSource / "configs" / "corpus.cfg"));
    shared.manifest = std::move(m);
    shared.corpus = std::move(ex);
    shared.config = resolve_config(kSource / "configs" / "default_run.cfg");
}

std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> split_corpus(std::uint64_t seed) {
    const auto s = stratified_split(shared.manifest->labels(), shared.config.run.val_fraction, seed);
    return {select(shared.corpus, s.train), select(shared.corpus, s.val)};
}

double best_val_accuracy(const TrainResult& r) { return r.history.at(static_cast<std::size_t>(r.best_epoch - 1)).val_accuracy; }
double best_val_loss(const TrainResult& r) { return r.history.at(static_cast<std::size_t>(r.best_epoch - 1)).val_loss; }

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
}

// ------------------------------------------------------------------ 1

std::optional<ArchitectureSpec> random_toy(Rng& rng) {
    ArchitectureSpec s;
    const std::size_t side = 6 + rng.index(11);
    s.input_shape = {side, side, 1 + rng.index(2)};
    s.num_classes = 2 + rng.index(2);
    s.layers.push_back(LayerSpec::conv2d(1 + rng.index(4), 2 + rng.index(2), 1 + rng.index(2)));
    s.layers.push_back(LayerSpec::relu());
    if (rng.index(2)) s.layers.push_back(LayerSpec::maxpool2d(2, 2));
    if (rng.index(2)) {
        s.layers.push_back(LayerSpec::conv2d(1 + rng.index(3), 2, 1));
        s.layers.push_back(LayerSpec::relu());
    }
    s.layers.push_back(LayerSpec::flatten());
    s.layers.push_back(LayerSpec::dense(2 + rng.index(7)));
    s.layers.push_back(LayerSpec::relu());
    s.layers.push_back(LayerSpec::dropout(0.2));
    s.layers.push_back(LayerSpec::dense(s.num_classes));
    s.layers.push_back(LayerSpec::softmax());
    try {
        validate(s);
    } catch (const Error&) {
        return std::nullopt;
    }
    if (Model<float>(s, 1).param_count() > 5000) return std::nullopt;
    return s;
}

Outcome gradients() {
    const auto t0 = Clock::now();
    Rng rng(derive_seed(kDefaultSeed, StreamDomain::GradCheck, 1));
    double worst = 0.0;
    std::size_t configs = 0, coords = 0;
    while (configs < 20) {
        const auto spec = random_toy(rng);
        if (!spec) continue;
        const Model<float> model(*spec, rng.next_u64());
        const std::size_t n = 2 + rng.index(2);
        std::vector<Tensor<float>> batch;
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) {
            batch.push_back(random_tensor<float>(Shape(spec->input_shape.begin(), spec->input_shape.end()), rng, 0.0, 1.0));
            labels.push_back(static_cast<int>(rng.index(spec->num_classes)));
        }
        GradCheckOptions opt;
        opt.seed = configs;
        opt.l2_lambda = configs % 2 ? 0.3 : 0.0;
        const auto report = run_grad_check(model, std::span<const Tensor<float>>(batch), std::span<const int>(labels), opt);
        worst = std::max(worst, report.max_rel_error);
        for (const auto& e : report.entries) coords += e.checked;
        ++configs;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-6 && secs < 60.0, "20 configs, " + std::to_string(coords) + " coordinates, max_rel_error=" +
                                             fmt("%.3g", worst) + ", " + fmt("%.1f", secs) + "s"};
}

// ------------------------------------------------------------------ 2

// The 1e-6 bound applies to the double instantiation; float32 accumulation
// over up to 100 products carries ~1e-6 rounding on its own, so the float
// path is held to 1e-5.
Outcome conv_oracle() {
    const auto t0 = Clock::now();
    Rng rng(2);
    double worst = 0.0, worst_float = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 1 + rng.index(5), s = 1 + rng.index(3);
        const std::size_t H = k + rng.index(20), W = k + rng.index(20), C = 1 + rng.index(4), O = 1 + rng.index(6);
        const auto in = random_tensor<double>({H, W, C}, rng);
        const auto w = random_tensor<double>({k, k, C, O}, rng);
        const auto b = random_tensor<double>({O}, rng);
        std::size_t oh = 0, ow = 0;
        const auto ref = naive_conv(in, w, b, s, oh, ow);
        const auto out = conv2d_forward(in, w, b, s);
        if (out.dim(0) != oh || out.dim(1) != ow || out.dim(2) != O) return {false, "shape mismatch at trial " + std::to_string(trial)};
        const auto fin = in.cast<float>(), fw = w.cast<float>(), fb = b.cast<float>();
        const auto fref = naive_conv(fin, fw, fb, s, oh, ow);
        const auto fout = conv2d_forward(fin, fw, fb, s);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            worst = std::max(worst, std::abs(out[i] - ref[i]));
            worst_float = std::max(worst_float, std::abs(static_cast<double>(fout[i]) - fref[i]));
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-6 && worst_float <= 1e-5 && secs < 30.0,
            "100 shapes, max_abs_error double=" + fmt("%.3g", worst) + " float=" + fmt("%.3g", worst_float) + ", " +
                fmt("%.2f", secs) + "s"};
}

// ------------------------------------------------------------------ 3

Outcome metrics_oracle() {
    Rng rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.index(500);
        std::vector<int> t(n), p(n);
        for (auto& v : t) v = static_cast<int>(rng.index(2));
        for (auto& v : p) v = static_cast<int>(rng.index(2));
        t[0] = p[0] = 1;
        double match = 0, pred_pos = 0, true_pos = 0, both = 0;
        for (std::size_t i = 0; i < n; ++i) {
            match += t[i] == p[i];
            pred_pos += p[i];
            true_pos += t[i];
            both += t[i] && p[i];
        }
        const double acc = match / static_cast<double>(n), prec = both / pred_pos, rec = both / true_pos;
        const double f1 = 2 * prec * rec / (prec + rec);
        const auto m = metrics(confusion(t, p));
        for (double e : {m.accuracy - acc, *m.precision - prec, *m.recall - rec, *m.f1 - f1,
                         *m.f1 - f1_from_precision_recall(*m.precision, *m.recall)})
            worst = std::max(worst, std::abs(e));
    }
    const double row = f1_from_precision_recall(0.92, 0.88);
    return {worst <= 1e-12 && std::abs(row - 0.90) <= 0.005,
            "1000 matrices, max_error=" + fmt("%.3g", worst) + ", F1(0.92, 0.88)=" + fmt("%.4f", row)};
}

// ------------------------------------------------------------------ 4

Outcome end_to_end() {
    const auto t0 = Clock::now();
    load_corpus();
    const auto [tr, va] = split_corpus(shared.config.run.seed);
    auto res = train(shared.config.run, tr, va);
    shared.cnn_seconds = seconds_since(t0);
    const double acc = best_val_accuracy(res), loss = best_val_loss(res);
    shared.cnn = res.checkpoint;
    shared.cnn_result = std::move(res);
    return {acc >= 0.90 && loss <= 0.4 && shared.cnn_seconds <= 600.0,
            std::to_string(tr.size()) + "/" + std::to_string(va.size()) + " images, best_epoch=" +
                std::to_string(shared.cnn_result->best_epoch) + "/" + std::to_string(shared.cnn_result->epochs_run) +
                ", val_accuracy=" + fmt("%.4f", acc) + ", val_loss=" + fmt("%.4f", loss) + ", " +
                fmt("%.0f", shared.cnn_seconds) + "s"};
}

// ------------------------------------------------------------------ 5

Outcome baseline_ordering() {
    load_corpus();
    std::vector<double> cnn, lr;
    std::string detail;
    for (std::uint64_t i = 0; i < 3; ++i) {
        auto cfg = shared.config.run;
        cfg.seed += i;
        const auto [tr, va] = split_corpus(cfg.seed);
        if (i == 0 && shared.cnn_result) cnn.push_back(best_val_accuracy(*shared.cnn_result));
        else cnn.push_back(best_val_accuracy(train(cfg, tr, va)));
        lr.push_back(best_val_accuracy(train_logistic_baseline(cfg, tr, va)));
        detail += (i ? "; " : "") + std::string("seed ") + std::to_string(cfg.seed) + " cnn=" + fmt("%.3f", cnn.back()) +
                  " lr=" + fmt("%.3f", lr.back());
    }
    const double mc = median3(cnn), ml = median3(lr);
    return {ml < mc, "median lr=" + fmt("%.3f", ml) + " < cnn=" + fmt("%.3f", mc) + " (" + detail + ")"};
}

// ------------------------------------------------------------------ 6

// Small corpus shared by the plateau and determinism runs.
std::pair<std::vector<LabeledExample>, std::vector<LabeledExample>> small_split(std::uint64_t seed) {
    CorpusSpec spec;
    spec.seed = seed;
    spec.ok = spec.ng = 30;
    spec.per_class = 60;
    const auto [m, ex] = build_corpus(spec);
    const auto s = stratified_split(m.labels(), 0.2, seed);
    return {select(ex, s.train), select(ex, s.val)};
}

Outcome plateau() {
    auto [tr, va] = small_split(11);
    // Labels drawn independently of the images leave nothing to learn.
    Rng rng(derive_seed(11, StreamDomain::Synthetic, 99));
    for (auto& e : tr) e.label = static_cast<int>(rng.index(2));
    for (auto& e : va) e.label = static_cast<int>(rng.index(2));
    RunConfig cfg = resolve_config(kSource / "configs" / "default_run.cfg").run;
    cfg.hyperparams.epochs = 40;
    const auto res = train(cfg, tr, va);
    const auto restored = decode_checkpoint(encode_checkpoint(res.checkpoint));
    const double recorded = best_val_loss(res), replay = evaluate(restored.model(), va).loss;
    const double diff = std::abs(recorded - replay);
    return {res.stopped_early && res.epochs_run < 40 && diff <= 1e-6,
            "stopped at epoch " + std::to_string(res.epochs_run) + "/40, best_epoch=" + std::to_string(res.best_epoch) +
                ", recorded val_loss=" + fmt("%.6f", recorded) + ", restored=" + fmt("%.6f", replay) +
                ", diff=" + fmt("%.2g", diff)};
}

// ------------------------------------------------------------------ 7

Outcome determinism() {
    const auto [tr, va] = small_split(12);
    RunConfig cfg;
    cfg.hyperparams.epochs = 3;
    cfg.early_stopping.enabled = false;
    const auto a = train(cfg, tr, va);
    TrainOptions four;
    four.jobs = 4;
    const auto b = train(cfg, tr, va, four);
    const bool same_run = history_csv(a.history) == history_csv(b.history) &&
                          encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint);

    GridSpec grid;
    grid.learning_rate = {0.001, 0.0005};
    grid.batch_size = {32};
    grid.dropout_rate = {0.2};
    grid.l2_lambda = {0.1, 0.3};
    RunConfig gcfg = cfg;
    gcfg.hyperparams.epochs = 2;
    const auto g1 = grid_table_csv(grid_search(grid, gcfg, tr, va, 1));
    const auto g4 = grid_table_csv(grid_search(grid, gcfg, tr, va, 4));
    return {same_run && g1 == g4, std::string("history+checkpoint ") + (same_run ? "identical" : "differ") +
                                      ", 4-cell grid table jobs 1 vs 4 " + (g1 == g4 ? "identical" : "differ")};
}

// ------------------------------------------------------------------ 8

Outcome data_layer() {
    Rng rng(8);
    std::vector<std::string> failed;
    auto check = [&](bool ok, const char* what) {
        if (!ok && std::find(failed.begin(), failed.end(), what) == failed.end()) failed.push_back(what);
    };

    for (int trial = 0; trial < 50; ++trial) {
        const auto img = random_tensor<float>({1 + rng.index(12), 1 + rng.index(12), 1 + rng.index(3)}, rng);
        for (auto op : {Augmentation::HFlip, Augmentation::VFlip, Augmentation::Rot180})
            check(apply_augmentation(apply_augmentation(img, op), op) == img, "augmentation involution");
        check(apply_augmentation(apply_augmentation(img, Augmentation::HFlip), Augmentation::VFlip) ==
                  apply_augmentation(img, Augmentation::Rot180),
              "flip composition");
    }

    for (int trial = 0; trial < 10; ++trial) {
        TileGrid g{rng.index(20), rng.index(20), 111 + rng.index(30), 111 + rng.index(30), 1 + rng.index(3), 1 + rng.index(3)};
        const std::size_t H = g.origin_y + (g.rows - 1) * g.pitch_y + 111 + rng.index(5);
        const std::size_t W = g.origin_x + (g.cols - 1) * g.pitch_x + 111 + rng.index(5);
        ScanFrame f{random_tensor<float>({H, W, 1}, rng, 0.0, 1.0), "lane", "f"};
        auto canvas = Tensor<float>({H, W, 1});
        for (auto& v : canvas.data()) v = -1.0f;
        for (const auto& w : tile_scan(f, g)) {
            const auto [r, c] = *w.grid_position;
            for (std::size_t y = 0; y < kWellSize; ++y)
                for (std::size_t x = 0; x < kWellSize; ++x)
                    canvas.at(g.origin_y + r * g.pitch_y + y, g.origin_x + c * g.pitch_x + x, 0) = w.pixels.at(y, x, 0);
        }
        bool ok = true;
        for (std::size_t i = 0; i < canvas.size(); ++i) ok = ok && (canvas[i] == -1.0f || canvas[i] == f.pixels[i]);
        check(ok, "tile re-embedding");
    }

    for (int trial = 0; trial < 50; ++trial) {
        const std::uint16_t maxval = trial % 2 ? 255 : static_cast<std::uint16_t>(256 + rng.index(65280));
        PgmImage img{1 + rng.index(40), 1 + rng.index(40), maxval, {}};
        for (std::size_t i = 0; i < img.width * img.height; ++i)
            img.samples.push_back(static_cast<std::uint16_t>(rng.index(std::size_t{maxval} + 1)));
        check(decode_pgm(encode_pgm(img)) == img, "PGM round trip");
    }

    load_corpus();
    const auto labels = shared.manifest->labels();
    const auto s = stratified_split(labels, 0.2, shared.config.run.seed);
    auto count = [&](const std::vector<std::size_t>& idx, int label) {
        return std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return labels[i] == label; });
    };
    check(count(s.train, 0) == 400 && count(s.train, 1) == 400 && count(s.val, 0) == 100 && count(s.val, 1) == 100,
          "400/400 + 100/100 split");

    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 10 + rng.index(200), k = 2 + rng.index(5);
        std::vector<int> lab(n);
        for (auto& v : lab) v = static_cast<int>(rng.index(2));
        lab[0] = 0;
        lab[1] = 1;
        const auto folds = stratified_kfold(lab, k, rng.next_u64());
        std::vector<int> seen(n, 0);
        bool ok = folds.size() == k;
        for (const auto& f : folds) {
            for (auto i : f.val) ++seen[i];
            std::set<std::size_t> tr(f.train.begin(), f.train.end());
            ok = ok && tr.size() + f.val.size() == n;
            for (auto i : f.val) ok = ok && !tr.count(i);
        }
        ok = ok && std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
        for (int c = 0; c < 2; ++c) {
            std::size_t lo = n, hi = 0;
            for (const auto& f : folds) {
                const auto m = static_cast<std::size_t>(
                    std::count_if(f.val.begin(), f.val.end(), [&](std::size_t i) { return lab[i] == c; }));
                lo = std::min(lo, m);
                hi = std::max(hi, m);
            }
            ok = ok && hi - lo <= 1;
        }
        check(ok, "k-fold partition");
    }

    std::string detail = "augmentation, tiling, PGM, split counts, k-fold";
    for (const auto& f : failed) detail += "; FAILED " + f;
    return {failed.empty(), detail};
}

// ------------------------------------------------------------------ 9

Outcome portability() {
    Checkpoint ck;
    if (shared.cnn) {
        ck = *shared.cnn;
    } else {
        const Model<float> fresh(default_cnn_spec(), 5);
        ck.architecture = fresh.spec();
        ck.params = fresh.params();
    }
    const auto dir = fs::temp_directory_path() / "wellqc_acceptance";
    fs::create_directories(dir);
    save_checkpoint(ck, dir / "model.wqc");
    const auto loaded = load_checkpoint(dir / "model.wqc").model();
    fs::remove_all(dir);
    const auto original = ck.model();
    Rng rng(9);
    std::size_t same = 0;
    for (int i = 0; i < 100; ++i) {
        const auto img = random_tensor<float>(Shape(ck.architecture.input_shape.begin(), ck.architecture.input_shape.end()), rng, 0.0, 1.0);
        const auto a = original.predict_proba(img), b = loaded.predict_proba(img);
        if (a.size() == b.size() && std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)) == 0) ++same;
    }
    return {same == 100, std::to_string(same) + "/100 images bit-identical (" +
                             (shared.cnn ? "trained" : "freshly initialized") + " model)"};
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradients},
        {"convolution oracle", conv_oracle},
        {"metrics oracle", metrics_oracle},
        {"end-to-end CNN on the synthetic corpus", end_to_end},
        {"logistic baseline below CNN", baseline_ordering},
        {"early stopping and restore", plateau},
        {"determinism", determinism},
        {"data-layer properties", data_layer},
        {"checkpoint portability", portability},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures ? 1 : 0;
}
