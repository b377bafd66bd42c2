// wellqc: command-line front end for the microwell QC pipeline.
//
// Exit codes: 0 success, 1 contract or validation failure, 2 I/O or format
// error. Failures print one line to stderr:
//   error: kind=<ErrorKind> exit=<code> message=<json string>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wellqc/checkpoint.hpp"
#include "wellqc/config.hpp"
#include "wellqc/cross_validation.hpp"
#include "wellqc/dataset.hpp"
#include "wellqc/gradcheck.hpp"
#include "wellqc/grid_search.hpp"
#include "wellqc/metrics.hpp"
#include "wellqc/pgm.hpp"
#include "wellqc/synthetic.hpp"
#include "wellqc/tiling.hpp"
#include "wellqc/training.hpp"

namespace fs = std::filesystem;
using namespace wellqc;

namespace {

struct Globals {
    int jobs = 1;
    std::string config;
    std::vector<std::string> overrides;
    bool quiet = false;
};

void log(const Globals& g, const std::string& line) {
    if (!g.quiet) std::cerr << line << '\n';
}

void require_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("output directory does not exist: " + dir.string());
}

ResolvedConfig resolve(const Globals& g) {
    std::string file = g.config;
    if (file.empty())
        if (const char* env = std::getenv("WELLQC_CONFIG")) file = env;
    std::vector<std::pair<std::string, std::string>> ov;
    for (const auto& s : g.overrides) ov.push_back(parse_override(s));
    auto rc = resolve_config(file, ov);
    log(g, "# resolved config (defaults < " + (file.empty() ? std::string("no file") : file) + " < --set)");
    std::string text = to_text(rc);
    std::size_t start = 0;
    while (start < text.size()) {
        const auto end = text.find('\n', start);
        log(g, "#   " + text.substr(start, end - start));
        start = end + 1;
    }
    return rc;
}

Shape input_shape(const ArchitectureSpec& spec) {
    return {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
}

std::vector<LabeledExample> load_labeled(const DatasetManifest& m, const ArchitectureSpec& spec, int jobs) {
    for (const auto& e : m.entries)
        if (e.label == kUnlabeled) throw LabelError("manifest entry " + e.path + " is unlabeled");
    return load_examples(m, input_shape(spec), jobs);
}

std::vector<PredictionRow> predict_rows(const Model<float>& model, std::span<const LabeledExample> examples, double threshold,
                                        int jobs) {
    std::vector<PredictionRow> rows(examples.size());
    parallel_for(examples.size(), jobs, [&](std::size_t i) {
        const auto probs = model.predict_proba(examples[i].image.pixels);
        const double p1 = static_cast<double>(probs[1]);
        rows[i] = {examples[i].image.source_id, examples[i].label, predict_label(p1, threshold), p1};
    });
    return rows;
}

// ------------------------------------------------------------ commands

struct GenArgs {
    std::string corpus;
    std::uint64_t seed = 7;
    std::size_t ok = 125, ng = 125, expand = 0;
    std::string mix;
    std::string out;
};

int cmd_gen(const Globals& g, const GenArgs& a, const CLI::App& sub) {
    CorpusSpec spec;
    if (!a.corpus.empty()) spec = load_corpus_spec(a.corpus);
    else spec.per_class = 0;
    if (sub.count("--seed")) spec.seed = a.seed;
    if (sub.count("--ok")) spec.ok = a.ok;
    if (sub.count("--ng")) spec.ng = a.ng;
    if (sub.count("--expand")) spec.per_class = a.expand;
    if (!a.mix.empty()) spec.mix = parse_defect_mix(a.mix);
    require_dir(a.out);
    log(g, "# gen seed=" + std::to_string(spec.seed) + " ok=" + std::to_string(spec.ok) + " ng=" + std::to_string(spec.ng) +
               " per_class=" + std::to_string(spec.per_class) + " mix=" + to_text(spec.mix));
    auto m = write_synthetic_corpus(a.out, spec.seed, spec.ok, spec.ng, spec.mix, g.jobs);
    if (spec.per_class > 0) {
        m = expand_dataset(m, spec.per_class);
        write_manifest(m, fs::path(a.out) / "manifest.tsv");
    }
    std::cout << "gen: " << spec.ok + spec.ng << " images, " << m.entries.size() << " manifest entries -> "
              << (fs::path(a.out) / "manifest.tsv").string() << '\n';
    return 0;
}

struct TileArgs {
    std::string frame, grid, out;
};

int cmd_tile(const Globals& g, const TileArgs& a) {
    require_dir(a.out);
    const auto grid = load_tile_grid(a.grid);
    const auto pgm = read_pgm(a.frame);
    ScanFrame frame{pgm.normalized(), "lane", fs::path(a.frame).stem().string()};
    const auto wells = tile_scan(frame, grid);
    DatasetManifest m;
    m.base_dir = a.out;
    std::vector<fs::path> names(wells.size());
    parallel_for(wells.size(), g.jobs, [&](std::size_t i) {
        names[i] = wells[i].source_id + ".pgm";
        auto crop = PgmImage::from_normalized(wells[i].pixels, pgm.maxval);
        write_pgm(crop, fs::path(a.out) / names[i]);
    });
    for (const auto& n : names) m.entries.push_back({n.string(), kUnlabeled, Origin::Real, Augmentation::None});
    write_manifest(m, fs::path(a.out) / "manifest.tsv");
    std::cout << "tile: " << wells.size() << " crops (" << grid.rows << "x" << grid.cols << ") -> " << a.out << '\n';
    return 0;
}

struct TrainArgs {
    std::string manifest, out, model = "cnn";
};

int cmd_train(const Globals& g, const TrainArgs& a) {
    require_dir(a.out);
    auto rc = resolve(g);
    const auto m = read_manifest(a.manifest);
    const auto [train_m, val_m] = split_train_val(m, rc.run.val_fraction, rc.run.seed);
    const auto train_set = load_labeled(train_m, rc.run.architecture, g.jobs);
    const auto val_set = load_labeled(val_m, rc.run.architecture, g.jobs);
    const fs::path out(a.out);
    text::write_file(out / "resolved.cfg", to_text(rc));
    write_manifest(train_m, out / "train.tsv");
    write_manifest(val_m, out / "val.tsv");
    TrainOptions opt;
    opt.jobs = g.jobs;
    opt.on_epoch = [&](const EpochRecord& r) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "epoch %d train_loss=%.4f train_ce=%.4f train_acc=%.4f val_loss=%.4f val_acc=%.4f (%.1fs)",
                      r.epoch, r.train_loss, r.train_ce, r.train_accuracy, r.val_loss, r.val_accuracy, r.wall_seconds);
        log(g, buf);
    };
    TrainResult res;
    if (a.model == "cnn") res = train(rc.run, train_set, val_set, opt);
    else if (a.model == "logistic") res = train_logistic_baseline(rc.run, train_set, val_set, opt);
    else throw ConfigError("--model must be cnn or logistic");
    save_checkpoint(res.checkpoint, out / "checkpoint.wqc");
    text::write_file(out / "history.csv", history_csv(res.history));
    const auto& best = res.history.at(static_cast<std::size_t>(res.best_epoch - 1));
    std::printf("train: method=%s epochs_run=%d best_epoch=%d val_loss=%.6f val_accuracy=%.4f stopped_early=%s -> %s\n",
                res.checkpoint.method.c_str(), res.epochs_run, res.best_epoch, best.val_loss, best.val_accuracy,
                res.stopped_early ? "true" : "false", (out / "checkpoint.wqc").string().c_str());
    return 0;
}

struct GridArgs {
    std::string manifest, grid, out;
};

int cmd_grid(const Globals& g, const GridArgs& a) {
    require_dir(a.out);
    auto rc = resolve(g);
    const auto spec = load_grid_spec(a.grid);
    log(g, "# grid (" + std::to_string(spec.size()) + " cells)");
    const auto m = read_manifest(a.manifest);
    const auto [train_m, val_m] = split_train_val(m, rc.run.val_fraction, rc.run.seed);
    const auto train_set = load_labeled(train_m, rc.run.architecture, g.jobs);
    const auto val_set = load_labeled(val_m, rc.run.architecture, g.jobs);
    const auto result = grid_search(spec, rc.run, train_set, val_set, g.jobs);
    const fs::path out(a.out);
    text::write_file(out / "grid.csv", grid_table_csv(result));
    std::size_t failed = 0;
    for (const auto& r : result.ranked) failed += r.failed;
    if (result.best_config) {
        ResolvedConfig best{*result.best_config, rc.architecture_source};
        text::write_file(out / "best.cfg", to_text(best));
        const auto& top = result.ranked.front();
        std::printf("grid-search: %zu cells, %zu failed, best cell %zu val_accuracy=%.4f val_loss=%.6f -> %s\n",
                    result.ranked.size(), failed, top.cell, top.val_accuracy, top.val_loss, (out / "grid.csv").string().c_str());
    } else {
        std::printf("grid-search: %zu cells, all failed -> %s\n", result.ranked.size(), (out / "grid.csv").string().c_str());
    }
    return 0;
}

struct CvArgs {
    std::string manifest, out;
    std::size_t folds = 0;
};

int cmd_cv(const Globals& g, const CvArgs& a) {
    require_dir(a.out);
    auto rc = resolve(g);
    const std::size_t k = a.folds ? a.folds : rc.run.folds;
    const auto m = read_manifest(a.manifest);
    const auto examples = load_labeled(m, rc.run.architecture, g.jobs);
    const auto result = cross_validate(rc.run, examples, k, g.jobs);
    const fs::path out(a.out);
    for (const auto& f : result.folds) save_checkpoint(f.checkpoint, out / ("fold" + std::to_string(f.fold) + ".wqc"));
    text::write_file(out / "cv.csv", cv_report_csv(result));
    std::printf("cv: k=%zu accuracy=%.4f+-%.4f f1=%.4f+-%.4f assignment_hash=%llu -> %s\n", k, result.accuracy.mean,
                result.accuracy.std, result.f1.mean, result.f1.std, static_cast<unsigned long long>(result.assignment_hash),
                (out / "cv.csv").string().c_str());
    return 0;
}

struct EvalArgs {
    std::string checkpoint, manifest, out, method;
    double threshold = 0.5;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
    require_dir(a.out);
    const auto ck = load_checkpoint(a.checkpoint);
    const auto model = ck.model();
    const auto m = read_manifest(a.manifest);
    const auto examples = load_labeled(m, ck.architecture, g.jobs);
    if (examples.empty()) throw EmptyEvaluation("manifest has no entries");
    auto report = make_report(a.method.empty() ? ck.method : a.method, predict_rows(model, examples, a.threshold, g.jobs),
                              a.threshold);
    const fs::path out(a.out);
    text::write_file(out / "report.json", report_to_json(report));
    text::write_file(out / "predictions.csv", predictions_csv(report.predictions));
    const auto table = report_to_text(report);
    text::write_file(out / "report.txt", table);
    std::cout << table;
    return 0;
}

struct PredictArgs {
    std::string checkpoint, manifest, out;
    std::vector<std::string> images;
    double threshold = 0.5;
};

int cmd_predict(const Globals& g, const PredictArgs& a) {
    const auto ck = load_checkpoint(a.checkpoint);
    const auto model = ck.model();
    DatasetManifest m;
    if (!a.manifest.empty()) m = read_manifest(a.manifest);
    for (const auto& p : a.images) m.entries.push_back({p, kUnlabeled, Origin::Real, Augmentation::None});
    if (m.entries.empty()) throw EmptyEvaluation("nothing to predict: give --manifest or image paths");
    const auto examples = load_examples(m, input_shape(ck.architecture), g.jobs);
    const auto csv = predictions_csv(predict_rows(model, examples, a.threshold, g.jobs));
    if (a.out.empty()) std::cout << csv;
    else {
        text::write_file(a.out, csv);
        std::cout << "predict: " << examples.size() << " images -> " << a.out << '\n';
    }
    return 0;
}

struct GradCheckArgs {
    std::string arch, out;
    std::uint64_t seed = 1;
    std::size_t samples = 3, max_coords = 0;
    double l2 = 0.0, tolerance = 1e-6, step = 1e-5;
};

int cmd_grad_check(const Globals& g, const GradCheckArgs& a) {
    const auto spec = a.arch.empty() ? toy_spec() : load_architecture(a.arch);
    Model<double> model(spec, derive_seed(a.seed, StreamDomain::Init));
    Rng rng(derive_seed(a.seed, StreamDomain::GradCheck));
    std::vector<Tensor<double>> batch;
    std::vector<int> labels;
    for (std::size_t i = 0; i < a.samples; ++i) {
        Tensor<double> x(input_shape(spec));
        for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
        batch.push_back(std::move(x));
        labels.push_back(static_cast<int>(rng.index(spec.num_classes)));
    }
    GradCheckOptions opt;
    opt.seed = a.seed;
    opt.l2_lambda = a.l2;
    opt.tolerance = a.tolerance;
    opt.step = a.step;
    opt.max_coords_per_param = a.max_coords;
    log(g, "# grad-check arch=" + (a.arch.empty() ? std::string("builtin:toy") : a.arch) + " params=" +
               std::to_string(model.param_count()) + " samples=" + std::to_string(a.samples));
    const auto report = run_grad_check(model, std::span<const Tensor<double>>(batch), std::span<const int>(labels), opt);
    const auto text = report.to_text();
    if (a.out.empty()) std::cout << text;
    else text::write_file(a.out, text);
    std::printf("grad-check: max_rel_error=%.3e tolerance=%.1e result=%s\n", report.max_rel_error, report.tolerance,
                report.passed ? "pass" : "fail");
    return report.passed ? 0 : 1;
}

std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"wellqc: microwell defect detection (train, evaluate, predict)"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--jobs,-j", g.jobs, "Worker threads (results do not depend on this)")->check(CLI::PositiveNumber);
    app.add_option("--config,-c", g.config, "Run config file (default: $WELLQC_CONFIG)");
    app.add_option("--set", g.overrides, "Config override key=value (repeatable)");
    app.add_flag("--quiet,-q", g.quiet, "Suppress log lines on stderr");

    GenArgs gen;
    auto* s_gen = app.add_subcommand("gen", "Generate a synthetic corpus and manifest");
    s_gen->add_option("--corpus", gen.corpus, "Corpus recipe file (seed, ok, ng, per_class, mix)");
    s_gen->add_option("--seed", gen.seed);
    s_gen->add_option("--ok", gen.ok, "Number of OK originals");
    s_gen->add_option("--ng", gen.ng, "Number of NG originals");
    s_gen->add_option("--expand", gen.expand, "Grow each class to this size with flips (0: off)");
    s_gen->add_option("--mix", gen.mix, "Defect mix, e.g. occlusion_blob=0.5,scratch_line=0.5");
    s_gen->add_option("--out", gen.out, "Existing output directory")->required();

    TileArgs tile;
    auto* s_tile = app.add_subcommand("tile", "Cut a scan frame into well crops");
    s_tile->add_option("--frame", tile.frame, "Frame PGM")->required();
    s_tile->add_option("--grid", tile.grid, "Tile grid file")->required();
    s_tile->add_option("--out", tile.out, "Existing output directory")->required();

    TrainArgs tr;
    auto* s_train = app.add_subcommand("train", "Train on a manifest (stratified train/validation split)");
    s_train->add_option("--manifest", tr.manifest)->required();
    s_train->add_option("--out", tr.out, "Existing output directory")->required();
    s_train->add_option("--model", tr.model, "cnn or logistic")->check(CLI::IsMember({"cnn", "logistic"}));

    GridArgs grid;
    auto* s_grid = app.add_subcommand("grid-search", "Train one model per hyperparameter cell and rank them");
    s_grid->add_option("--manifest", grid.manifest)->required();
    s_grid->add_option("--grid", grid.grid, "Grid file")->required();
    s_grid->add_option("--out", grid.out, "Existing output directory")->required();

    CvArgs cv;
    auto* s_cv = app.add_subcommand("cv", "Stratified k-fold cross-validation");
    s_cv->add_option("--manifest", cv.manifest)->required();
    s_cv->add_option("--folds,-k", cv.folds, "Number of folds (default: config 'folds')");
    s_cv->add_option("--out", cv.out, "Existing output directory")->required();

    EvalArgs ev;
    auto* s_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled manifest");
    s_eval->add_option("--checkpoint", ev.checkpoint)->required();
    s_eval->add_option("--manifest", ev.manifest)->required();
    s_eval->add_option("--out", ev.out, "Existing output directory")->required();
    s_eval->add_option("--threshold", ev.threshold)->check(CLI::Range(0.0, 1.0));
    s_eval->add_option("--method", ev.method, "Row label in the text report (default: checkpoint method)");

    PredictArgs pr;
    auto* s_pred = app.add_subcommand("predict", "Predict labels for images");
    s_pred->add_option("--checkpoint", pr.checkpoint)->required();
    s_pred->add_option("--manifest", pr.manifest);
    s_pred->add_option("images", pr.images, "PGM files");
    s_pred->add_option("--out", pr.out, "CSV file (default: stdout)");
    s_pred->add_option("--threshold", pr.threshold)->check(CLI::Range(0.0, 1.0));

    GradCheckArgs gc;
    auto* s_gc = app.add_subcommand("grad-check", "Compare backprop against central finite differences");
    s_gc->add_option("--arch", gc.arch, "Architecture file (default: built-in toy network)");
    s_gc->add_option("--seed", gc.seed);
    s_gc->add_option("--samples", gc.samples);
    s_gc->add_option("--l2", gc.l2);
    s_gc->add_option("--tolerance", gc.tolerance);
    s_gc->add_option("--step", gc.step);
    s_gc->add_option("--max-coords", gc.max_coords, "Sampled coordinates per tensor (0: all)");
    s_gc->add_option("--out", gc.out, "Report file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: kind=UsageError exit=1 message=" << json_string(e.what()) << '\n';
        return 1;
    }

    try {
        if (*s_gen) return cmd_gen(g, gen, *s_gen);
        if (*s_tile) return cmd_tile(g, tile);
        if (*s_train) return cmd_train(g, tr);
        if (*s_grid) return cmd_grid(g, grid);
        if (*s_cv) return cmd_cv(g, cv);
        if (*s_eval) return cmd_eval(g, ev);
        if (*s_pred) return cmd_predict(g, pr);
        if (*s_gc) return cmd_grad_check(g, gc);
    } catch (const Error& e) {
        const int code = static_cast<int>(e.category());
        std::cerr << "error: kind=" << e.kind() << " exit=" << code << " message=" << json_string(e.what()) << '\n';
        return code;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: kind=IoError exit=2 message=" << json_string(e.what()) << '\n';
        return 2;
    }
    return 1;
}
