#pragma once

// Labels, augmentation, manifests and stratified splitting.
//
// Manifest file (tab-separated, one record per line):
//   wellqc-manifest<TAB>1<TAB>num_classes=2
//   <path><TAB><label><TAB><origin><TAB><augmentation>
// label is a class index or "-" for unlabeled crops; origin is
// real|synthetic|augmented; augmentation is none|hflip|vflip|rot180.
// Relative paths resolve against the manifest's directory. Augmented records
// point at their source image and are materialized on load.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wellqc/errors.hpp"
#include "wellqc/parallel.hpp"
#include "wellqc/pgm.hpp"
#include "wellqc/rng.hpp"
#include "wellqc/tensor.hpp"
#include "wellqc/text_format.hpp"
#include "wellqc/tiling.hpp"

namespace wellqc {

inline constexpr int kLabelOk = 0;  // non-defective
inline constexpr int kLabelNg = 1;  // defective
inline constexpr int kUnlabeled = -1;
inline constexpr int kManifestSchemaVersion = 1;

enum class Origin { Real, Synthetic, Augmented };
enum class Augmentation { None, HFlip, VFlip, Rot180 };

inline std::string_view origin_name(Origin o) {
    switch (o) {
    case Origin::Real: return "real";
    case Origin::Synthetic: return "synthetic";
    case Origin::Augmented: return "augmented";
    }
    return "?";
}

inline std::string_view augmentation_name(Augmentation a) {
    switch (a) {
    case Augmentation::None: return "none";
    case Augmentation::HFlip: return "hflip";
    case Augmentation::VFlip: return "vflip";
    case Augmentation::Rot180: return "rot180";
    }
    return "?";
}

inline Origin parse_origin(std::string_view s) {
    if (s == "real") return Origin::Real;
    if (s == "synthetic") return Origin::Synthetic;
    if (s == "augmented") return Origin::Augmented;
    throw FormatError("unknown origin '" + std::string(s) + "'");
}

inline Augmentation parse_augmentation(std::string_view s) {
    if (s == "none") return Augmentation::None;
    if (s == "hflip") return Augmentation::HFlip;
    if (s == "vflip") return Augmentation::VFlip;
    if (s == "rot180") return Augmentation::Rot180;
    throw FormatError("unknown augmentation '" + std::string(s) + "'");
}

// ---------------------------------------------------------- augmentation

/// Mirror (hflip: left-right), flip (vflip: top-bottom) or both (rot180) of
/// an HWC tensor. Pixel values are moved, never altered.
template <typename T>
Tensor<T> apply_augmentation(const Tensor<T>& img, Augmentation op) {
    if (img.rank() != 3) throw ShapeError("augmentation expects an HWC image");
    if (op == Augmentation::None) return img;
    const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
    const bool flip_x = op == Augmentation::HFlip || op == Augmentation::Rot180;
    const bool flip_y = op == Augmentation::VFlip || op == Augmentation::Rot180;
    Tensor<T> out(img.shape());
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c)
                out.at(y, x, c) = img.at(flip_y ? H - 1 - y : y, flip_x ? W - 1 - x : x, c);
    return out;
}

struct LabeledExample {
    WellImage image;
    int label = kUnlabeled;
    Origin origin = Origin::Real;
    Augmentation augmentation = Augmentation::None;
};

inline std::string augmented_id(const std::string& id, Augmentation op) {
    return op == Augmentation::None ? id : id + "#" + std::string(augmentation_name(op));
}

/// Label-preserving; result is tagged as augmented.
inline LabeledExample augment(const LabeledExample& ex, Augmentation op) {
    LabeledExample out = ex;
    out.image.pixels = apply_augmentation(ex.image.pixels, op);
    out.image.source_id = augmented_id(ex.image.source_id, op);
    out.origin = op == Augmentation::None ? ex.origin : Origin::Augmented;
    out.augmentation = op;
    return out;
}

// -------------------------------------------------------------- manifest

struct ManifestEntry {
    std::string path;
    int label = kUnlabeled;
    Origin origin = Origin::Real;
    Augmentation augmentation = Augmentation::None;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    int schema_version = kManifestSchemaVersion;
    std::size_t num_classes = 2;
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;  // where relative paths resolve; not serialized

    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.label);
        return out;
    }

    std::size_t count(int label) const {
        return static_cast<std::size_t>(
            std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.label == label; }));
    }

    std::filesystem::path resolve(const ManifestEntry& e) const {
        std::filesystem::path p(e.path);
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }
};

/// Labels below num_classes (or unlabeled) and no duplicate (path, augmentation) pairs.
inline void validate_manifest(const DatasetManifest& m) {
    if (m.num_classes < 2) throw FormatError("manifest num_classes must be at least 2");
    std::set<std::pair<std::string, Augmentation>> seen;
    for (const auto& e : m.entries) {
        if (e.label != kUnlabeled && (e.label < 0 || static_cast<std::size_t>(e.label) >= m.num_classes))
            throw LabelError("manifest label " + std::to_string(e.label) + " outside [0, " +
                             std::to_string(m.num_classes) + ") for " + e.path);
        if (!seen.insert({e.path, e.augmentation}).second)
            throw FormatError("duplicate manifest entry " + e.path + " (" + std::string(augmentation_name(e.augmentation)) + ")");
    }
}

inline std::string manifest_to_text(const DatasetManifest& m) {
    std::ostringstream os;
    os << "wellqc-manifest\t" << m.schema_version << "\tnum_classes=" << m.num_classes << '\n';
    for (const auto& e : m.entries) {
        os << e.path << '\t';
        if (e.label == kUnlabeled) os << '-';
        else os << e.label;
        os << '\t' << origin_name(e.origin) << '\t' << augmentation_name(e.augmentation) << '\n';
    }
    return os.str();
}

inline DatasetManifest parse_manifest(std::string_view content, std::string_view source = "manifest") {
    DatasetManifest m;
    std::istringstream is{std::string(content)};
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    auto fail = [&](const std::string& why) {
        throw FormatError(std::string(source) + ":" + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = text::split(line, '\t');
        if (!header) {
            if (fields.size() != 3 || fields[0] != "wellqc-manifest") fail("missing 'wellqc-manifest' header");
            m.schema_version = static_cast<int>(text::parse_int(fields[1], "schema version"));
            if (m.schema_version != kManifestSchemaVersion) fail("unsupported manifest schema " + fields[1]);
            if (fields[2].rfind("num_classes=", 0) != 0) fail("expected num_classes=<n>");
            const auto n = text::parse_int(fields[2].substr(12), "num_classes");
            if (n < 2) fail("num_classes must be at least 2");
            m.num_classes = static_cast<std::size_t>(n);
            header = true;
            continue;
        }
        if (fields.size() != 4) fail("expected 4 tab-separated fields");
        ManifestEntry e;
        e.path = fields[0];
        if (e.path.empty()) fail("empty path");
        try {
            e.label = fields[1] == "-" ? kUnlabeled : static_cast<int>(text::parse_int(fields[1], "label"));
            e.origin = parse_origin(fields[2]);
            e.augmentation = parse_augmentation(fields[3]);
        } catch (const Error& err) {
            fail(err.what());
        }
        m.entries.push_back(std::move(e));
    }
    if (!header) throw FormatError(std::string(source) + ": empty manifest");
    validate_manifest(m);
    return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    auto m = parse_manifest(text::read_file(path), path.string());
    m.base_dir = path.parent_path();
    return m;
}

/// Writes the manifest to `path`. Relative entry paths are rewritten so they
/// still resolve from the new location.
inline void write_manifest(DatasetManifest m, const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    const fs::path target_dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    if (!m.base_dir.empty() && fs::weakly_canonical(m.base_dir) != fs::weakly_canonical(target_dir)) {
        for (auto& e : m.entries)
            if (!fs::path(e.path).is_absolute())
                e.path = fs::weakly_canonical(m.base_dir / e.path).lexically_relative(fs::weakly_canonical(target_dir)).generic_string();
    }
    text::write_file(path, manifest_to_text(m));
}

/// Reads every entry's image and applies its augmentation. Images must match
/// `expected_shape` when it is non-empty.
inline std::vector<LabeledExample> load_examples(const DatasetManifest& m, const Shape& expected_shape = {}, int jobs = 1) {
    std::vector<LabeledExample> out(m.entries.size());
    parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
        const auto& e = m.entries[i];
        auto pixels = read_pgm(m.resolve(e)).normalized();
        if (!expected_shape.empty() && pixels.shape() != expected_shape)
            throw ShapeError(e.path + ": image shape " + shape_string(pixels.shape()) + " expected " +
                             shape_string(expected_shape));
        out[i].image.pixels = apply_augmentation(pixels, e.augmentation);
        out[i].image.source_id = augmented_id(e.path, e.augmentation);
        out[i].label = e.label;
        out[i].origin = e.origin;
        out[i].augmentation = e.augmentation;
    });
    return out;
}

/// Grows every class present to `target_per_class` by appending, in fixed op
/// order (hflip, vflip, rot180) and manifest order, augmented copies of the
/// class's originals.
inline DatasetManifest expand_dataset(const DatasetManifest& m, std::size_t target_per_class = 500) {
    for (const auto& e : m.entries)
        if (e.augmentation != Augmentation::None) throw ConfigError("manifest already contains augmented entries");
    std::map<int, std::vector<std::size_t>> originals;
    for (std::size_t i = 0; i < m.entries.size(); ++i)
        if (m.entries[i].label != kUnlabeled) originals[m.entries[i].label].push_back(i);
    for (const auto& [label, idx] : originals) {
        if (target_per_class > 4 * idx.size())
            throw InsufficientOriginals("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                                        " originals; at most " + std::to_string(4 * idx.size()) +
                                        " examples are reachable, " + std::to_string(target_per_class) + " requested");
        if (target_per_class < idx.size())
            throw ConfigError("class " + std::to_string(label) + " already has more than " +
                              std::to_string(target_per_class) + " examples");
    }
    DatasetManifest out = m;
    std::map<int, std::size_t> counts;
    for (const auto& [label, idx] : originals) counts[label] = idx.size();
    for (auto op : {Augmentation::HFlip, Augmentation::VFlip, Augmentation::Rot180})
        for (const auto& [label, idx] : originals)
            for (auto i : idx) {
                if (counts[label] >= target_per_class) break;
                ManifestEntry e = m.entries[i];
                e.origin = Origin::Augmented;
                e.augmentation = op;
                out.entries.push_back(std::move(e));
                ++counts[label];
            }
    return out;
}

// ------------------------------------------------------------- splitting

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

namespace detail {
// Per-class index lists in first-appearance order of the class label.
inline std::map<int, std::vector<std::size_t>> by_class(std::span<const int> labels) {
    std::map<int, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kUnlabeled) throw LabelError("cannot split unlabeled examples");
        out[labels[i]].push_back(i);
    }
    return out;
}
} // namespace detail

/// Stratified hold-out: each class sends round(fraction * n_c) of its examples
/// (at least 1, at most n_c - 1) to validation. Index lists are sorted.
inline SplitIndices stratified_split(std::span<const int> labels, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
    SplitIndices s;
    for (auto& [label, idx] : detail::by_class(labels)) {
        if (idx.size() < 2)
            throw EmptyClass("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                             " example(s); a split needs at least 2");
        Rng rng(derive_seed(seed, StreamDomain::Split, static_cast<std::uint64_t>(label)));
        rng.shuffle(idx);
        auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
        n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
        s.val.insert(s.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    return s;
}

/// Stratified k-fold: each class is shuffled and dealt round-robin into k
/// folds, so per-class fold sizes differ by at most one.
inline std::vector<SplitIndices> stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("k-fold needs k >= 2");
    std::vector<std::vector<std::size_t>> folds(k);
    for (auto& [label, idx] : detail::by_class(labels)) {
        if (idx.size() < k)
            throw EmptyClass("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                             " examples, fewer than k = " + std::to_string(k));
        Rng rng(derive_seed(seed, StreamDomain::Split, 0x10000 + static_cast<std::uint64_t>(label)));
        rng.shuffle(idx);
        for (std::size_t j = 0; j < idx.size(); ++j) folds[j % k].push_back(idx[j]);
    }
    std::vector<SplitIndices> out(k);
    for (std::size_t f = 0; f < k; ++f) {
        out[f].val = folds[f];
        for (std::size_t g = 0; g < k; ++g)
            if (g != f) out[f].train.insert(out[f].train.end(), folds[g].begin(), folds[g].end());
        std::sort(out[f].train.begin(), out[f].train.end());
        std::sort(out[f].val.begin(), out[f].val.end());
    }
    return out;
}

/// FNV-1a over each example's fold number.
inline std::uint64_t fold_assignment_hash(const std::vector<SplitIndices>& folds, std::size_t n) {
    std::vector<std::size_t> assignment(n, folds.size());
    for (std::size_t f = 0; f < folds.size(); ++f)
        for (auto i : folds[f].val) assignment.at(i) = f;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto a : assignment) h = (h ^ static_cast<std::uint64_t>(a)) * 0x100000001b3ULL;
    return h;
}

template <typename T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& indices) {
    std::vector<T> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(items.at(i));
    return out;
}

inline DatasetManifest select_entries(const DatasetManifest& m, const std::vector<std::size_t>& indices) {
    DatasetManifest out = m;
    out.entries = select(m.entries, indices);
    return out;
}

inline std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& m, double fraction,
                                                                   std::uint64_t seed) {
    const auto labels = m.labels();
    const auto s = stratified_split(labels, fraction, seed);
    return {select_entries(m, s.train), select_entries(m, s.val)};
}

inline std::vector<std::pair<DatasetManifest, DatasetManifest>> kfold_split(const DatasetManifest& m, std::size_t k,
                                                                            std::uint64_t seed) {
    const auto labels = m.labels();
    std::vector<std::pair<DatasetManifest, DatasetManifest>> out;
    for (const auto& f : stratified_kfold(labels, k, seed))
        out.emplace_back(select_entries(m, f.train), select_entries(m, f.val));
    return out;
}

} // namespace wellqc
