#pragma once

// Deterministic synthetic microwell crops. An OK crop is a bright annulus (the
// well rim) on a shaded background of varying level, with pixel noise and
// jitter in center and radius. An NG crop starts from an OK crop and adds one defect:
//   occlusion_blob  bright debris disk inside the well
//   missing_well    rim absent or very faint
//   deformed_ring   elliptical rim
//   scratch_line    bright straight line across the crop
// This taxonomy exists to make the two classes learnable; it is not derived
// from real cartridge defects.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wellqc/dataset.hpp"
#include "wellqc/errors.hpp"
#include "wellqc/parallel.hpp"
#include "wellqc/pgm.hpp"
#include "wellqc/rng.hpp"
#include "wellqc/tensor.hpp"
#include "wellqc/text_format.hpp"
#include "wellqc/tiling.hpp"

namespace wellqc {

enum class DefectKind { OcclusionBlob, MissingWell, DeformedRing, ScratchLine };

inline std::string_view defect_name(DefectKind k) {
    switch (k) {
    case DefectKind::OcclusionBlob: return "occlusion_blob";
    case DefectKind::MissingWell: return "missing_well";
    case DefectKind::DeformedRing: return "deformed_ring";
    case DefectKind::ScratchLine: return "scratch_line";
    }
    return "?";
}

/// Fractions of NG images per defect kind; must sum to 1.
struct DefectMix {
    std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};  // blob, missing, deformed, scratch

    void validate() const {
        double sum = 0;
        for (auto w : weights) {
            if (!(w >= 0.0)) throw ConfigError("defect mix weights must be non-negative");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("defect mix must sum to 1");
    }

    /// Kind of the j-th of n defective images: quota by cumulative share, so
    /// the realized counts track the mix exactly up to rounding.
    DefectKind kind_for(std::size_t j, std::size_t n) const {
        const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(n);
        double cum = 0;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            cum += weights[k];
            if (u < cum) return static_cast<DefectKind>(k);
        }
        for (std::size_t k = weights.size(); k-- > 0;)
            if (weights[k] > 0) return static_cast<DefectKind>(k);
        return DefectKind::OcclusionBlob;
    }
};

struct SyntheticImage {
    std::string name;  // file stem
    Tensor<float> pixels;  // (111, 111, 1), already quantized to 8 bits
    int label = kLabelOk;
    std::optional<DefectKind> defect;
};

namespace detail {

inline double smoothstep_edge(double signed_dist, double softness) {
    // 1 inside (signed_dist < 0), 0 outside, linear ramp of width `softness`.
    return std::clamp(0.5 - signed_dist / softness, 0.0, 1.0);
}

inline Tensor<float> render_well(Rng& rng, std::optional<DefectKind> defect) {
    constexpr std::size_t N = kWellSize;
    const double bg = rng.uniform(0.1, 0.4);
    const double shade_x = rng.uniform(-0.1, 0.1), shade_y = rng.uniform(-0.1, 0.1);
    const double cx = 55.0 + rng.uniform(-3.0, 3.0), cy = 55.0 + rng.uniform(-3.0, 3.0);
    const double radius = rng.uniform(36.0, 42.0);
    const double width = rng.uniform(2.5, 3.5);
    double rim = rng.uniform(0.4, 0.55);
    const double interior = rng.uniform(0.03, 0.07);

    // Ellipse parameters (identity unless deformed).
    double ecc = 0.0, phi = 0.0;
    double blob_x = 0, blob_y = 0, blob_r = 0, blob_a = 0;
    double line_nx = 0, line_ny = 0, line_c = 0, line_w = 0, line_a = 0;
    if (defect == DefectKind::MissingWell) rim *= rng.uniform(0.0, 0.2);
    if (defect == DefectKind::DeformedRing) {
        ecc = rng.uniform(0.2, 0.3);
        phi = rng.uniform(0.0, std::numbers::pi);
    }
    if (defect == DefectKind::OcclusionBlob) {
        const double ang = rng.uniform(0.0, 2 * std::numbers::pi);
        const double dist = rng.uniform(0.0, radius - 16.0);
        blob_x = cx + dist * std::cos(ang);
        blob_y = cy + dist * std::sin(ang);
        blob_r = rng.uniform(9.0, 14.0);
        blob_a = rng.uniform(0.5, 0.7);
    }
    if (defect == DefectKind::ScratchLine) {
        const double ang = rng.uniform(0.0, std::numbers::pi);
        line_nx = std::cos(ang);
        line_ny = std::sin(ang);
        line_c = line_nx * (cx + rng.uniform(-20.0, 20.0)) + line_ny * (cy + rng.uniform(-20.0, 20.0));
        line_w = rng.uniform(3.0, 4.5);
        line_a = rng.uniform(0.5, 0.65);
    }

    Tensor<float> img({N, N, 1});
    for (std::size_t y = 0; y < N; ++y) {
        for (std::size_t x = 0; x < N; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double d = std::hypot(dx, dy);
            const double theta = std::atan2(dy, dx);
            const double local_r = radius * (1.0 + ecc * std::cos(2.0 * (theta - phi)));
            double v = bg + shade_x * (static_cast<double>(x) / N - 0.5) + shade_y * (static_cast<double>(y) / N - 0.5);
            v -= interior * smoothstep_edge(d - local_r, 2.0);
            const double t = (d - local_r) / width;
            v += rim * std::exp(-0.5 * t * t);
            if (blob_a > 0) v += blob_a * smoothstep_edge(std::hypot(x - blob_x, y - blob_y) - blob_r, 2.0);
            if (line_a > 0) {
                const double ld = std::abs(line_nx * x + line_ny * y - line_c);
                v += line_a * smoothstep_edge(ld - line_w, 1.0);
            }
            v += 0.03 * rng.normal();
            img.at(y, x, 0) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    // Quantize exactly as a PGM write/read round trip would.
    return PgmImage::from_normalized(img, 255).normalized();
}

} // namespace detail

/// Pure function of (seed, counts, mix). OK images come first, then NG.
inline std::vector<SyntheticImage> generate_synthetic_images(std::uint64_t seed, std::size_t n_ok, std::size_t n_ng,
                                                             const DefectMix& mix = {}, int jobs = 1) {
    if (n_ng > 0) mix.validate();
    std::vector<SyntheticImage> out(n_ok + n_ng);
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        Rng rng(derive_seed(seed, StreamDomain::Synthetic, i));
        auto& img = out[i];
        char name[32];
        if (i < n_ok) {
            std::snprintf(name, sizeof name, "ok_%05zu", i);
            img.label = kLabelOk;
        } else {
            std::snprintf(name, sizeof name, "ng_%05zu", i - n_ok);
            img.label = kLabelNg;
            img.defect = mix.kind_for(i - n_ok, n_ng);
        }
        img.name = name;
        img.pixels = detail::render_well(rng, img.defect);
    });
    return out;
}

inline std::vector<LabeledExample> to_examples(const std::vector<SyntheticImage>& images) {
    std::vector<LabeledExample> out;
    out.reserve(images.size());
    for (const auto& s : images) out.push_back({WellImage{s.pixels, s.name + ".pgm", std::nullopt}, s.label, Origin::Synthetic});
    return out;
}

/// Writes `<name>.pgm` files and `manifest.tsv` under out_dir (which must exist).
inline DatasetManifest write_synthetic_corpus(const std::filesystem::path& out_dir, std::uint64_t seed, std::size_t n_ok,
                                              std::size_t n_ng, const DefectMix& mix = {}, int jobs = 1) {
    if (!std::filesystem::is_directory(out_dir)) throw IoError("output directory does not exist: " + out_dir.string());
    const auto images = generate_synthetic_images(seed, n_ok, n_ng, mix, jobs);
    DatasetManifest m;
    m.base_dir = out_dir;
    parallel_for(images.size(), jobs, [&](std::size_t i) {
        write_pgm(PgmImage::from_normalized(images[i].pixels, 255), out_dir / (images[i].name + ".pgm"));
    });
    for (const auto& img : images) m.entries.push_back({img.name + ".pgm", img.label, Origin::Synthetic, Augmentation::None});
    write_manifest(m, out_dir / "manifest.tsv");
    return m;
}

/// Recipe for a training corpus: originals from the generator, then grown to
/// `per_class` images per class by flips (see expand_dataset).
struct CorpusSpec {
    std::uint64_t seed = 7;
    std::size_t ok = 125;
    std::size_t ng = 125;
    std::size_t per_class = 500;
    DefectMix mix;
};

inline DefectMix parse_defect_mix(std::string_view s) {
    DefectMix mix;
    mix.weights.fill(0.0);
    for (const auto& item : text::split(s, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("defect mix item '" + item + "' is not kind=weight");
        const auto name = text::trim(std::string_view(item).substr(0, eq));
        const auto w = text::parse_double(text::trim(std::string_view(item).substr(eq + 1)), "defect mix weight");
        bool found = false;
        for (std::size_t k = 0; k < mix.weights.size(); ++k)
            if (defect_name(static_cast<DefectKind>(k)) == name) {
                mix.weights[k] = w;
                found = true;
            }
        if (!found) throw ConfigError("unknown defect kind '" + std::string(name) + "'");
    }
    mix.validate();
    return mix;
}

inline std::string to_text(const DefectMix& mix) {
    std::string s;
    for (std::size_t k = 0; k < mix.weights.size(); ++k) {
        if (k) s += ',';
        s += std::string(defect_name(static_cast<DefectKind>(k))) + "=" + text::format_double(mix.weights[k]);
    }
    return s;
}

inline CorpusSpec parse_corpus_spec(std::string_view content, std::string_view source = "corpus") {
    CorpusSpec c;
    for (const auto& [k, v] : text::parse_key_values(content, source).entries) {
        if (k == "seed") c.seed = text::parse_uint64(v, k);
        else if (k == "ok") c.ok = static_cast<std::size_t>(text::parse_uint64(v, k));
        else if (k == "ng") c.ng = static_cast<std::size_t>(text::parse_uint64(v, k));
        else if (k == "per_class") c.per_class = static_cast<std::size_t>(text::parse_uint64(v, k));
        else if (k == "mix") c.mix = parse_defect_mix(v);
        else throw ConfigError(std::string(source) + ": unknown corpus key '" + k + "'");
    }
    return c;
}

inline CorpusSpec load_corpus_spec(const std::filesystem::path& path) {
    return parse_corpus_spec(text::read_file(path), path.string());
}

/// In-memory corpus: originals plus augmented copies, in expand_dataset order.
inline std::pair<DatasetManifest, std::vector<LabeledExample>> build_corpus(const CorpusSpec& spec, int jobs = 1) {
    const auto images = generate_synthetic_images(spec.seed, spec.ok, spec.ng, spec.mix, jobs);
    DatasetManifest m;
    for (const auto& img : images) m.entries.push_back({img.name + ".pgm", img.label, Origin::Synthetic, Augmentation::None});
    auto base = to_examples(images);
    std::vector<LabeledExample> examples = base;
    if (spec.per_class > 0) {
        m = expand_dataset(m, spec.per_class);
        for (std::size_t i = images.size(); i < m.entries.size(); ++i) {
            const auto& e = m.entries[i];
            const auto it = std::find_if(images.begin(), images.end(), [&](const SyntheticImage& s) { return s.name + ".pgm" == e.path; });
            examples.push_back(augment(base[static_cast<std::size_t>(it - images.begin())], e.augmentation));
        }
    }
    return {m, examples};
}

} // namespace wellqc
