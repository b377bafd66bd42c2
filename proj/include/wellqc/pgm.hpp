#pragma once

// Binary PGM (P5). Header: "P5", width, height, maxval separated by single
// whitespace characters (comments after '#' are accepted on read). Samples
// are one byte when maxval < 256, otherwise two bytes big-endian.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wellqc/errors.hpp"
#include "wellqc/tensor.hpp"
#include "wellqc/text_format.hpp"

namespace wellqc {

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::uint16_t maxval = 255;
    std::vector<std::uint16_t> samples;  // row-major

    /// (H, W, 1) tensor with value / maxval.
    Tensor<float> normalized() const {
        Tensor<float> t({height, width, 1});
        const double scale = 1.0 / static_cast<double>(maxval);
        for (std::size_t i = 0; i < samples.size(); ++i) t[i] = static_cast<float>(samples[i] * scale);
        return t;
    }

    /// Quantizes a [0, 1] single-channel tensor; values are clamped.
    static PgmImage from_normalized(const Tensor<float>& t, std::uint16_t maxval = 255) {
        if (t.rank() != 3 || t.dim(2) != 1) throw ShapeError("PGM needs an (H, W, 1) tensor");
        if (maxval == 0) throw FormatError("maxval must be positive");
        PgmImage img{t.dim(1), t.dim(0), maxval, std::vector<std::uint16_t>(t.size())};
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double v = std::clamp(static_cast<double>(t[i]), 0.0, 1.0);
            img.samples[i] = static_cast<std::uint16_t>(std::lround(v * maxval));
        }
        return img;
    }

    friend bool operator==(const PgmImage&, const PgmImage&) = default;
};

inline std::string encode_pgm(const PgmImage& img) {
    if (img.samples.size() != img.width * img.height) throw FormatError("PGM sample count does not match dimensions");
    if (img.maxval == 0) throw FormatError("PGM maxval must be positive");
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                      std::to_string(img.maxval) + "\n";
    const bool wide = img.maxval > 255;
    out.reserve(out.size() + img.samples.size() * (wide ? 2 : 1));
    for (auto s : img.samples) {
        if (s > img.maxval) throw FormatError("PGM sample exceeds maxval");
        if (wide) out.push_back(static_cast<char>(s >> 8));
        out.push_back(static_cast<char>(s & 0xff));
    }
    return out;
}

inline PgmImage decode_pgm(std::string_view bytes) {
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) -> void {
        throw FormatError("PGM " + why + " at byte " + std::to_string(pos));
    };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_number = [&](const char* what) {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
            fail(std::string("expected ") + what);
        std::uint64_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::uint64_t>(bytes[pos] - '0');
            if (v > (1ULL << 32)) fail(std::string(what) + " too large");
            ++pos;
        }
        return v;
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("missing P5 magic");
    pos = 2;
    PgmImage img;
    img.width = read_number("width");
    img.height = read_number("height");
    const auto maxval = read_number("maxval");
    if (img.width == 0 || img.height == 0) fail("zero dimension");
    if (maxval == 0 || maxval > 65535) fail("maxval outside 1..65535");
    img.maxval = static_cast<std::uint16_t>(maxval);
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) fail("expected whitespace after maxval");
    ++pos;

    const std::size_t bps = img.maxval > 255 ? 2 : 1;
    const std::size_t n = img.width * img.height;
    if (bytes.size() - pos < n * bps) {
        pos = bytes.size();
        fail("truncated pixel data (need " + std::to_string(n * bps) + " bytes)");
    }
    img.samples.resize(n);
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint16_t v = bps == 2 ? static_cast<std::uint16_t>((data[2 * i] << 8) | data[2 * i + 1]) : data[i];
        if (v > img.maxval) {
            pos += i * bps;
            fail("sample exceeds maxval");
        }
        img.samples[i] = v;
    }
    return img;
}

inline PgmImage read_pgm(const std::filesystem::path& path) {
    try {
        return decode_pgm(text::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_pgm(const PgmImage& img, const std::filesystem::path& path) {
    text::write_file(path, encode_pgm(img));
}

} // namespace wellqc
