#pragma once

// Declarative network description, shape inference and the architecture file
// format:
//
//   input = <height> <width> <channels>
//   num_classes = <n>
//   padding = valid
//   layer = conv2d out_channels=<n> kernel=<k> stride=<s>
//   layer = relu
//   layer = maxpool2d window=<w> stride=<s>
//   layer = flatten
//   layer = dense units=<n>
//   layer = dropout rate=<r>
//   layer = softmax
//
// `layer` lines are ordered. `#` starts a comment.

#include <array>
#include <cstddef>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wellqc/errors.hpp"
#include "wellqc/tensor.hpp"
#include "wellqc/text_format.hpp"

namespace wellqc {

enum class LayerKind { Conv2D, ReLU, MaxPool2D, Flatten, Dense, Dropout, Softmax };

inline std::string_view layer_kind_name(LayerKind kind) {
    switch (kind) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    std::size_t out_channels = 0;  // Conv2D
    std::size_t kernel_size = 0;   // Conv2D
    std::size_t window = 0;        // MaxPool2D
    std::size_t stride = 1;        // Conv2D, MaxPool2D
    std::size_t units = 0;         // Dense
    double rate = 0.0;             // Dropout

    static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1) {
        LayerSpec s;
        s.kind = LayerKind::Conv2D;
        s.out_channels = out_channels;
        s.kernel_size = kernel;
        s.stride = stride;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{}; }
    static LayerSpec maxpool2d(std::size_t window, std::size_t stride) {
        LayerSpec s;
        s.kind = LayerKind::MaxPool2D;
        s.window = window;
        s.stride = stride;
        return s;
    }
    static LayerSpec flatten() {
        LayerSpec s;
        s.kind = LayerKind::Flatten;
        return s;
    }
    static LayerSpec dense(std::size_t units) {
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.units = units;
        return s;
    }
    static LayerSpec dropout(double rate) {
        LayerSpec s;
        s.kind = LayerKind::Dropout;
        s.rate = rate;
        return s;
    }
    static LayerSpec softmax() {
        LayerSpec s;
        s.kind = LayerKind::Softmax;
        return s;
    }

    bool has_params() const { return kind == LayerKind::Conv2D || kind == LayerKind::Dense; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchitectureSpec {
    std::array<std::size_t, 3> input_shape{111, 111, 1};  // height, width, channels
    std::vector<LayerSpec> layers;
    std::size_t num_classes = 2;

    std::size_t layer_count() const { return layers.size(); }
    Shape input() const { return {input_shape[0], input_shape[1], input_shape[2]}; }

    friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// Layer count under the "Keras summary" convention: every layer except the
/// ReLU/Softmax activations, plus the input layer.
inline std::size_t counted_layers(const ArchitectureSpec& spec) {
    std::size_t n = 1;
    for (const auto& l : spec.layers)
        if (l.kind != LayerKind::ReLU && l.kind != LayerKind::Softmax) ++n;
    return n;
}

namespace detail {
inline std::string layer_label(std::size_t index, const LayerSpec& l) {
    return "layer " + std::to_string(index) + " (" + std::string(layer_kind_name(l.kind)) + ")";
}
} // namespace detail

/// Output shape of every layer. Throws ShapeError naming the first layer
/// whose parameters are incompatible with its input.
inline std::vector<Shape> infer_shapes(const ArchitectureSpec& spec) {
    for (auto d : spec.input_shape)
        if (d == 0) throw ShapeError("input shape dimensions must be positive");
    std::vector<Shape> out;
    out.reserve(spec.layers.size());
    Shape cur = spec.input();
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        const auto fail = [&](const std::string& why) {
            throw ShapeError(detail::layer_label(i, l) + ": " + why + " (input " + shape_string(cur) + ")");
        };
        switch (l.kind) {
        case LayerKind::Conv2D: {
            if (cur.size() != 3) fail("expects a rank-3 HWC input");
            if (l.out_channels == 0 || l.kernel_size == 0 || l.stride == 0) fail("parameters must be positive");
            if (l.kernel_size > cur[0] || l.kernel_size > cur[1]) fail("kernel larger than input");
            cur = {(cur[0] - l.kernel_size) / l.stride + 1, (cur[1] - l.kernel_size) / l.stride + 1, l.out_channels};
            break;
        }
        case LayerKind::MaxPool2D: {
            if (cur.size() != 3) fail("expects a rank-3 HWC input");
            if (l.window == 0 || l.stride == 0) fail("parameters must be positive");
            if (l.window > cur[0] || l.window > cur[1]) fail("pooling window larger than input");
            cur = {(cur[0] - l.window) / l.stride + 1, (cur[1] - l.window) / l.stride + 1, cur[2]};
            break;
        }
        case LayerKind::Flatten: cur = {shape_size(cur)}; break;
        case LayerKind::Dense:
            if (cur.size() != 1) fail("expects a flat input; insert a flatten layer");
            if (l.units == 0) fail("units must be positive");
            cur = {l.units};
            break;
        case LayerKind::Dropout:
            if (!(l.rate >= 0.0 && l.rate < 1.0)) fail("rate must lie in [0, 1)");
            break;
        case LayerKind::ReLU: break;
        case LayerKind::Softmax:
            if (cur.size() != 1) fail("expects a flat input");
            if (i + 1 != spec.layers.size()) fail("softmax must be the final layer");
            break;
        }
        out.push_back(cur);
    }
    return out;
}

/// Full validation: shapes infer end to end and the network ends in a
/// num_classes-wide layer followed by Softmax.
inline void validate(const ArchitectureSpec& spec) {
    if (spec.num_classes < 2) throw ShapeError("num_classes must be at least 2");
    if (spec.layers.empty()) throw ShapeError("architecture has no layers");
    const auto shapes = infer_shapes(spec);
    if (spec.layers.back().kind != LayerKind::Softmax)
        throw ShapeError("final layer must be softmax");
    if (spec.layers.size() < 2 || shapes[shapes.size() - 2] != Shape{spec.num_classes})
        throw ShapeError("layer before softmax must produce " + std::to_string(spec.num_classes) + " outputs");
}

/// Conv(8) ReLU Pool Conv(16) ReLU Pool Flatten Dense(48) Dropout Dense(2) Softmax.
inline ArchitectureSpec default_cnn_spec() {
    ArchitectureSpec spec;
    spec.input_shape = {111, 111, 1};
    spec.num_classes = 2;
    spec.layers = {
        LayerSpec::conv2d(8, 3, 1), LayerSpec::relu(),        LayerSpec::maxpool2d(2, 2),
        LayerSpec::conv2d(16, 3, 1), LayerSpec::relu(),       LayerSpec::maxpool2d(2, 2),
        LayerSpec::flatten(),        LayerSpec::dense(48),    LayerSpec::dropout(0.2),
        LayerSpec::dense(2),         LayerSpec::softmax(),
    };
    return spec;
}

/// Multinomial logistic regression on raw pixels.
inline ArchitectureSpec logistic_spec(std::array<std::size_t, 3> input_shape = {111, 111, 1},
                                      std::size_t num_classes = 2) {
    ArchitectureSpec spec;
    spec.input_shape = input_shape;
    spec.num_classes = num_classes;
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(num_classes), LayerSpec::softmax()};
    return spec;
}

inline std::string to_text(const ArchitectureSpec& spec) {
    std::ostringstream os;
    os << "input = " << spec.input_shape[0] << ' ' << spec.input_shape[1] << ' ' << spec.input_shape[2] << '\n';
    os << "num_classes = " << spec.num_classes << '\n';
    os << "padding = valid\n";
    for (const auto& l : spec.layers) {
        os << "layer = " << layer_kind_name(l.kind);
        switch (l.kind) {
        case LayerKind::Conv2D:
            os << " out_channels=" << l.out_channels << " kernel=" << l.kernel_size << " stride=" << l.stride;
            break;
        case LayerKind::MaxPool2D: os << " window=" << l.window << " stride=" << l.stride; break;
        case LayerKind::Dense: os << " units=" << l.units; break;
        case LayerKind::Dropout: os << " rate=" << text::format_double(l.rate); break;
        default: break;
        }
        os << '\n';
    }
    return os.str();
}

inline LayerSpec parse_layer(std::string_view line) {
    const auto tokens = text::split_ws(line);
    if (tokens.empty()) throw ConfigError("empty layer entry");
    LayerSpec l;
    const std::string& kind = tokens[0];
    if (kind == "conv2d") l.kind = LayerKind::Conv2D;
    else if (kind == "relu") l.kind = LayerKind::ReLU;
    else if (kind == "maxpool2d") l.kind = LayerKind::MaxPool2D;
    else if (kind == "flatten") l.kind = LayerKind::Flatten;
    else if (kind == "dense") l.kind = LayerKind::Dense;
    else if (kind == "dropout") l.kind = LayerKind::Dropout;
    else if (kind == "softmax") l.kind = LayerKind::Softmax;
    else throw ConfigError("unknown layer kind '" + kind + "'");

    bool saw_kernel = false, saw_window = false, saw_units = false, saw_channels = false, saw_stride = false;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        const auto eq = tokens[i].find('=');
        if (eq == std::string::npos) throw ConfigError("expected param=value in layer entry: " + tokens[i]);
        const std::string key = tokens[i].substr(0, eq);
        const std::string value = tokens[i].substr(eq + 1);
        const auto as_size = [&] {
            auto v = text::parse_int(value, key);
            if (v <= 0) throw ConfigError(key + " must be positive");
            return static_cast<std::size_t>(v);
        };
        if (key == "out_channels" && l.kind == LayerKind::Conv2D) l.out_channels = as_size(), saw_channels = true;
        else if (key == "kernel" && l.kind == LayerKind::Conv2D) l.kernel_size = as_size(), saw_kernel = true;
        else if (key == "stride" && (l.kind == LayerKind::Conv2D || l.kind == LayerKind::MaxPool2D)) l.stride = as_size(), saw_stride = true;
        else if (key == "window" && l.kind == LayerKind::MaxPool2D) l.window = as_size(), saw_window = true;
        else if (key == "units" && l.kind == LayerKind::Dense) l.units = as_size(), saw_units = true;
        else if (key == "rate" && l.kind == LayerKind::Dropout) l.rate = text::parse_double(value, key);
        else throw ConfigError("unexpected parameter '" + key + "' for " + kind);
    }
    if (l.kind == LayerKind::Conv2D && !(saw_channels && saw_kernel))
        throw ConfigError("conv2d needs out_channels and kernel");
    if (l.kind == LayerKind::MaxPool2D && !saw_window) throw ConfigError("maxpool2d needs window");
    if (l.kind == LayerKind::MaxPool2D && !saw_stride) l.stride = l.window;
    if (l.kind == LayerKind::Dense && !saw_units) throw ConfigError("dense needs units");
    return l;
}

/// Parses and validates an architecture description.
inline ArchitectureSpec parse_architecture(std::string_view content, std::string_view source = "architecture") {
    const auto kv = text::parse_key_values(content, source);
    ArchitectureSpec spec;
    spec.layers.clear();
    bool saw_input = false;
    for (const auto& [key, value] : kv.entries) {
        if (key == "input") {
            const auto dims = text::split_ws(value);
            if (dims.size() != 3) throw ConfigError("input needs three dimensions: height width channels");
            for (std::size_t i = 0; i < 3; ++i) {
                auto d = text::parse_int(dims[i], "input");
                if (d <= 0) throw ConfigError("input dimensions must be positive");
                spec.input_shape[i] = static_cast<std::size_t>(d);
            }
            saw_input = true;
        } else if (key == "num_classes") {
            auto n = text::parse_int(value, key);
            if (n < 2) throw ConfigError("num_classes must be at least 2");
            spec.num_classes = static_cast<std::size_t>(n);
        } else if (key == "padding") {
            if (value != "valid") throw ConfigError("only 'valid' padding is supported");
        } else if (key == "layer") {
            spec.layers.push_back(parse_layer(value));
        } else {
            throw ConfigError("unknown architecture key '" + key + "'");
        }
    }
    if (!saw_input) throw ConfigError("architecture is missing 'input'");
    validate(spec);
    return spec;
}

inline ArchitectureSpec load_architecture(const std::filesystem::path& path) {
    return parse_architecture(text::read_file(path), path.string());
}

} // namespace wellqc
