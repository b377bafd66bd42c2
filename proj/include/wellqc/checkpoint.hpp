#pragma once

// Checkpoint container:
//
//   wellqc-checkpoint 1\n
//   <header length in bytes, decimal>\n
//   <header: JSON object, keys sorted>
//   <weights: each tensor listed in header["tensors"], in order, as
//    product(shape) IEEE-754 binary32 values, little-endian>
//
// The header carries the architecture (as architecture-file text), the
// hyperparameters, seed, method label, best epoch and the epoch history.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wellqc/architecture.hpp"
#include "wellqc/errors.hpp"
#include "wellqc/model.hpp"
#include "wellqc/optim.hpp"
#include "wellqc/text_format.hpp"

namespace wellqc {

inline constexpr int kCheckpointFormatVersion = 1;

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;  // cross-entropy + L2 penalty
    double train_ce = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;  // cross-entropy
    double val_accuracy = 0.0;
    double wall_seconds = 0.0;  // not persisted; varies between runs

    double train_l2() const { return train_loss - train_ce; }
};

struct Checkpoint {
    int format_version = kCheckpointFormatVersion;
    std::string method = "CNN";
    ArchitectureSpec architecture;
    Hyperparams hyperparams;
    std::uint64_t seed = 0;
    int best_epoch = 0;
    std::vector<EpochRecord> history;
    std::vector<Parameter<float>> params;

    Model<float> model() const { return Model<float>(architecture, params); }
};

/// One row per epoch. Wall time is omitted so identical runs give identical files.
inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,train_ce,train_l2,train_accuracy,val_loss,val_accuracy\n";
    for (const auto& r : history)
        os << r.epoch << ',' << text::format_double(r.train_loss) << ',' << text::format_double(r.train_ce) << ','
           << text::format_double(r.train_l2()) << ',' << text::format_double(r.train_accuracy) << ','
           << text::format_double(r.val_loss) << ',' << text::format_double(r.val_accuracy) << '\n';
    return os.str();
}

namespace detail {

inline nlohmann::json hyperparams_json(const Hyperparams& h) {
    return {{"learning_rate", h.learning_rate}, {"optimizer", h.optimizer},       {"epochs", h.epochs},
            {"batch_size", h.batch_size},       {"dropout_rate", h.dropout_rate}, {"l2_lambda", h.l2_lambda},
            {"loss", h.loss}};
}

inline Hyperparams hyperparams_from_json(const nlohmann::json& j) {
    Hyperparams h;
    h.learning_rate = j.at("learning_rate").get<double>();
    h.optimizer = j.at("optimizer").get<std::string>();
    h.epochs = j.at("epochs").get<int>();
    h.batch_size = j.at("batch_size").get<int>();
    h.dropout_rate = j.at("dropout_rate").get<double>();
    h.l2_lambda = j.at("l2_lambda").get<double>();
    h.loss = j.at("loss").get<std::string>();
    return h;
}

inline void append_le32(std::string& out, float v) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float read_le32(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

} // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    nlohmann::json header;
    header["format_version"] = ck.format_version;
    header["method"] = ck.method;
    header["architecture"] = to_text(ck.architecture);
    header["hyperparams"] = detail::hyperparams_json(ck.hyperparams);
    header["seed"] = ck.seed;
    header["best_epoch"] = ck.best_epoch;
    auto& hist = header["history"] = nlohmann::json::array();
    for (const auto& r : ck.history)
        hist.push_back({{"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"train_ce", r.train_ce},
                        {"train_accuracy", r.train_accuracy},
                        {"val_loss", r.val_loss},
                        {"val_accuracy", r.val_accuracy}});
    auto& tensors = header["tensors"] = nlohmann::json::array();
    for (const auto& p : ck.params)
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"is_weight", p.is_weight}});

    const std::string head = header.dump();
    std::string out = "wellqc-checkpoint " + std::to_string(kCheckpointFormatVersion) + "\n" +
                      std::to_string(head.size()) + "\n" + head;
    for (const auto& p : ck.params)
        for (auto v : p.value.data()) detail::append_le32(out, v);
    return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
    const auto line1 = bytes.find('\n');
    if (line1 == std::string_view::npos || bytes.substr(0, line1).rfind("wellqc-checkpoint ", 0) != 0)
        throw FormatError("not a wellqc checkpoint");
    const auto version = text::parse_int(bytes.substr(18, line1 - 18), "checkpoint version");
    if (version != kCheckpointFormatVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto line2 = bytes.find('\n', line1 + 1);
    if (line2 == std::string_view::npos) throw FormatError("truncated checkpoint header");
    const auto head_len = text::parse_uint64(bytes.substr(line1 + 1, line2 - line1 - 1), "header length");
    if (bytes.size() - (line2 + 1) < head_len) throw FormatError("truncated checkpoint header");

    Checkpoint ck;
    try {
        const auto header = nlohmann::json::parse(bytes.substr(line2 + 1, head_len));
        ck.format_version = header.at("format_version").get<int>();
        ck.method = header.at("method").get<std::string>();
        ck.architecture = parse_architecture(header.at("architecture").get<std::string>(), "checkpoint architecture");
        ck.hyperparams = detail::hyperparams_from_json(header.at("hyperparams"));
        ck.seed = header.at("seed").get<std::uint64_t>();
        ck.best_epoch = header.at("best_epoch").get<int>();
        for (const auto& r : header.at("history"))
            ck.history.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(),
                                  r.at("train_ce").get<double>(), r.at("train_accuracy").get<double>(),
                                  r.at("val_loss").get<double>(), r.at("val_accuracy").get<double>(), 0.0});
        std::size_t offset = line2 + 1 + head_len;
        for (const auto& t : header.at("tensors")) {
            Shape shape = t.at("shape").get<Shape>();
            const std::size_t n = shape_size(shape);
            if (bytes.size() - offset < 4 * n) throw FormatError("truncated weight block for " + t.at("name").get<std::string>());
            std::vector<float> data(n);
            const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
            for (std::size_t i = 0; i < n; ++i) data[i] = detail::read_le32(p + 4 * i);
            offset += 4 * n;
            ck.params.push_back({t.at("name").get<std::string>(), Tensor<float>(std::move(shape), std::move(data)),
                                 t.at("is_weight").get<bool>()});
        }
        if (offset != bytes.size()) throw FormatError("trailing bytes after weight blocks");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what());
    }
    ck.model();  // parameter shapes must agree with the architecture
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    text::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(text::read_file(path));
}

} // namespace wellqc
