#pragma once

// Run and grid configuration files use `key = value` lines.
//
// Run keys: architecture (path, relative to the config file), learning_rate,
// optimizer, epochs, batch_size, dropout_rate, l2_lambda, loss,
// val_fraction, seed, early_stopping, monitor, patience, folds, method,
// max_batch_loss.
//
// Grid keys: learning_rate, batch_size, dropout_rate, l2_lambda, each a
// comma- or space-separated candidate list.
//
// Precedence: built-in defaults < config file < overrides.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "wellqc/architecture.hpp"
#include "wellqc/errors.hpp"
#include "wellqc/grid_search.hpp"
#include "wellqc/text_format.hpp"
#include "wellqc/training.hpp"

namespace wellqc {

struct ResolvedConfig {
    RunConfig run;
    std::string architecture_source = "builtin:default_cnn";
};

inline std::string_view monitor_name(Monitor m) { return m == Monitor::ValLoss ? "val_loss" : "val_accuracy"; }

inline Monitor parse_monitor(std::string_view s) {
    if (s == "val_loss") return Monitor::ValLoss;
    if (s == "val_accuracy") return Monitor::ValAccuracy;
    throw ConfigError("unknown monitor '" + std::string(s) + "' (expected val_loss or val_accuracy)");
}

/// Applies one key. Relative architecture paths resolve against `base_dir`.
inline void apply_setting(ResolvedConfig& rc, const std::string& key, const std::string& value,
                          const std::filesystem::path& base_dir = {}) {
    using namespace text;
    auto& c = rc.run;
    auto& h = c.hyperparams;
    const auto as_int = [&](std::string_view what) { return static_cast<int>(parse_int(value, what)); };
    if (key == "architecture") {
        if (value == "builtin:default_cnn") {
            c.architecture = default_cnn_spec();
            rc.architecture_source = value;
        } else {
            std::filesystem::path p(value);
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            c.architecture = load_architecture(p);
            rc.architecture_source = p.string();
        }
    } else if (key == "learning_rate") h.learning_rate = parse_double(value, key);
    else if (key == "optimizer") h.optimizer = value;
    else if (key == "epochs") h.epochs = as_int(key);
    else if (key == "batch_size") h.batch_size = as_int(key);
    else if (key == "dropout_rate") h.dropout_rate = parse_double(value, key);
    else if (key == "l2_lambda") h.l2_lambda = parse_double(value, key);
    else if (key == "loss") h.loss = value;
    else if (key == "val_fraction") c.val_fraction = parse_double(value, key);
    else if (key == "seed") c.seed = parse_uint64(value, key);
    else if (key == "early_stopping") c.early_stopping.enabled = parse_bool(value, key);
    else if (key == "monitor") c.early_stopping.monitor = parse_monitor(value);
    else if (key == "patience") c.early_stopping.patience = as_int(key);
    else if (key == "folds") c.folds = static_cast<std::size_t>(parse_uint64(value, key));
    else if (key == "method") c.method = value;
    else if (key == "max_batch_loss") c.max_batch_loss = parse_double(value, key);
    else throw ConfigError("unknown config key '" + key + "'");
}

/// `key=value` as given on a command line.
inline std::pair<std::string, std::string> parse_override(std::string_view s) {
    const auto eq = s.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ConfigError("override '" + std::string(s) + "' is not key=value");
    return {std::string(text::trim(s.substr(0, eq))), std::string(text::trim(s.substr(eq + 1)))};
}

inline ResolvedConfig resolve_config(const std::filesystem::path& file,
                                     const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    ResolvedConfig rc;
    if (!file.empty()) {
        const auto kv = text::parse_key_values(text::read_file(file), file.string());
        for (const auto& [k, v] : kv.entries) apply_setting(rc, k, v, file.parent_path());
    }
    for (const auto& [k, v] : overrides) apply_setting(rc, k, v);
    rc.run.validate();
    return rc;
}

/// Every key, in a form resolve_config reads back to an equal RunConfig.
inline std::string to_text(const ResolvedConfig& rc) {
    using text::format_double;
    const auto& c = rc.run;
    const auto& h = c.hyperparams;
    std::string s;
    const auto line = [&](std::string_view k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
    line("architecture", rc.architecture_source);
    line("learning_rate", format_double(h.learning_rate));
    line("optimizer", h.optimizer);
    line("epochs", std::to_string(h.epochs));
    line("batch_size", std::to_string(h.batch_size));
    line("dropout_rate", format_double(h.dropout_rate));
    line("l2_lambda", format_double(h.l2_lambda));
    line("loss", h.loss);
    line("val_fraction", format_double(c.val_fraction));
    line("seed", std::to_string(c.seed));
    line("early_stopping", c.early_stopping.enabled ? "true" : "false");
    line("monitor", std::string(monitor_name(c.early_stopping.monitor)));
    line("patience", std::to_string(c.early_stopping.patience));
    line("folds", std::to_string(c.folds));
    line("method", c.method);
    line("max_batch_loss", format_double(c.max_batch_loss));
    return s;
}

// ------------------------------------------------------------------ grid

namespace detail {
inline std::vector<std::string> list_items(std::string_view s) {
    std::string t(s);
    for (auto& ch : t)
        if (ch == ',') ch = ' ';
    auto items = text::split_ws(t);
    if (items.empty()) throw ConfigError("empty candidate list");
    return items;
}

template <typename T, typename Parse>
std::vector<T> parse_list(std::string_view s, Parse parse) {
    std::vector<T> out;
    for (const auto& item : list_items(s)) out.push_back(static_cast<T>(parse(item)));
    return out;
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        if constexpr (std::is_floating_point_v<T>) s += text::format_double(v[i]);
        else s += std::to_string(v[i]);
    }
    return s;
}
} // namespace detail

inline void apply_grid_setting(GridSpec& g, const std::string& key, const std::string& value) {
    const auto dbl = [&](const std::string& v) { return text::parse_double(v, key); };
    const auto int_ = [&](const std::string& v) { return text::parse_int(v, key); };
    if (key == "learning_rate") g.learning_rate = detail::parse_list<double>(value, dbl);
    else if (key == "batch_size") g.batch_size = detail::parse_list<int>(value, int_);
    else if (key == "dropout_rate") g.dropout_rate = detail::parse_list<double>(value, dbl);
    else if (key == "l2_lambda") g.l2_lambda = detail::parse_list<double>(value, dbl);
    else throw ConfigError("unknown grid key '" + key + "'");
}

inline GridSpec parse_grid_spec(std::string_view content, std::string_view source = "grid") {
    GridSpec g;
    for (const auto& [k, v] : text::parse_key_values(content, source).entries) apply_grid_setting(g, k, v);
    g.validate();
    return g;
}

inline GridSpec load_grid_spec(const std::filesystem::path& path) {
    return parse_grid_spec(text::read_file(path), path.string());
}

inline std::string to_text(const GridSpec& g) {
    return "learning_rate = " + detail::join_list(g.learning_rate) + "\nbatch_size = " + detail::join_list(g.batch_size) +
           "\ndropout_rate = " + detail::join_list(g.dropout_rate) + "\nl2_lambda = " + detail::join_list(g.l2_lambda) +
           "\n";
}

} // namespace wellqc
