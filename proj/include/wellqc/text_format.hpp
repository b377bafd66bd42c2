#pragma once

// Small helpers shared by the key/value config formats.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "wellqc/errors.hpp"

namespace wellqc::text {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream is{std::string(s)};
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

/// Shortest string that parses back to exactly the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view what) {
    s = trim(s);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ConfigError("invalid number for " + std::string(what) + ": '" + std::string(s) + "'");
    return v;
}

inline std::int64_t parse_int(std::string_view s, std::string_view what) {
    s = trim(s);
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ConfigError("invalid integer for " + std::string(what) + ": '" + std::string(s) + "'");
    return v;
}

inline std::uint64_t parse_uint64(std::string_view s, std::string_view what) {
    s = trim(s);
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw ConfigError("invalid unsigned integer for " + std::string(what) + ": '" + std::string(s) + "'");
    return v;
}

inline bool parse_bool(std::string_view s, std::string_view what) {
    s = trim(s);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("invalid boolean for " + std::string(what) + ": '" + std::string(s) + "'");
}

/// Ordered `key = value` entries; blank lines and `#` comments are skipped.
/// Keys may repeat (architecture files list one `layer` per line).
struct KeyValues {
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(std::string_view key) const {
        const std::string* found = nullptr;
        for (const auto& [k, v] : entries)
            if (k == key) found = &v;  // last one wins
        return found;
    }

    void set(const std::string& key, const std::string& value) {
        for (auto& [k, v] : entries)
            if (k == key) {
                v = value;
                return;
            }
        entries.emplace_back(key, value);
    }
};

inline KeyValues parse_key_values(std::string_view content, std::string_view source) {
    KeyValues kv;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= content.size()) {
        auto end = content.find('\n', start);
        if (end == std::string_view::npos) end = content.size();
        auto line = content.substr(start, end - start);
        ++line_no;
        start = end + 1;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) {
            if (end == content.size()) break;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": expected 'key = value'");
        kv.entries.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
        if (end == content.size()) break;
    }
    return kv;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace wellqc::text
