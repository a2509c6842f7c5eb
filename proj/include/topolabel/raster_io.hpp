/*
   Copyright 2026 The topolabel Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

// Raster containers.
//
// Every raster is a pair of files: `<name>.bst` / `<name>.lbl` holds the raw
// little-endian body and `<name>.bst.hdr` / `<name>.lbl.hdr` holds a UTF-8
// key-value header, one `key = value` per line:
//
//   format     = topolabel-bst | topolabel-lbl
//   version    = 1
//   width      = <int>
//   height     = <int>
//   bands      = Blue,Green,...          (.bst only, in body order)
//   classes    = corn,soybean            (.lbl only, ids 1..N in order)
//   doy        = <int>                   (.bst only)
//   year       = <int>
//   byte_order = little
//   provenance = <16 hex digits>         (optional config hash)
//
// .bst body: one row-major float32 plane per band, then one row-major byte
// plane of validity flags (0/1).  .lbl body: one row-major uint16 plane of cell
// codes (0 background, 1..N classes, 65534 conflict, 65535 unknown).

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

#include "topolabel/raster.hpp"

namespace topolabel {

inline constexpr int kContainerVersion = 1;

/// Ordered key-value header shared by all on-disk artifacts.
class KeyValueHeader {
   public:
    void set(const std::string& key, std::string value) {
        for (auto& [k, v] : entries_)
            if (k == key) {
                v = std::move(value);
                return;
            }
        entries_.emplace_back(key, std::move(value));
    }
    void set(const std::string& key, long long value) { set(key, std::to_string(value)); }

    bool has(std::string_view key) const {
        for (const auto& e : entries_)
            if (e.first == key) return true;
        return false;
    }

    const std::string& get(std::string_view key) const {
        for (const auto& e : entries_)
            if (e.first == key) return e.second;
        throw ValidationError("malformed header: missing key '" + std::string(key) + "'");
    }

    std::string get_or(std::string_view key, std::string fallback) const { return has(key) ? get(key) : fallback; }

    long long get_int(std::string_view key) const {
        const std::string& s = get(key);
        try {
            size_t used = 0;
            long long v = std::stoll(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ValidationError("malformed header: key '" + std::string(key) + "' is not an integer");
        }
    }

    std::string serialize() const {
        std::string out;
        for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
        return out;
    }

    static KeyValueHeader parse(std::string_view text) {
        KeyValueHeader h;
        std::istringstream in{std::string(text)};
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos) throw ValidationError("malformed header line: '" + line + "'");
            auto trim = [](std::string s) {
                auto b = s.find_first_not_of(" \t");
                auto e = s.find_last_not_of(" \t");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            h.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return h;
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

   private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write '" + path.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw RuntimeError("short write to '" + path.string() + "'");
}

inline std::filesystem::path header_path(const std::filesystem::path& body) {
    return std::filesystem::path(body.string() + ".hdr");
}

namespace detail {

inline std::vector<char> read_body(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    auto size = static_cast<size_t>(in.tellg());
    in.seekg(0);
    std::vector<char> data(size);
    in.read(data.data(), static_cast<std::streamsize>(size));
    if (!in) throw ValidationError("cannot read '" + path.string() + "'");
    return data;
}

inline void check_format(const KeyValueHeader& h, std::string_view format, const std::filesystem::path& path) {
    if (h.get("format") != format)
        throw ValidationError("'" + path.string() + "': expected format " + std::string(format));
    if (h.get_int("version") != kContainerVersion)
        throw ValidationError("'" + path.string() + "': unknown format version " + h.get("version"));
    if (h.get_or("byte_order", "little") != "little")
        throw ValidationError("'" + path.string() + "': unsupported byte order");
}

}  // namespace detail

inline void write_stack(const BandStack& stack, const std::filesystem::path& path, const std::string& provenance = {}) {
    KeyValueHeader h;
    h.set("format", "topolabel-bst");
    h.set("version", kContainerVersion);
    h.set("width", stack.width());
    h.set("height", stack.height());
    h.set("bands", join(stack.band_names(), ","));
    h.set("doy", stack.doy());
    h.set("year", stack.year());
    h.set("byte_order", "little");
    if (!provenance.empty()) h.set("provenance", provenance);
    write_text_file(header_path(path), h.serialize());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write '" + path.string() + "'");
    for (size_t b = 0; b < stack.band_count(); ++b) {
        auto plane = stack.band(b);
        out.write(reinterpret_cast<const char*>(plane.data()), static_cast<std::streamsize>(plane.size_bytes()));
    }
    auto mask = stack.valid_mask();
    out.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size_bytes()));
    if (!out) throw RuntimeError("short write to '" + path.string() + "'");
}

inline KeyValueHeader read_header(const std::filesystem::path& body_path) {
    return KeyValueHeader::parse(read_text_file(header_path(body_path)));
}

inline BandStack read_stack(const std::filesystem::path& path) {
    KeyValueHeader h = read_header(path);
    detail::check_format(h, "topolabel-bst", path);
    auto width = h.get_int("width");
    auto height = h.get_int("height");
    if (width <= 0 || height <= 0 || width > (1 << 20) || height > (1 << 20))
        throw ValidationError("'" + path.string() + "': malformed header dimensions");
    auto names = split(h.get("bands"), ',');
    BandStack stack(int(width), int(height), names, int(h.get_int("doy")), int(h.get_int("year")));

    std::vector<char> body = detail::read_body(path);
    size_t n = stack.pixel_count();
    size_t expected = names.size() * n * sizeof(float) + n;
    if (body.size() != expected)
        throw ValidationError("'" + path.string() + "': plane size mismatch (header declares " +
                              std::to_string(names.size()) + " bands, body holds " + std::to_string(body.size()) +
                              " bytes, expected " + std::to_string(expected) + ")");
    const char* cursor = body.data();
    for (size_t b = 0; b < names.size(); ++b) {
        std::memcpy(stack.band(b).data(), cursor, n * sizeof(float));
        cursor += n * sizeof(float);
    }
    std::memcpy(stack.valid_mask().data(), cursor, n);
    for (uint8_t v : stack.valid_mask())
        if (v > 1) throw ValidationError("'" + path.string() + "': validity plane holds values other than 0/1");
    return stack;
}

inline void write_labels(const LabelRaster& labels, const std::filesystem::path& path, int year = 0,
                         const std::string& provenance = {}) {
    KeyValueHeader h;
    h.set("format", "topolabel-lbl");
    h.set("version", kContainerVersion);
    h.set("width", labels.width());
    h.set("height", labels.height());
    h.set("classes", join(labels.class_names(), ","));
    h.set("year", year);
    h.set("byte_order", "little");
    if (!provenance.empty()) h.set("provenance", provenance);
    write_text_file(header_path(path), h.serialize());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write '" + path.string() + "'");
    auto cells = labels.cells();
    out.write(reinterpret_cast<const char*>(cells.data()), static_cast<std::streamsize>(cells.size_bytes()));
    if (!out) throw RuntimeError("short write to '" + path.string() + "'");
}

inline LabelRaster read_labels(const std::filesystem::path& path) {
    KeyValueHeader h = read_header(path);
    detail::check_format(h, "topolabel-lbl", path);
    auto width = h.get_int("width");
    auto height = h.get_int("height");
    if (width <= 0 || height <= 0 || width > (1 << 20) || height > (1 << 20))
        throw ValidationError("'" + path.string() + "': malformed header dimensions");
    LabelRaster labels(int(width), int(height), split(h.get("classes"), ','));
    std::vector<char> body = detail::read_body(path);
    if (body.size() != labels.pixel_count() * sizeof(uint16_t))
        throw ValidationError("'" + path.string() + "': plane size mismatch");
    for (size_t p = 0; p < labels.pixel_count(); ++p) {
        uint16_t code;
        std::memcpy(&code, body.data() + p * sizeof(uint16_t), sizeof(uint16_t));
        labels.set(p, code);
    }
    return labels;
}

}  // namespace topolabel
