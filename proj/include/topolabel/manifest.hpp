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

// Heat-map bundle: one directory per recognizer holding
//
//   manifest.json    record list; review tools rewrite only `category` and
//                    `category_source`
//   <id>.pgm         8-bit binary graymap of the crop-candidate density channel
//   <id>.rec(.hdr)   recognizer input (4 float32 planes) and 50% target
//                    (uint16 pair-local codes) plus class statistics
//
// manifest.json:
//   { "version": 1, "recognizer": "...", "feature_pair": [x, y],
//     "class_pair": [a, b], "jm_threshold": 1.5,
//     "records": [ { "id", "patch", "year", "time_step", "image",
//                    "jm_value" (number or null), "category",
//                    "category_source" }, ... ] }

#pragma once

#include <json.hpp>

#include "topolabel/recognizer.hpp"

namespace topolabel {

inline constexpr int kManifestVersion = 1;

struct Manifest {
    std::string recognizer;
    std::pair<std::string, std::string> feature_pair;
    std::pair<std::string, std::string> class_pair;
    double jm_threshold = 1.5;
    std::vector<HeatMapRecord> records;

    const HeatMapRecord* find(std::string_view id) const {
        for (const auto& r : records)
            if (r.id == id) return &r;
        return nullptr;
    }
};

inline nlohmann::ordered_json to_json(const Manifest& m) {
    nlohmann::ordered_json j;
    j["version"] = kManifestVersion;
    j["recognizer"] = m.recognizer;
    j["feature_pair"] = {m.feature_pair.first, m.feature_pair.second};
    j["class_pair"] = {m.class_pair.first, m.class_pair.second};
    j["jm_threshold"] = m.jm_threshold;
    j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : m.records) {
        nlohmann::ordered_json e;
        e["id"] = r.id;
        e["patch"] = r.patch;
        e["year"] = r.year;
        e["time_step"] = r.time_step;
        e["image"] = r.image;
        if (r.jm_value) e["jm_value"] = *r.jm_value;
        else e["jm_value"] = nullptr;
        e["category"] = std::string(to_string(r.category));
        e["category_source"] = std::string(to_string(r.category_source));
        j["records"].push_back(std::move(e));
    }
    return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != kManifestVersion)
            throw ValidationError("unknown manifest version " + j.at("version").dump());
        Manifest m;
        m.recognizer = j.at("recognizer").get<std::string>();
        m.feature_pair = {j.at("feature_pair").at(0).get<std::string>(), j.at("feature_pair").at(1).get<std::string>()};
        m.class_pair = {j.at("class_pair").at(0).get<std::string>(), j.at("class_pair").at(1).get<std::string>()};
        m.jm_threshold = j.at("jm_threshold").get<double>();
        for (const auto& e : j.at("records")) {
            HeatMapRecord r;
            r.id = e.at("id").get<std::string>();
            r.patch = e.at("patch").get<int>();
            r.year = e.at("year").get<int>();
            r.time_step = e.at("time_step").get<int>();
            r.image = e.at("image").get<std::string>();
            if (!e.at("jm_value").is_null()) r.jm_value = e.at("jm_value").get<double>();
            r.category = parse_category(e.at("category").get<std::string>());
            r.category_source = parse_category_source(e.at("category_source").get<std::string>());
            m.records.push_back(std::move(r));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed manifest: ") + e.what());
    }
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
    write_text_file(path, to_json(m).dump(2) + "\n");
}

inline Manifest read_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("'" + path.string() + "': " + e.what());
    }
    return manifest_from_json(j);
}

/// Carries human decisions from `previous` into `next` (matched by id).
inline void keep_human_decisions(Manifest& next, const Manifest& previous) {
    for (auto& r : next.records)
        if (const auto* old = previous.find(r.id); old && old->category_source == CategorySource::human) {
            r.category = old->category;
            r.category_source = CategorySource::human;
        }
}

/// Binary graymap (P5), values linear in [0, 1] mapped to 0..255.
inline void write_pgm(const std::filesystem::path& path, std::span<const float> plane, int width, int height) {
    if (plane.size() != size_t(width) * size_t(height)) throw ValidationError("graymap size mismatch");
    std::string data = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    for (float v : plane) data.push_back(char(uint8_t(std::lround(std::clamp(double(v), 0.0, 1.0) * 255.0))));
    write_text_file(path, data);
}

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;
};

inline GrayImage read_pgm(const std::filesystem::path& path) {
    std::string data = read_text_file(path);
    std::istringstream in(data);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw ValidationError("'" + path.string() + "': not an 8-bit P5 graymap");
    in.get();
    size_t offset = size_t(in.tellg());
    if (data.size() != offset + size_t(w) * size_t(h)) throw ValidationError("'" + path.string() + "': truncated graymap");
    GrayImage img{w, h, std::vector<uint8_t>(data.begin() + std::ptrdiff_t(offset), data.end())};
    return img;
}

/// Two-class statistics of a record, enough to recompute JM without pixels.
struct PairStatistics {
    size_t count_a = 0;
    size_t count_b = 0;
    std::optional<GaussianFit> fit_a;
    std::optional<GaussianFit> fit_b;
};

inline PairStatistics pair_statistics(const PairSamples& s) {
    PairStatistics st{size_t(s.a.rows()), size_t(s.b.rows()), std::nullopt, std::nullopt};
    auto fit = [](const Eigen::MatrixXd& m) -> std::optional<GaussianFit> {
        if (size_t(m.rows()) < kMinJmSamples || !m.allFinite()) return std::nullopt;
        return fit_gaussian(m);
    };
    st.fit_a = fit(s.a);
    st.fit_b = fit(s.b);
    return st;
}

/// Category decision from stored statistics, matching pre_categorize().
inline void categorize(HeatMapRecord& r, const PairStatistics& st, const PretriageConfig& cfg) {
    std::optional<double> jm;
    if (st.fit_a && st.fit_b) {
        try {
            jm = jm_distance(*st.fit_a, *st.fit_b);
        } catch (const RuntimeError&) {
            jm.reset();
        }
    }
    r.jm_value = jm;
    if (r.category_source == CategorySource::human) return;
    bool enough = st.count_a >= cfg.min_pixels && st.count_b >= cfg.min_pixels;
    r.category = (enough && jm && *jm >= cfg.jm_threshold) ? Category::type_i : Category::type_ii;
    r.category_source = CategorySource::jm_auto;
}

struct HeatMapRecordData {
    FourChannelInput input;
    TargetMask target;  // 50% target, used only when the record is type-I
    PairStatistics stats;
};

namespace detail {

inline std::string fit_to_string(const std::optional<GaussianFit>& f) {
    if (!f) return "none";
    return format_double(f->mean(0)) + "," + format_double(f->mean(1)) + "," + format_double(f->cov(0, 0)) + "," +
           format_double(f->cov(0, 1)) + "," + format_double(f->cov(1, 1));
}

inline std::optional<GaussianFit> fit_from_string(const std::string& s) {
    if (s == "none") return std::nullopt;
    auto v = split(s, ',');
    if (v.size() != 5) throw ValidationError("malformed class statistics '" + s + "'");
    GaussianFit f{Eigen::VectorXd(2), Eigen::MatrixXd(2, 2)};
    f.mean << std::stod(v[0]), std::stod(v[1]);
    f.cov << std::stod(v[2]), std::stod(v[3]), std::stod(v[3]), std::stod(v[4]);
    return f;
}

}  // namespace detail

inline void write_record(const HeatMapRecordData& d, const HeatMapRecord& meta, const std::filesystem::path& path,
                         const std::string& provenance = {}) {
    KeyValueHeader h;
    h.set("format", "topolabel-heatmap");
    h.set("version", kContainerVersion);
    h.set("id", meta.id);
    h.set("patch", meta.patch);
    h.set("year", meta.year);
    h.set("time_step", meta.time_step);
    h.set("bins", d.input.bins);
    h.set("count_a", static_cast<long long>(d.stats.count_a));
    h.set("count_b", static_cast<long long>(d.stats.count_b));
    h.set("fit_a", detail::fit_to_string(d.stats.fit_a));
    h.set("fit_b", detail::fit_to_string(d.stats.fit_b));
    h.set("byte_order", "little");
    if (!provenance.empty()) h.set("provenance", provenance);
    write_text_file(header_path(path), h.serialize());
    std::string body(reinterpret_cast<const char*>(d.input.data.data()), d.input.data.size() * sizeof(float));
    body.append(reinterpret_cast<const char*>(d.target.cells.data()), d.target.cells.size() * sizeof(uint16_t));
    write_text_file(path, body);
}

inline HeatMapRecordData read_record(const std::filesystem::path& path, KeyValueHeader* header_out = nullptr) {
    KeyValueHeader h = read_header(path);
    detail::check_format(h, "topolabel-heatmap", path);
    const int bins = int(h.get_int("bins"));
    if (bins != 64 && bins != 128 && bins != 256) throw ValidationError("'" + path.string() + "': bad bin count");
    HeatMapRecordData d;
    d.input = {bins, std::vector<float>(size_t(4) * bins * bins)};
    d.target = blank_target(bins);
    std::vector<char> body = detail::read_body(path);
    const size_t in_bytes = d.input.data.size() * sizeof(float);
    if (body.size() != in_bytes + d.target.cells.size() * sizeof(uint16_t))
        throw ValidationError("'" + path.string() + "': plane size mismatch");
    std::memcpy(d.input.data.data(), body.data(), in_bytes);
    std::memcpy(d.target.cells.data(), body.data() + in_bytes, body.size() - in_bytes);
    d.stats.count_a = size_t(h.get_int("count_a"));
    d.stats.count_b = size_t(h.get_int("count_b"));
    d.stats.fit_a = detail::fit_from_string(h.get("fit_a"));
    d.stats.fit_b = detail::fit_from_string(h.get("fit_b"));
    if (header_out) *header_out = std::move(h);
    return d;
}

}  // namespace topolabel
