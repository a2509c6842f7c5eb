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

// 2D feature-space heat maps.
//
// A heat map is a bins x bins image.  Column c holds x-feature values in
// [c, c+1) * scale_x / bins; row r holds y-feature values in
// [bins-1-r, bins-r) * scale_y / bins, so larger y values sit nearer the top
// row, as the maps are usually drawn.  Values below 0 or at/above the scale
// are dropped, never clamped.

#pragma once

#include <map>
#include <optional>

#include "topolabel/raster.hpp"
#include "topolabel/separability.hpp"

namespace topolabel {

struct HeatMapConfig {
    std::string feature_x = "RDEG1";
    std::string feature_y = "SWIR1";
    int bins = 128;
    double scale_x = 0.3;
    double scale_y = 0.6;

    void validate() const {
        if (bins != 64 && bins != 128 && bins != 256) throw ValidationError("heat-map bins must be 64, 128 or 256");
        if (!(scale_x > 0.0) || !(scale_y > 0.0)) throw ValidationError("heat-map scales must be positive");
    }
    size_t cells() const { return size_t(bins) * size_t(bins); }
    bool operator==(const HeatMapConfig&) const = default;
};

struct HeatMap {
    HeatMapConfig config;
    std::vector<uint32_t> counts;  // row-major, bins x bins
    uint64_t total_in_range = 0;

    explicit HeatMap(HeatMapConfig cfg = {}) : config(std::move(cfg)), counts(config.cells(), 0) {}

    uint32_t at(int row, int col) const { return counts[size_t(row) * config.bins + col]; }
    uint32_t max_count() const { return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end()); }
    void add(int32_t bin) {
        ++counts[size_t(bin)];
        ++total_in_range;
    }
    bool operator==(const HeatMap&) const = default;
};

inline constexpr int32_t kNoBin = -1;

/// Pixel -> flat bin index (row * bins + col), kNoBin when dropped.
struct BinIndexMap {
    int bins = 0;
    std::vector<int32_t> bin_of_pixel;
};

struct Projection {
    HeatMap heatmap;                      // every valid, in-range pixel
    BinIndexMap index;
    uint64_t valid_pixels = 0;
    uint64_t dropped = 0;                 // valid pixels outside the scales or with no-data features
    std::map<uint16_t, HeatMap> per_class;  // crop-candidate pixels only, when labels were given
};

/// Flat bin index for a feature pair, or kNoBin when out of range.
inline int32_t bin_of(const HeatMapConfig& cfg, float x, float y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return kNoBin;
    if (x < 0.0f || y < 0.0f || x >= cfg.scale_x || y >= cfg.scale_y) return kNoBin;
    int col = static_cast<int>(std::floor(double(x) / cfg.scale_x * cfg.bins));
    int ybin = static_cast<int>(std::floor(double(y) / cfg.scale_y * cfg.bins));
    // Float rounding can land exactly on `bins` for values just below the scale.
    col = std::min(col, cfg.bins - 1);
    ybin = std::min(ybin, cfg.bins - 1);
    int row = cfg.bins - 1 - ybin;
    return row * cfg.bins + col;
}

/// Projects every valid pixel into the feature space. With `labels`, per-class
/// grids are also built from pixels outside `never_crop` (all pixels when the
/// mask is empty).
inline Projection project(const BandStack& patch, const HeatMapConfig& cfg, const LabelRaster* labels = nullptr,
                          std::span<const uint8_t> never_crop = {}) {
    cfg.validate();
    auto xs = feature_plane(patch, cfg.feature_x);
    auto ys = feature_plane(patch, cfg.feature_y);
    if (labels && (labels->width() != patch.width() || labels->height() != patch.height()))
        throw ValidationError("label raster does not match patch geometry");
    if (!never_crop.empty() && never_crop.size() != patch.pixel_count())
        throw ValidationError("never-crop mask does not match patch geometry");

    Projection out{HeatMap(cfg), BinIndexMap{cfg.bins, std::vector<int32_t>(patch.pixel_count(), kNoBin)}, 0, 0, {}};
    for (size_t p = 0; p < patch.pixel_count(); ++p) {
        if (!patch.valid(p)) continue;
        ++out.valid_pixels;
        int32_t bin = bin_of(cfg, xs[p], ys[p]);
        if (bin == kNoBin) {
            ++out.dropped;
            continue;
        }
        out.index.bin_of_pixel[p] = bin;
        out.heatmap.add(bin);
        if (labels && (never_crop.empty() || !never_crop[p])) {
            uint16_t c = labels->at(p);
            if (is_class_code(c)) {
                auto [it, inserted] = out.per_class.try_emplace(c, cfg);
                it->second.add(bin);
            }
        }
    }
    if (out.valid_pixels == 0) throw ValidationError("patch has no valid pixels");
    return out;
}

/// Heat map of the indexed pixels whose mask value equals `in_mask`.
inline HeatMap masked_heatmap(const BinIndexMap& index, const HeatMapConfig& cfg, std::span<const uint8_t> mask,
                              bool in_mask) {
    if (index.bins != cfg.bins) throw ValidationError("bin index does not match heat-map config");
    if (mask.size() != index.bin_of_pixel.size()) throw ValidationError("mask does not match bin index");
    HeatMap hm(cfg);
    for (size_t p = 0; p < mask.size(); ++p) {
        int32_t bin = index.bin_of_pixel[p];
        if (bin != kNoBin && (mask[p] != 0) == in_mask) hm.add(bin);
    }
    return hm;
}

/// Recognizer input: four bins x bins planes, channel-major.
struct FourChannelInput {
    int bins = 0;
    std::vector<float> data;  // [4][bins][bins]

    float& at(int ch, int row, int col) { return data[(size_t(ch) * bins + row) * bins + col]; }
    float at(int ch, int row, int col) const { return data[(size_t(ch) * bins + row) * bins + col]; }
    std::span<const float> channel(int ch) const {
        return std::span<const float>(data).subspan(size_t(ch) * bins * bins, size_t(bins) * bins);
    }
};

/// ch1/ch2: log1p-normalized densities of crop-candidate and never-crop
/// pixels; ch3/ch4: x and y coordinates in [0,1] of the nonzero ch1 bins.
inline FourChannelInput build_channels(const HeatMap& crop_candidate, const HeatMap& never_crop) {
    if (!(crop_candidate.config == never_crop.config)) throw ValidationError("heat-map configs differ");
    const int bins = crop_candidate.config.bins;
    FourChannelInput in{bins, std::vector<float>(size_t(4) * bins * bins, 0.0f)};
    auto density = [&](const HeatMap& hm, int ch) {
        double denom = std::log1p(double(hm.max_count()));
        if (denom <= 0.0) return;
        for (int r = 0; r < bins; ++r)
            for (int c = 0; c < bins; ++c) in.at(ch, r, c) = float(std::log1p(double(hm.at(r, c))) / denom);
    };
    density(crop_candidate, 0);
    density(never_crop, 1);
    const double span = bins - 1;
    for (int r = 0; r < bins; ++r)
        for (int c = 0; c < bins; ++c)
            if (crop_candidate.at(r, c) > 0) {
                in.at(2, r, c) = float(c / span);
                in.at(3, r, c) = float(1.0 - r / span);
            }
    return in;
}

inline constexpr uint16_t kNoTarget = 0;

/// Per-bin class assignment (kNoTarget or a class id).
struct TargetMask {
    int bins = 0;
    std::vector<uint16_t> cells;

    size_t labeled() const { return cells.size() - size_t(std::count(cells.begin(), cells.end(), kNoTarget)); }
    bool blank() const { return labeled() == 0; }
};

inline TargetMask blank_target(int bins) { return {bins, std::vector<uint16_t>(size_t(bins) * bins, kNoTarget)}; }

/// Bins holding the densest `fraction` of each class's mass. Bins are taken in
/// descending count order (ties by row-major index) until the cumulative count
/// reaches fraction * total; bins claimed by several classes are dropped.
inline TargetMask build_target(const std::map<uint16_t, HeatMap>& per_class, double fraction = 0.5) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("target fraction must be in (0, 1]");
    if (per_class.empty()) throw ValidationError("target needs at least one class heat map");
    const HeatMapConfig& cfg = per_class.begin()->second.config;
    bool any_mass = false;
    for (const auto& [cls, hm] : per_class) {
        if (!(hm.config == cfg)) throw ValidationError("class heat maps differ in config");
        any_mass |= hm.total_in_range > 0;
    }
    if (!any_mass) throw ValidationError("target needs a class with positive mass");

    TargetMask mask = blank_target(cfg.bins);
    std::vector<uint8_t> claims(cfg.cells(), 0);
    for (const auto& [cls, hm] : per_class) {
        if (hm.total_in_range == 0) continue;
        std::vector<uint32_t> order;
        for (uint32_t b = 0; b < hm.counts.size(); ++b)
            if (hm.counts[b] > 0) order.push_back(b);
        std::stable_sort(order.begin(), order.end(),
                         [&](uint32_t a, uint32_t b) { return hm.counts[a] > hm.counts[b]; });
        const double goal = fraction * double(hm.total_in_range);
        uint64_t cumulative = 0;
        for (uint32_t b : order) {
            if (double(cumulative) >= goal) break;
            cumulative += hm.counts[b];
            if (claims[b]++ == 0) mask.cells[b] = cls;
        }
    }
    for (size_t b = 0; b < claims.size(); ++b)
        if (claims[b] > 1) mask.cells[b] = kNoTarget;
    return mask;
}

/// Pixels whose bin carries a class take that class; all others are unknown.
inline LabelRaster inverse_project(const TargetMask& mask, const BinIndexMap& index, int width, int height,
                                   std::vector<std::string> class_names) {
    if (mask.bins != index.bins || mask.cells.size() != size_t(index.bins) * index.bins)
        throw ValidationError("mask and bin index differ in bin geometry");
    if (index.bin_of_pixel.size() != size_t(width) * size_t(height))
        throw ValidationError("bin index does not match raster size");
    LabelRaster out(width, height, std::move(class_names), kUnknown);
    for (size_t p = 0; p < index.bin_of_pixel.size(); ++p) {
        int32_t bin = index.bin_of_pixel[p];
        if (bin == kNoBin) continue;
        uint16_t c = mask.cells[size_t(bin)];
        if (c != kNoTarget) out.set(p, c);
    }
    return out;
}

enum class Category { uncategorized, type_i, type_ii };
enum class CategorySource { jm_auto, human };

inline std::string_view to_string(Category c) {
    switch (c) {
        case Category::type_i: return "type-I";
        case Category::type_ii: return "type-II";
        default: return "uncategorized";
    }
}

inline Category parse_category(std::string_view s) {
    if (s == "type-I") return Category::type_i;
    if (s == "type-II") return Category::type_ii;
    if (s == "uncategorized") return Category::uncategorized;
    throw ValidationError("unknown category '" + std::string(s) + "'");
}

inline std::string_view to_string(CategorySource s) { return s == CategorySource::human ? "human" : "jm-auto"; }

inline CategorySource parse_category_source(std::string_view s) {
    if (s == "human") return CategorySource::human;
    if (s == "jm-auto") return CategorySource::jm_auto;
    throw ValidationError("unknown category source '" + std::string(s) + "'");
}

struct HeatMapRecord {
    std::string id;
    int patch = 0;
    int year = 0;
    int time_step = 0;
    std::optional<double> jm_value;
    Category category = Category::uncategorized;
    CategorySource category_source = CategorySource::jm_auto;
    std::string image;
};

/// Feature-space samples of the two recognizer classes in one patch.
struct PairSamples {
    Eigen::MatrixXd a;
    Eigen::MatrixXd b;
};

/// Crop-candidate, valid pixels of classes `a` and `b` as (x, y) feature rows.
inline PairSamples collect_pair_samples(const BandStack& patch, const LabelRaster& labels,
                                        std::span<const uint8_t> never_crop, const HeatMapConfig& cfg, uint16_t a,
                                        uint16_t b) {
    auto xs = feature_plane(patch, cfg.feature_x);
    auto ys = feature_plane(patch, cfg.feature_y);
    std::vector<size_t> pa, pb;
    for (size_t p = 0; p < patch.pixel_count(); ++p) {
        if (!patch.valid(p) || !std::isfinite(xs[p]) || !std::isfinite(ys[p])) continue;
        if (!never_crop.empty() && never_crop[p]) continue;
        if (labels.at(p) == a) pa.push_back(p);
        else if (labels.at(p) == b) pb.push_back(p);
    }
    auto gather = [&](const std::vector<size_t>& idx) {
        Eigen::MatrixXd m(Eigen::Index(idx.size()), 2);
        for (size_t i = 0; i < idx.size(); ++i) m(Eigen::Index(i), 0) = xs[idx[i]], m(Eigen::Index(i), 1) = ys[idx[i]];
        return m;
    };
    return {gather(pa), gather(pb)};
}

struct PretriageConfig {
    double jm_threshold = 1.5;
    size_t min_pixels = 1000;
};

/// Sets jm_value and, unless a human already decided, the category:
/// type-I iff both classes have min_pixels samples and JM >= threshold.
/// Records without samples stay as they are.
inline void pre_categorize(std::span<HeatMapRecord> records, std::span<const std::optional<PairSamples>> samples,
                           const PretriageConfig& cfg) {
    if (records.size() != samples.size()) throw ValidationError("records and samples differ in length");
    for (size_t i = 0; i < records.size(); ++i) {
        if (!samples[i]) continue;
        const auto& s = *samples[i];
        bool enough = size_t(s.a.rows()) >= cfg.min_pixels && size_t(s.b.rows()) >= cfg.min_pixels;
        std::optional<double> jm;
        if (size_t(s.a.rows()) >= kMinJmSamples && size_t(s.b.rows()) >= kMinJmSamples) {
            try {
                jm = jm_distance(s.a, s.b);
            } catch (const RuntimeError&) {
                jm.reset();
            }
        }
        records[i].jm_value = jm;
        if (records[i].category_source == CategorySource::human) continue;
        records[i].category = (enough && jm && *jm >= cfg.jm_threshold) ? Category::type_i : Category::type_ii;
        records[i].category_source = CategorySource::jm_auto;
    }
}

}  // namespace topolabel
