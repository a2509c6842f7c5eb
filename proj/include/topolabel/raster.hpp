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

#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "topolabel/common.hpp"

namespace topolabel {

inline constexpr float kMinReflectance = -0.2f;
inline constexpr float kMaxReflectance = 1.6f;

inline const std::vector<std::string>& default_band_names() {
    static const std::vector<std::string> names = {"Blue", "Green", "Red", "RDEG1", "NIR", "SWIR1"};
    return names;
}

/// One composite patch at one date: named reflectance planes plus a validity mask.
class BandStack {
   public:
    BandStack() = default;

    BandStack(int width, int height, std::vector<std::string> band_names, int doy = 0, int year = 0)
        : width_(width), height_(height), names_(std::move(band_names)), doy_(doy), year_(year) {
        if (width <= 0 || height <= 0) throw ValidationError("band stack dimensions must be positive");
        std::set<std::string> unique(names_.begin(), names_.end());
        if (unique.size() != names_.size()) throw ValidationError("band names must be unique");
        planes_.assign(names_.size(), std::vector<float>(pixel_count(), 0.0f));
        valid_.assign(pixel_count(), 1);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    size_t pixel_count() const { return static_cast<size_t>(width_) * static_cast<size_t>(height_); }
    size_t band_count() const { return names_.size(); }
    const std::vector<std::string>& band_names() const { return names_; }
    int doy() const { return doy_; }
    int year() const { return year_; }
    void set_doy(int doy) { doy_ = doy; }
    void set_year(int year) { year_ = year; }

    std::optional<size_t> find_band(std::string_view name) const {
        for (size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return i;
        return std::nullopt;
    }

    size_t band_index(std::string_view name) const {
        auto i = find_band(name);
        if (!i) throw ValidationError("missing band '" + std::string(name) + "'");
        return *i;
    }

    std::span<float> band(size_t b) { return planes_.at(b); }
    std::span<const float> band(size_t b) const { return planes_.at(b); }
    std::span<const float> band(std::string_view name) const { return band(band_index(name)); }

    float value(size_t b, size_t pixel) const { return planes_[b][pixel]; }
    float& value(size_t b, size_t pixel) { return planes_[b][pixel]; }

    std::span<uint8_t> valid_mask() { return valid_; }
    std::span<const uint8_t> valid_mask() const { return valid_; }
    bool valid(size_t pixel) const { return valid_[pixel] != 0; }
    void set_valid(size_t pixel, bool v) { valid_[pixel] = v ? 1 : 0; }

    bool same_geometry(const BandStack& o) const {
        return width_ == o.width_ && height_ == o.height_ && names_ == o.names_;
    }

    /// Clears validity of pixels holding non-finite or out-of-bounds reflectance.
    size_t apply_reflectance_bounds() {
        size_t cleared = 0;
        for (size_t p = 0; p < pixel_count(); ++p) {
            if (!valid_[p]) continue;
            for (const auto& plane : planes_) {
                float v = plane[p];
                if (!std::isfinite(v) || v < kMinReflectance || v > kMaxReflectance) {
                    valid_[p] = 0;
                    ++cleared;
                    break;
                }
            }
        }
        return cleared;
    }

    /// Bitwise comparison, so no-data planes compare equal to themselves.
    bool operator==(const BandStack& o) const {
        if (width_ != o.width_ || height_ != o.height_ || names_ != o.names_ || doy_ != o.doy_ || year_ != o.year_ ||
            valid_ != o.valid_)
            return false;
        for (size_t b = 0; b < planes_.size(); ++b)
            if (std::memcmp(planes_[b].data(), o.planes_[b].data(), planes_[b].size() * sizeof(float)) != 0) return false;
        return true;
    }

   private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::string> names_;
    std::vector<std::vector<float>> planes_;
    std::vector<uint8_t> valid_;
    int doy_ = 0;
    int year_ = 0;
};

/// Day-of-year window covered by one composite of a time series.
struct TimeStep {
    int index = 0;
    int doy_start = 0;
    int doy_end = 0;
    int doy_mid() const { return (doy_start + doy_end) / 2; }
};

/// Sequence of `count` equal-length, contiguous windows starting at first_doy.
inline std::vector<TimeStep> make_time_steps(int first_doy, int length_days, int count) {
    if (length_days <= 0 || count <= 0) throw ValidationError("time steps need positive length and count");
    std::vector<TimeStep> steps;
    for (int i = 0; i < count; ++i)
        steps.push_back({i, first_doy + i * length_days, first_doy + (i + 1) * length_days - 1});
    return steps;
}

enum class CompositeStatistic { median };

/// Inclusive day-of-year window reduced by a per-band statistic of clear observations.
struct CompositeWindow {
    int doy_start = 0;
    int doy_end = 0;
    CompositeStatistic statistic = CompositeStatistic::median;

    int length() const { return doy_end - doy_start + 1; }
    int midpoint() const { return (doy_start + doy_end) / 2; }
    bool contains(int doy) const { return doy >= doy_start && doy <= doy_end; }
};

/// Median composite of the stacks whose doy falls in `window`. Even counts take
/// the lower median; output validity requires one clear contributing observation.
inline BandStack composite(std::span<const BandStack> series, const CompositeWindow& window) {
    if (window.length() <= 0) throw ValidationError("composite window must have positive length");
    std::vector<const BandStack*> members;
    for (const auto& s : series)
        if (window.contains(s.doy())) members.push_back(&s);
    if (members.empty()) throw ValidationError("no observations in window");
    const BandStack& ref = *members.front();
    for (const BandStack* s : members)
        if (!s->same_geometry(ref)) throw ValidationError("composite inputs differ in geometry or band order");

    BandStack out(ref.width(), ref.height(), ref.band_names(), window.midpoint(), ref.year());
    std::vector<float> scratch(members.size());
    for (size_t p = 0; p < ref.pixel_count(); ++p) {
        size_t n_valid = 0;
        for (const BandStack* s : members) n_valid += s->valid(p);
        out.set_valid(p, n_valid > 0);
        for (size_t b = 0; b < ref.band_count(); ++b) {
            if (n_valid == 0) {
                out.value(b, p) = kNoData;
                continue;
            }
            size_t k = 0;
            for (const BandStack* s : members)
                if (s->valid(p)) scratch[k++] = s->value(b, p);
            out.value(b, p) = lower_median(scratch.data(), k);
        }
    }
    return out;
}

enum class SpectralIndex { NDVI, EVI, GCVI, LSWI };

inline constexpr std::array<SpectralIndex, 4> kAllIndices = {SpectralIndex::NDVI, SpectralIndex::EVI, SpectralIndex::GCVI,
                                                             SpectralIndex::LSWI};

inline std::string_view index_name(SpectralIndex idx) {
    switch (idx) {
        case SpectralIndex::NDVI: return "NDVI";
        case SpectralIndex::EVI: return "EVI";
        case SpectralIndex::GCVI: return "GCVI";
        case SpectralIndex::LSWI: return "LSWI";
    }
    return "";
}

inline std::optional<SpectralIndex> parse_index(std::string_view name) {
    for (auto idx : kAllIndices)
        if (index_name(idx) == name) return idx;
    return std::nullopt;
}

inline constexpr double kMinDenominator = 1e-6;

/// Band values an index needs, in the order index_value() expects them.
inline std::vector<std::string_view> index_bands(SpectralIndex idx) {
    switch (idx) {
        case SpectralIndex::NDVI: return {"NIR", "Red"};
        case SpectralIndex::EVI: return {"NIR", "Red", "Blue"};
        case SpectralIndex::GCVI: return {"NIR", "Green"};
        case SpectralIndex::LSWI: return {"NIR", "SWIR1"};
    }
    return {};
}

inline float ratio_or_no_data(double num, double den) {
    if (std::abs(den) < kMinDenominator) return kNoData;
    return static_cast<float>(num / den);
}

/// Index from its input bands (ordered as index_bands()).
inline float index_value(SpectralIndex idx, std::span<const float> in) {
    for (float v : in)
        if (!std::isfinite(v)) return kNoData;
    switch (idx) {
        case SpectralIndex::NDVI: return ratio_or_no_data(double(in[0]) - in[1], double(in[0]) + in[1]);
        case SpectralIndex::EVI:
            return ratio_or_no_data(2.5 * (double(in[0]) - in[1]), double(in[0]) + 6.0 * in[1] - 7.5 * in[2] + 1.0);
        case SpectralIndex::GCVI: {
            float r = ratio_or_no_data(in[0], in[1]);
            return is_no_data(r) ? r : r - 1.0f;
        }
        case SpectralIndex::LSWI: return ratio_or_no_data(double(in[0]) - in[1], double(in[0]) + in[1]);
    }
    return kNoData;
}

/// Per-pixel index plane; invalid pixels and near-zero denominators hold kNoData.
inline std::vector<float> compute_index(const BandStack& stack, std::string_view name) {
    auto idx = parse_index(name);
    if (!idx) throw ValidationError("unknown index '" + std::string(name) + "'");
    std::vector<size_t> bands;
    for (auto b : index_bands(*idx)) bands.push_back(stack.band_index(b));
    std::vector<float> out(stack.pixel_count(), kNoData);
    std::array<float, 3> in{};
    for (size_t p = 0; p < stack.pixel_count(); ++p) {
        if (!stack.valid(p)) continue;
        for (size_t k = 0; k < bands.size(); ++k) in[k] = stack.value(bands[k], p);
        out[p] = index_value(*idx, std::span<const float>(in.data(), bands.size()));
    }
    return out;
}

/// Band or index plane by name, kNoData where invalid.
inline std::vector<float> feature_plane(const BandStack& stack, std::string_view name) {
    if (auto b = stack.find_band(name)) {
        std::vector<float> out(stack.band(*b).begin(), stack.band(*b).end());
        for (size_t p = 0; p < out.size(); ++p)
            if (!stack.valid(p)) out[p] = kNoData;
        return out;
    }
    if (parse_index(name)) return compute_index(stack, name);
    throw ValidationError("unknown feature '" + std::string(name) + "'");
}

// Label cell codes.
inline constexpr uint16_t kBackground = 0;
inline constexpr std::string_view kBackgroundName = "background";
inline constexpr uint16_t kConflict = 65534;
inline constexpr uint16_t kUnknown = 65535;

inline bool is_class_code(uint16_t c) { return c != kBackground && c != kConflict && c != kUnknown; }

/// Per-pixel class assignments; class ids index `class_names` starting at 1.
class LabelRaster {
   public:
    LabelRaster() = default;
    LabelRaster(int width, int height, std::vector<std::string> class_names, uint16_t fill = kUnknown)
        : width_(width), height_(height), classes_(std::move(class_names)), cells_(size_t(width) * size_t(height), fill) {
        if (width <= 0 || height <= 0) throw ValidationError("label raster dimensions must be positive");
        if (classes_.size() >= kConflict) throw ValidationError("too many classes");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    size_t pixel_count() const { return cells_.size(); }
    const std::vector<std::string>& class_names() const { return classes_; }
    size_t class_count() const { return classes_.size(); }

    uint16_t class_id(std::string_view name) const {
        for (size_t i = 0; i < classes_.size(); ++i)
            if (classes_[i] == name) return static_cast<uint16_t>(i + 1);
        throw ValidationError("unknown class '" + std::string(name) + "'");
    }

    uint16_t at(size_t p) const { return cells_[p]; }
    void set(size_t p, uint16_t code) {
        if (is_class_code(code) && code > classes_.size())
            throw ValidationError("class id " + std::to_string(code) + " not in class table");
        cells_[p] = code;
    }
    std::span<const uint16_t> cells() const { return cells_; }

    bool same_geometry(const LabelRaster& o) const { return width_ == o.width_ && height_ == o.height_; }

    size_t count(uint16_t code) const { return static_cast<size_t>(std::count(cells_.begin(), cells_.end(), code)); }

    bool operator==(const LabelRaster& o) const = default;

   private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::string> classes_;
    std::vector<uint16_t> cells_;
};

}  // namespace topolabel
