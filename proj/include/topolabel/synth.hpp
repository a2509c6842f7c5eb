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

// Synthetic multi-year scenes with class-conditional spectral trajectories.
//
// Field geometry and the background (never cultivated) fields depend only on
// the seed and patch index, so they are identical in every year.  Crop fields
// are re-assigned each year.  Pixel reflectance is the class mean for that
// year and time step plus i.i.d. Gaussian noise; clouds invalidate square
// blocks independently per time step.

#pragma once

#include <array>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "topolabel/raster.hpp"

namespace topolabel {

/// Inter-annual effect applied to a trajectory: additive offset per band and
/// a whole-season delay (positive = later development).
struct YearEffect {
    std::vector<double> offset;
    double delay_days = 0.0;
};

struct ClassTrajectory {
    std::string name;
    std::vector<std::vector<double>> mean;    // [step][band], reference year
    std::vector<std::vector<double>> stddev;  // [step][band]
    std::map<int, YearEffect> year_effects;

    /// Mean and stddev for `year` at `step`, delay applied by linear
    /// interpolation between step midpoints (clamped at the series ends).
    std::pair<std::vector<double>, std::vector<double>> at(int year, size_t step,
                                                           std::span<const TimeStep> steps) const {
        const YearEffect* effect = nullptr;
        if (auto it = year_effects.find(year); it != year_effects.end()) effect = &it->second;
        double doy = steps[step].doy_mid() - (effect ? effect->delay_days : 0.0);
        size_t lo = 0, hi = 0;
        double w = 0.0;
        if (doy <= steps.front().doy_mid()) {
            lo = hi = 0;
        } else if (doy >= steps.back().doy_mid()) {
            lo = hi = steps.size() - 1;
        } else {
            while (hi + 1 < steps.size() && steps[hi].doy_mid() < doy) ++hi;
            lo = hi - 1;
            w = (doy - steps[lo].doy_mid()) / double(steps[hi].doy_mid() - steps[lo].doy_mid());
        }
        std::vector<double> m(mean[lo].size()), s(mean[lo].size());
        for (size_t b = 0; b < m.size(); ++b) {
            m[b] = (1 - w) * mean[lo][b] + w * mean[hi][b];
            s[b] = (1 - w) * stddev[lo][b] + w * stddev[hi][b];
            if (effect && !effect->offset.empty()) m[b] += effect->offset.at(b);
        }
        return {m, s};
    }

    void validate(size_t n_steps, size_t n_bands) const {
        if (mean.size() != n_steps || stddev.size() != n_steps)
            throw ValidationError("trajectory '" + name + "' is not defined for every time step");
        for (size_t t = 0; t < n_steps; ++t) {
            if (mean[t].size() != n_bands || stddev[t].size() != n_bands)
                throw ValidationError("trajectory '" + name + "' has the wrong band count");
            for (double s : stddev[t])
                if (!(s > 0.0)) throw ValidationError("trajectory '" + name + "' needs std > 0");
        }
        for (const auto& [year, e] : year_effects)
            if (!e.offset.empty() && e.offset.size() != n_bands)
                throw ValidationError("trajectory '" + name + "' year " + std::to_string(year) +
                                      " offset has the wrong band count");
    }
};

struct SceneConfig {
    int patch_size = 512;
    int patches = 8;
    int field_min = 16;
    int field_max = 96;
    /// Class proportions including kBackgroundName; must sum to 1.
    std::vector<std::pair<std::string, double>> mixture;
    double cloud_prob = 0.1;
    int cloud_block = 32;
    std::vector<std::string> bands = default_band_names();
    std::vector<TimeStep> time_steps = make_time_steps(91, 15, 12);
    uint64_t seed = 0;

    std::vector<std::string> crop_classes() const {
        std::vector<std::string> out;
        for (const auto& [name, p] : mixture)
            if (name != kBackgroundName) out.push_back(name);
        return out;
    }

    void validate() const {
        if (patch_size < 64) throw ValidationError("patch_size must be >= 64");
        if (patches < 1) throw ValidationError("need at least one patch");
        if (field_min < 1 || field_max < field_min || field_min > patch_size)
            throw ValidationError("field side range infeasible for patch size");
        if (cloud_prob < 0.0 || cloud_prob > 1.0 || cloud_block < 1) throw ValidationError("bad cloud settings");
        double total = 0.0;
        bool has_background = false;
        for (const auto& [name, p] : mixture) {
            if (p < 0.0) throw ValidationError("negative mixture proportion for '" + name + "'");
            total += p;
            has_background |= name == kBackgroundName;
        }
        if (std::abs(total - 1.0) > 1e-6) throw ValidationError("mixture proportions must sum to 1");
        if (!has_background) throw ValidationError("mixture must include the background class");
        if (crop_classes().size() < 2) throw ValidationError("need at least two crop classes");
        double min_area = double(field_min) * field_min / (double(patch_size) * patch_size);
        for (const auto& [name, p] : mixture)
            if (p > 0.0 && p < 0.25 * min_area)
                throw ValidationError("mixture proportion for '" + name + "' is smaller than a field can realize");
    }
};

struct Field {
    int x = 0, y = 0, w = 0, h = 0;
    int cls = 0;  // index into the mixture
    long long area() const { return static_cast<long long>(w) * h; }
};

namespace detail {

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Splits [0, extent) into runs with lengths in [lo, hi]; a short tail merges
/// into the previous run.
inline std::vector<int> partition_extent(std::mt19937_64& rng, int extent, int lo, int hi) {
    std::vector<int> runs;
    int used = 0;
    while (used < extent) {
        int len = uniform_int(rng, lo, hi);
        if (extent - used - len < lo) len = extent - used;
        runs.push_back(len);
        used += len;
    }
    return runs;
}

/// Assigns the listed fields to classes (largest remaining deficit first), then
/// moves full-width row strips between classes until areas match targets
/// within `tolerance` pixels.
inline void assign_fields(std::vector<Field>& fields, const std::vector<size_t>& subset,
                          const std::vector<std::pair<int, double>>& targets, double tolerance, std::mt19937_64& rng) {
    std::vector<size_t> order = subset;
    std::shuffle(order.begin(), order.end(), rng);
    std::map<int, double> assigned;
    for (const auto& [cls, t] : targets) assigned[cls] = 0.0;
    for (size_t f : order) {
        int best = targets.front().first;
        double best_deficit = -std::numeric_limits<double>::infinity();
        for (const auto& [cls, t] : targets) {
            double deficit = t - assigned[cls];
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = cls;
            }
        }
        fields[f].cls = best;
        assigned[best] += double(fields[f].area());
    }

    std::vector<size_t> members = subset;
    for (int iter = 0; iter < 10000; ++iter) {
        int surplus_cls = -1, deficit_cls = -1;
        double surplus = tolerance, deficit = tolerance;
        for (const auto& [cls, t] : targets) {
            double d = assigned[cls] - t;
            if (d > surplus) surplus = d, surplus_cls = cls;
            if (-d > deficit) deficit = -d, deficit_cls = cls;
        }
        if (surplus_cls < 0 || deficit_cls < 0) break;
        double want = std::min(surplus, deficit);
        size_t donor = SIZE_MAX;
        for (size_t f : members)
            if (fields[f].cls == surplus_cls && fields[f].h > 1 &&
                (donor == SIZE_MAX || fields[f].area() > fields[donor].area()))
                donor = f;
        if (donor == SIZE_MAX) break;
        Field& d = fields[donor];
        int rows = std::clamp(int(std::lround(want / d.w)), 1, d.h - 1);
        Field piece{d.x, d.y + d.h - rows, d.w, rows, deficit_cls};
        d.h -= rows;
        assigned[surplus_cls] -= double(piece.area());
        assigned[deficit_cls] += double(piece.area());
        fields.push_back(piece);
        members.push_back(fields.size() - 1);
    }
}

}  // namespace detail

/// Field layout for one patch in one year. Background fields depend only on
/// (seed, patch); crop classes depend on (seed, patch, year).
inline std::vector<Field> layout_fields(const SceneConfig& cfg, int patch, int year, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 geo(derive_seed(seed, "geometry", uint64_t(patch)));
    std::vector<Field> fields;
    int y = 0;
    for (int h : detail::partition_extent(geo, cfg.patch_size, cfg.field_min, cfg.field_max)) {
        int x = 0;
        for (int w : detail::partition_extent(geo, cfg.patch_size, cfg.field_min, cfg.field_max)) {
            fields.push_back({x, y, w, h, 0});
            x += w;
        }
        y += h;
    }

    const double total = double(cfg.patch_size) * cfg.patch_size;
    const double tolerance = 0.002 * total;
    int bg_index = -1;
    double bg_share = 0.0;
    for (size_t i = 0; i < cfg.mixture.size(); ++i)
        if (cfg.mixture[i].first == kBackgroundName) bg_index = int(i), bg_share = cfg.mixture[i].second;
    constexpr int kCropMarker = -1;
    std::vector<size_t> all(fields.size());
    std::iota(all.begin(), all.end(), size_t{0});
    detail::assign_fields(fields, all, {{bg_index, bg_share * total}, {kCropMarker, (1.0 - bg_share) * total}},
                          tolerance, geo);

    std::vector<size_t> crop_fields;
    for (size_t i = 0; i < fields.size(); ++i)
        if (fields[i].cls == kCropMarker) crop_fields.push_back(i);
    double crop_area = 0.0;
    for (size_t i : crop_fields) crop_area += double(fields[i].area());
    std::vector<std::pair<int, double>> crop_targets;
    double crop_share = 1.0 - bg_share;
    for (size_t i = 0; i < cfg.mixture.size(); ++i)
        if (int(i) != bg_index)
            crop_targets.emplace_back(int(i), crop_share > 0 ? cfg.mixture[i].second / crop_share * crop_area : 0.0);
    std::mt19937_64 rot(derive_seed(seed, "crops", uint64_t(year) * 100003ULL + uint64_t(patch)));
    if (!crop_fields.empty()) detail::assign_fields(fields, crop_fields, crop_targets, tolerance, rot);
    return fields;
}

/// One patch of one year: a stack per time step, truth and never-crop mask.
struct PatchScene {
    std::vector<BandStack> stacks;
    LabelRaster truth;
    std::vector<uint8_t> never_crop;
};

inline const ClassTrajectory& find_trajectory(std::span<const ClassTrajectory> trajectories, std::string_view name) {
    for (const auto& t : trajectories)
        if (t.name == name) return t;
    throw ValidationError("no trajectory for class '" + std::string(name) + "'");
}

inline PatchScene generate_patch(const SceneConfig& cfg, std::span<const ClassTrajectory> trajectories, int year,
                                 int patch, uint64_t seed) {
    cfg.validate();
    const size_t n_steps = cfg.time_steps.size();
    const size_t n_bands = cfg.bands.size();
    std::vector<const ClassTrajectory*> per_class;
    for (const auto& [name, p] : cfg.mixture) {
        per_class.push_back(&find_trajectory(trajectories, name));
        per_class.back()->validate(n_steps, n_bands);
    }
    auto crops = cfg.crop_classes();
    // Mixture index -> label code.
    std::vector<uint16_t> code(cfg.mixture.size(), kBackground);
    for (size_t i = 0, c = 0; i < cfg.mixture.size(); ++i)
        if (cfg.mixture[i].first != kBackgroundName) code[i] = static_cast<uint16_t>(++c);

    const int n = cfg.patch_size;
    const size_t pixels = size_t(n) * size_t(n);
    std::vector<int> cls_of(pixels, 0);
    for (const Field& f : layout_fields(cfg, patch, year, seed))
        for (int yy = f.y; yy < f.y + f.h; ++yy)
            for (int xx = f.x; xx < f.x + f.w; ++xx) cls_of[size_t(yy) * n + xx] = f.cls;

    PatchScene scene;
    scene.truth = LabelRaster(n, n, crops, kBackground);
    scene.never_crop.assign(pixels, 0);
    for (size_t p = 0; p < pixels; ++p) {
        scene.truth.set(p, code[cls_of[p]]);
        scene.never_crop[p] = code[cls_of[p]] == kBackground;
    }

    const int blocks = (n + cfg.cloud_block - 1) / cfg.cloud_block;
    for (size_t t = 0; t < n_steps; ++t) {
        BandStack stack(n, n, cfg.bands, cfg.time_steps[t].doy_mid(), year);
        std::vector<std::vector<double>> mu(per_class.size()), sd(per_class.size());
        for (size_t c = 0; c < per_class.size(); ++c) std::tie(mu[c], sd[c]) = per_class[c]->at(year, t, cfg.time_steps);

        uint64_t step_seed = derive_seed(seed, "pixels", (uint64_t(year) * 1000 + uint64_t(patch)) * 1000 + t);
        std::mt19937_64 noise(step_seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (size_t b = 0; b < n_bands; ++b) {
            auto plane = stack.band(b);
            for (size_t p = 0; p < pixels; ++p) {
                int c = cls_of[p];
                plane[p] = static_cast<float>(mu[c][b] + sd[c][b] * gauss(noise));
            }
        }

        std::mt19937_64 sky(derive_seed(step_seed, "clouds"));
        std::bernoulli_distribution cloudy(cfg.cloud_prob);
        for (int by = 0; by < blocks; ++by)
            for (int bx = 0; bx < blocks; ++bx) {
                if (!cloudy(sky)) continue;
                for (int yy = by * cfg.cloud_block; yy < std::min(n, (by + 1) * cfg.cloud_block); ++yy)
                    for (int xx = bx * cfg.cloud_block; xx < std::min(n, (bx + 1) * cfg.cloud_block); ++xx) {
                        size_t p = size_t(yy) * n + xx;
                        stack.set_valid(p, false);
                        for (size_t b = 0; b < n_bands; ++b) stack.value(b, p) = 0.45f;
                    }
            }
        stack.apply_reflectance_bounds();
        scene.stacks.push_back(std::move(stack));
    }
    return scene;
}

/// All patches of a scene for one year.
inline std::vector<PatchScene> generate_scene(const SceneConfig& cfg, std::span<const ClassTrajectory> trajectories,
                                              int year, uint64_t seed) {
    std::vector<PatchScene> out;
    for (int p = 0; p < cfg.patches; ++p) out.push_back(generate_patch(cfg, trajectories, year, p, seed));
    return out;
}

/// A ready-to-run synthetic experiment: scene settings, trajectories (one per
/// mixture entry) and the recognizer class pairs it was designed for.
struct SyntheticPreset {
    std::string name;
    SceneConfig scene;
    std::vector<ClassTrajectory> trajectories;
    std::vector<std::pair<std::string, std::string>> class_pairs;
    std::pair<std::string, std::string> feature_pair{"RDEG1", "SWIR1"};
    std::vector<int> training_years;
    int target_year = 0;
};

namespace detail {

using Spectrum = std::array<double, 6>;  // Blue, Green, Red, RDEG1, NIR, SWIR1

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline ClassTrajectory sample_trajectory(std::string name, std::span<const TimeStep> steps,
                                         const std::function<Spectrum(double)>& mean_at, const Spectrum& stddev) {
    ClassTrajectory t;
    t.name = std::move(name);
    for (const auto& s : steps) {
        Spectrum m = mean_at(s.doy_mid());
        t.mean.emplace_back(m.begin(), m.end());
        t.stddev.emplace_back(stddev.begin(), stddev.end());
    }
    return t;
}

inline Spectrum blend(const Spectrum& a, const Spectrum& b, double w) {
    Spectrum out;
    for (size_t i = 0; i < out.size(); ++i) out[i] = (1 - w) * a[i] + w * b[i];
    return out;
}

inline constexpr Spectrum kSoil = {0.08, 0.11, 0.14, 0.17, 0.24, 0.32};
inline constexpr Spectrum kPaddySoil = {0.075, 0.105, 0.13, 0.17, 0.23, 0.30};
inline constexpr Spectrum kFloodWater = {0.06, 0.07, 0.05, 0.05, 0.06, 0.05};
inline constexpr Spectrum kCornCanopy = {0.03, 0.07, 0.04, 0.10, 0.40, 0.14};
inline constexpr Spectrum kSoyCanopy = {0.035, 0.08, 0.045, 0.10, 0.46, 0.22};
inline constexpr Spectrum kRiceCanopy = {0.03, 0.065, 0.04, 0.10, 0.34, 0.08};
inline constexpr Spectrum kGrassland = {0.07, 0.09, 0.10, 0.14, 0.28, 0.26};
inline constexpr Spectrum kCropStd = {0.008, 0.008, 0.010, 0.012, 0.020, 0.015};
inline constexpr Spectrum kBackgroundStd = {0.012, 0.012, 0.015, 0.018, 0.030, 0.022};

// Canopy cover follows a logistic green-up centred on `green_up` DOY.
inline std::function<Spectrum(double)> upland_crop(const Spectrum& canopy, double green_up) {
    return [canopy, green_up](double doy) { return blend(kSoil, canopy, logistic((doy - green_up) / 8.0)); };
}

inline std::function<Spectrum(double)> paddy_rice() {
    return [](double doy) {
        double canopy = logistic((doy - 172.0) / 8.0);
        double flood = logistic((doy - 162.0) / 4.0) * (1.0 - canopy);
        Spectrum out;
        for (size_t i = 0; i < out.size(); ++i)
            out[i] = kPaddySoil[i] * (1 - flood - canopy) + kFloodWater[i] * flood + kRiceCanopy[i] * canopy;
        return out;
    };
}

inline void apply_year_effects(std::vector<ClassTrajectory>& trajectories, const std::map<int, YearEffect>& effects) {
    for (auto& t : trajectories) t.year_effects = effects;
}

}  // namespace detail

/// Corn/soybean scene in which corn sits below-left of soybean in RDEG1/SWIR1
/// after green-up, then directly below it once both canopies close. The
/// target year (2019) develops 12 days late and is offset in SWIR1/NIR.
inline SyntheticPreset default_corn_soy_config() {
    SyntheticPreset preset;
    preset.name = "corn_soy";
    preset.scene.mixture = {{std::string(kBackgroundName), 0.3}, {"corn", 0.38}, {"soybean", 0.32}};
    const auto& steps = preset.scene.time_steps;
    preset.trajectories.push_back(
        detail::sample_trajectory(std::string(kBackgroundName), steps, [](double) { return detail::kGrassland; },
                                  detail::kBackgroundStd));
    preset.trajectories.push_back(
        detail::sample_trajectory("corn", steps, detail::upland_crop(detail::kCornCanopy, 165.0), detail::kCropStd));
    preset.trajectories.push_back(
        detail::sample_trajectory("soybean", steps, detail::upland_crop(detail::kSoyCanopy, 180.0), detail::kCropStd));
    detail::apply_year_effects(preset.trajectories,
                               {{2017, {{0, 0, 0, 0, 0, 0}, 0.0}},
                                {2018, {{0, 0, 0, -0.005, 0.02, -0.015}, -5.0}},
                                {2019, {{0, 0, 0.01, 0.015, -0.04, 0.04}, 12.0}}});
    preset.class_pairs = {{"corn", "soybean"}};
    preset.training_years = {2017, 2018};
    preset.target_year = 2019;
    return preset;
}

/// Paddy rice/corn/soybean scene: rice stays below corn in SWIR1 at every
/// step (flooding, then a wet canopy); corn/soybean as in the corn/soy preset.
inline SyntheticPreset default_rice_corn_soy_config() {
    SyntheticPreset preset;
    preset.name = "rice_corn_soy";
    preset.scene.mixture = {
        {std::string(kBackgroundName), 0.25}, {"rice", 0.25}, {"corn", 0.28}, {"soybean", 0.22}};
    const auto& steps = preset.scene.time_steps;
    preset.trajectories.push_back(
        detail::sample_trajectory(std::string(kBackgroundName), steps, [](double) { return detail::kGrassland; },
                                  detail::kBackgroundStd));
    preset.trajectories.push_back(detail::sample_trajectory("rice", steps, detail::paddy_rice(), detail::kCropStd));
    preset.trajectories.push_back(
        detail::sample_trajectory("corn", steps, detail::upland_crop(detail::kCornCanopy, 165.0), detail::kCropStd));
    preset.trajectories.push_back(
        detail::sample_trajectory("soybean", steps, detail::upland_crop(detail::kSoyCanopy, 180.0), detail::kCropStd));
    detail::apply_year_effects(preset.trajectories, {{2017, {{0, 0, 0, 0, 0, 0}, 0.0}},
                                                     {2018, {{0, 0, 0, -0.005, 0.02, -0.015}, -5.0}},
                                                     {2019, {{0, 0, 0, 0.005, -0.01, 0.02}, 5.0}}});
    preset.class_pairs = {{"rice", "corn"}, {"corn", "soybean"}};
    preset.training_years = {2017, 2018};
    preset.target_year = 2019;
    return preset;
}

inline SyntheticPreset preset_by_name(std::string_view name) {
    if (name == "corn_soy") return default_corn_soy_config();
    if (name == "rice_corn_soy") return default_rice_corn_soy_config();
    throw ValidationError("unknown preset '" + std::string(name) + "'");
}

}  // namespace topolabel
