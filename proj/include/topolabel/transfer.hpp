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

// Label transfer: heat-map training examples from labeled years, label
// generation in the target year, merging across recognizers, accumulation
// over time steps and agreement against reference labels.

#pragma once

#include <optional>

#include "topolabel/recognizer.hpp"

namespace topolabel {

/// Heat maps of one patch at one time step, split by the never-crop mask.
struct PatchHeatMaps {
    Projection projection;
    FourChannelInput input;
};

inline PatchHeatMaps patch_heatmaps(const BandStack& stack, const HeatMapConfig& cfg, std::span<const uint8_t> never_crop,
                                    const LabelRaster* labels = nullptr) {
    if (never_crop.size() != stack.pixel_count()) throw ValidationError("never-crop mask does not match patch geometry");
    PatchHeatMaps out{project(stack, cfg, labels, never_crop), {}};
    HeatMap crop = masked_heatmap(out.projection.index, cfg, never_crop, false);
    HeatMap never = masked_heatmap(out.projection.index, cfg, never_crop, true);
    out.input = build_channels(crop, never);
    return out;
}

/// Training target in pair-local codes from labeled per-class grids. Type-II
/// records get a blank target.
inline TargetMask pair_target(const Projection& projection, uint16_t class_a, uint16_t class_b, Category category,
                              double fraction = 0.5) {
    if (category != Category::type_i) return blank_target(projection.index.bins);
    std::map<uint16_t, HeatMap> local;
    auto take = [&](uint16_t global, uint16_t code) {
        auto it = projection.per_class.find(global);
        local.emplace(code, it != projection.per_class.end() ? it->second : HeatMap(projection.heatmap.config));
    };
    take(class_a, kPairA);
    take(class_b, kPairB);
    return build_target(local, fraction);
}

/// Recognizer output for one patch as a label raster over the scene class
/// table. Only crop-candidate pixels (outside never-crop) receive labels.
inline LabelRaster recognize_patch(const RecognizerModel& model, const BandStack& stack,
                                   std::span<const uint8_t> never_crop, const std::vector<std::string>& class_names,
                                   int min_bins, nn::Workspace<float>* ws = nullptr) {
    PatchHeatMaps hm = patch_heatmaps(stack, model.heatmap, never_crop);
    TargetMask local = infer(model, hm.input, min_bins, ws);
    LabelRaster probe(1, 1, class_names);
    const std::array<uint16_t, 3> to_global = {kNoTarget, probe.class_id(model.class_a), probe.class_id(model.class_b)};
    for (auto& c : local.cells) c = to_global[c];
    LabelRaster out = inverse_project(local, hm.projection.index, stack.width(), stack.height(), class_names);
    for (size_t p = 0; p < out.pixel_count(); ++p)
        if (never_crop[p]) out.set(p, kUnknown);
    return out;
}

/// Per-pixel merge of several recognizers' outputs for one time step:
/// unknown defers to the other side, equal classes agree, anything else is a
/// conflict. Commutative and associative.
inline uint16_t merge_cell(uint16_t a, uint16_t b) {
    if (a == kUnknown) return b;
    if (b == kUnknown) return a;
    return a == b ? a : kConflict;
}

inline LabelRaster merge_labels(const std::vector<LabelRaster>& parts) {
    if (parts.empty()) throw ValidationError("nothing to merge");
    LabelRaster out = parts.front();
    for (size_t i = 1; i < parts.size(); ++i) {
        if (!parts[i].same_geometry(out) || parts[i].class_names() != out.class_names())
            throw ValidationError("label rasters differ in geometry or class table");
        for (size_t p = 0; p < out.pixel_count(); ++p) out.set(p, merge_cell(out.at(p), parts[i].at(p)));
    }
    return out;
}

inline constexpr int16_t kNeverLabeled = -1;

/// Labels gathered over successive time steps. A pixel keeps its first class;
/// a later different class (or a conflict) makes it a conflict for good.
struct AccumulatedLabels {
    LabelRaster labels;
    std::vector<int16_t> first_step;
    std::vector<int> steps;                    // time-step index of every accumulated raster
    std::vector<std::vector<size_t>> counts;   // [i][class id] usable labels after steps[i]; [0] unused

    AccumulatedLabels() = default;
    AccumulatedLabels(int width, int height, std::vector<std::string> classes)
        : labels(width, height, std::move(classes)), first_step(size_t(width) * height, kNeverLabeled) {}

    void add(int step, const LabelRaster& step_labels) {
        if (!step_labels.same_geometry(labels)) throw ValidationError("accumulated label geometry mismatch");
        if (!steps.empty() && step <= steps.back()) throw ValidationError("time steps must be added in order");
        for (size_t p = 0; p < labels.pixel_count(); ++p) {
            uint16_t now = step_labels.at(p);
            if (now == kUnknown || now == kBackground) continue;
            uint16_t before = labels.at(p);
            if (before == kConflict) continue;
            if (before == kUnknown) {
                labels.set(p, now);
                first_step[p] = int16_t(step);
            } else if (before != now) {
                labels.set(p, kConflict);
            }
        }
        steps.push_back(step);
        std::vector<size_t> c(labels.class_count() + 1, 0);
        for (uint16_t v : labels.cells())
            if (is_class_code(v)) ++c[v];
        counts.push_back(std::move(c));
    }

    /// Usable labels of `cls` after the i-th accumulated step, counting only
    /// pixels that never became conflicts.
    size_t stable_count(size_t i, uint16_t cls) const {
        size_t n = 0;
        for (size_t p = 0; p < labels.pixel_count(); ++p)
            if (labels.at(p) == cls && first_step[p] != kNeverLabeled && first_step[p] <= steps.at(i)) ++n;
        return n;
    }
};

/// Share of pixels labeled `cls` whose reference label is also `cls`; none
/// when nothing carries the label.
inline std::optional<double> agreement(const LabelRaster& labels, const LabelRaster& truth, uint16_t cls) {
    if (!labels.same_geometry(truth)) throw ValidationError("agreement: geometry mismatch");
    size_t labeled = 0, hit = 0;
    for (size_t p = 0; p < labels.pixel_count(); ++p) {
        if (labels.at(p) != cls) continue;
        ++labeled;
        hit += truth.at(p) == cls;
    }
    if (labeled == 0) return std::nullopt;
    return double(hit) / double(labeled);
}

}  // namespace topolabel
