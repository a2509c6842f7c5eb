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

// Scene-level classification: patches are placed on a mosaic, the mosaic is
// split into a grid of regions, each region draws its own training sample and
// gets its own forest.

#pragma once

#include <optional>

#include "topolabel/forest.hpp"

namespace topolabel {

/// Patches of equal size laid out row by row, `columns` per row.
struct SceneLayout {
    int patch_size = 512;
    int patches = 1;
    int columns = 1;

    static SceneLayout square(int patch_size, int patches) {
        if (patch_size < 1 || patches < 1) throw ValidationError("scene layout needs patches");
        int cols = int(std::ceil(std::sqrt(double(patches))));
        return {patch_size, patches, cols};
    }

    int rows() const { return (patches + columns - 1) / columns; }
    int width() const { return columns * patch_size; }
    int height() const { return rows() * patch_size; }
    std::pair<int, int> origin(int patch) const { return {(patch % columns) * patch_size, (patch / columns) * patch_size}; }
};

/// rows x cols partition of a width x height extent. Pixel x lies in column
/// floor(x * cols / width); column edges sit at ceil(i * width / cols), so the
/// cells tile the extent exactly.
struct RegionGrid {
    int width = 1;
    int height = 1;
    int rows = 3;
    int cols = 3;

    RegionGrid() = default;
    RegionGrid(int w, int h, int r = 3, int c = 3) : width(w), height(h), rows(r), cols(c) {
        if (w < 1 || h < 1 || r < 1 || c < 1 || r > h || c > w) throw ValidationError("invalid region grid");
    }

    int cells() const { return rows * cols; }
    int cell_of(int x, int y) const {
        int c = int((int64_t(x) * cols) / width);
        int r = int((int64_t(y) * rows) / height);
        return r * cols + c;
    }
    std::array<int, 4> bounds(int cell) const {  // x0, y0, x1, y1 (exclusive)
        int r = cell / cols, c = cell % cols;
        auto edge = [](int i, int extent, int n) { return int((int64_t(i) * extent + n - 1) / n); };
        return {edge(c, width, cols), edge(r, height, rows), edge(c + 1, width, cols), edge(r + 1, height, rows)};
    }
    std::pair<double, double> center(int cell) const {
        auto b = bounds(cell);
        return {0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])};
    }
};

/// A pixel of the scene: patch index plus row-major pixel index in the patch.
struct PixelRef {
    int32_t patch = 0;
    uint32_t pixel = 0;
    auto operator<=>(const PixelRef&) const = default;
};

struct ClassSample {
    uint16_t cls = 0;
    std::vector<PixelRef> pixels;
    int source_cell = 0;  // differs from the owning cell when borrowed
};

struct CellSamples {
    std::vector<ClassSample> classes;  // in the order of the requested class codes, background first
    size_t size() const {
        size_t n = 0;
        for (const auto& c : classes) n += c.pixels.size();
        return n;
    }
};

/// Per-cell training pixels. Crop classes come from usable labels, background
/// from never-crop pixels; each class draws up to `n_per_class` distinct
/// pixels uniformly from the cell, or from the nearest cell that has any.
inline std::vector<CellSamples> sample_training(const std::vector<LabelRaster>& labels,
                                                const std::vector<std::vector<uint8_t>>& never_crop,
                                                const SceneLayout& layout, const RegionGrid& grid,
                                                const std::vector<uint16_t>& crop_classes, size_t n_per_class,
                                                uint64_t seed) {
    if (labels.size() != size_t(layout.patches) || never_crop.size() != size_t(layout.patches))
        throw ValidationError("sampling inputs do not match the scene layout");
    const int cells = grid.cells();
    std::vector<uint16_t> codes = {kBackground};
    codes.insert(codes.end(), crop_classes.begin(), crop_classes.end());
    // pools[class][cell], pixels in patch-major, row-major order.
    std::vector<std::vector<std::vector<PixelRef>>> pools(codes.size(), std::vector<std::vector<PixelRef>>(size_t(cells)));
    for (int p = 0; p < layout.patches; ++p) {
        const auto& lab = labels[size_t(p)];
        if (lab.width() != layout.patch_size || lab.height() != layout.patch_size ||
            never_crop[size_t(p)].size() != lab.pixel_count())
            throw ValidationError("patch " + std::to_string(p) + " does not match the scene layout");
        auto [ox, oy] = layout.origin(p);
        for (uint32_t px = 0; px < lab.pixel_count(); ++px) {
            int cell = grid.cell_of(ox + int(px % uint32_t(lab.width())), oy + int(px / uint32_t(lab.width())));
            if (never_crop[size_t(p)][px]) {
                pools[0][size_t(cell)].push_back({p, px});
                continue;
            }
            uint16_t c = lab.at(px);
            if (!is_class_code(c)) continue;
            auto it = std::find(codes.begin() + 1, codes.end(), c);
            if (it != codes.end()) pools[size_t(it - codes.begin())][size_t(cell)].push_back({p, px});
        }
    }
    for (size_t k = 0; k < codes.size(); ++k) {
        bool any = false;
        for (const auto& pool : pools[k]) any |= !pool.empty();
        if (!any) {
            std::string name = k == 0 ? std::string(kBackgroundName)
                               : codes[k] <= labels.front().class_count() ? labels.front().class_names()[codes[k] - 1]
                                                                         : std::to_string(codes[k]);
            throw ValidationError("no usable labels for class '" + name + "' anywhere in the scene");
        }
    }

    std::vector<CellSamples> out(static_cast<size_t>(cells));
    for (int cell = 0; cell < cells; ++cell) {
        for (size_t k = 0; k < codes.size(); ++k) {
            int source = cell;
            if (pools[k][size_t(cell)].empty()) {
                auto [cx, cy] = grid.center(cell);
                double best = std::numeric_limits<double>::infinity();
                for (int other = 0; other < cells; ++other) {
                    if (pools[k][size_t(other)].empty()) continue;
                    auto [ox, oy] = grid.center(other);
                    double d = std::hypot(ox - cx, oy - cy);
                    if (d < best) best = d, source = other;
                }
            }
            std::vector<PixelRef> pool = pools[k][size_t(source)];
            if (pool.size() > n_per_class) {
                std::mt19937_64 rng(derive_seed(seed, "sample", uint64_t(cell) * 65536 + codes[k]));
                for (size_t i = 0; i < n_per_class; ++i) {
                    size_t j = i + std::uniform_int_distribution<size_t>(0, pool.size() - 1 - i)(rng);
                    std::swap(pool[i], pool[j]);
                }
                pool.resize(n_per_class);
                std::sort(pool.begin(), pool.end());
            }
            out[size_t(cell)].classes.push_back({codes[k], std::move(pool), source});
        }
    }
    return out;
}

/// Cells that contain at least one scene pixel.
inline std::vector<uint8_t> occupied_cells(const SceneLayout& layout, const RegionGrid& grid) {
    std::vector<uint8_t> out(size_t(grid.cells()), 0);
    for (int p = 0; p < layout.patches; ++p) {
        auto [ox, oy] = layout.origin(p);
        for (int cell = 0; cell < grid.cells(); ++cell) {
            auto b = grid.bounds(cell);
            if (b[0] < ox + layout.patch_size && ox < b[2] && b[1] < oy + layout.patch_size && oy < b[3])
                out[size_t(cell)] = 1;
        }
    }
    return out;
}

/// Per-pixel features for a classifier: row-major, `width` values per row.
struct FeatureTable {
    size_t width = 0;
    std::vector<PixelRef> pixels;  // sorted
    std::vector<float> values;

    std::span<const float> row(size_t i) const { return {values.data() + i * width, width}; }
    std::optional<size_t> find(PixelRef p) const {
        auto it = std::lower_bound(pixels.begin(), pixels.end(), p);
        if (it == pixels.end() || *it != p) return std::nullopt;
        return size_t(it - pixels.begin());
    }
};

/// Trains one forest per occupied cell on the first `width` features of each
/// sampled pixel. Unoccupied cells get no model.
inline std::vector<std::optional<ForestModel>> train_cells(const std::vector<CellSamples>& samples,
                                                           const FeatureTable& features, size_t width,
                                                           const std::vector<uint8_t>& occupied,
                                                           const ForestParams& params, uint64_t seed) {
    if (width == 0 || width > features.width) throw ValidationError("feature width out of range");
    std::vector<std::optional<ForestModel>> out(samples.size());
    for (size_t cell = 0; cell < samples.size(); ++cell) {
        if (!occupied.at(cell)) continue;
        std::vector<float> x;
        std::vector<uint16_t> y;
        for (const auto& cs : samples[cell].classes)
            for (const auto& ref : cs.pixels) {
                auto i = features.find(ref);
                if (!i) throw ValidationError("sampled pixel has no features");
                auto row = features.row(*i).first(width);
                x.insert(x.end(), row.begin(), row.end());
                y.push_back(cs.cls);
            }
        out[cell] = train_forest(x, width, y, params, derive_seed(seed, "cell", cell));
    }
    return out;
}

/// Class for one pixel; unknown when every feature is missing or the cell has
/// no model.
inline uint16_t classify_pixel(const std::optional<ForestModel>& model, std::span<const float> x) {
    if (!model) return kUnknown;
    if (x.size() < model->feature_count) throw ValidationError("feature vector shorter than the forest expects");
    auto used = x.first(model->feature_count);
    bool any = false;
    for (float v : used) any |= !std::isnan(v);
    return any ? model->predict(used) : kUnknown;
}

}  // namespace topolabel
