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

// Bagged CART forest with gini splits. Missing values (NaN) always take the
// left branch, both when growing and when predicting.
//
// Checkpoint: `<path>.hdr` key-value header plus a little-endian body holding,
// for every tree in order: uint32 node count n, then int32 feature[n],
// float32 threshold[n], int32 left[n], int32 right[n], uint32 votes[n * K]
// where K is the number of classes. Leaves have feature = -1.

#pragma once

#include <numeric>
#include <random>

#include "topolabel/raster_io.hpp"

namespace topolabel {

struct ForestParams {
    int trees = 100;
    int min_leaf = 2;
    int max_features = 0;  // 0 = floor(sqrt(feature count))
    unsigned threads = 0;

    void validate() const {
        if (trees < 1) throw ValidationError("forest needs at least one tree");
        if (min_leaf < 1) throw ValidationError("min leaf must be >= 1");
        if (max_features < 0) throw ValidationError("max features must be >= 0");
    }
};

struct Tree {
    std::vector<int32_t> feature;
    std::vector<float> threshold;
    std::vector<int32_t> left;
    std::vector<int32_t> right;
    std::vector<uint32_t> votes;  // node-major, K per node

    size_t node_count() const { return feature.size(); }
    bool operator==(const Tree&) const = default;
};

/// Goes left when the value is missing or <= threshold.
inline bool goes_left(float value, float threshold) { return std::isnan(value) || value <= threshold; }

struct ForestModel {
    std::vector<uint16_t> classes;  // label codes, index = internal class
    size_t feature_count = 0;
    ForestParams params;
    uint64_t seed = 0;
    std::vector<Tree> trees;

    bool operator==(const ForestModel& o) const {
        return classes == o.classes && feature_count == o.feature_count && seed == o.seed && trees == o.trees;
    }

    size_t leaf_of(const Tree& t, std::span<const float> x) const {
        int32_t node = 0;
        while (t.feature[size_t(node)] >= 0) {
            size_t n = size_t(node);
            node = goes_left(x[size_t(t.feature[n])], t.threshold[n]) ? t.left[n] : t.right[n];
        }
        return size_t(node);
    }

    /// Mean of per-tree leaf class frequencies.
    std::vector<double> probabilities(std::span<const float> x) const {
        if (x.size() != feature_count) throw ValidationError("feature vector length does not match forest");
        const size_t k = classes.size();
        std::vector<double> p(k, 0.0);
        for (const Tree& t : trees) {
            size_t leaf = leaf_of(t, x);
            double total = 0.0;
            for (size_t c = 0; c < k; ++c) total += t.votes[leaf * k + c];
            for (size_t c = 0; c < k; ++c) p[c] += t.votes[leaf * k + c] / total;
        }
        for (double& v : p) v /= double(trees.size());
        return p;
    }

    /// Most probable class code (ties to the lower class index).
    uint16_t predict(std::span<const float> x) const {
        auto p = probabilities(x);
        return classes[size_t(std::max_element(p.begin(), p.end()) - p.begin())];
    }
};

namespace detail {

struct SplitCandidate {
    int32_t feature = -1;
    float threshold = 0.0f;
    double impurity = std::numeric_limits<double>::infinity();  // weighted child gini
};

inline double gini_sum(const std::vector<double>& counts, double n) {
    if (n <= 0.0) return 0.0;
    double s = 0.0;
    for (double c : counts) s += c * c;
    return n - s / n;  // n * gini
}

class TreeBuilder {
   public:
    TreeBuilder(std::span<const float> x, size_t features, std::span<const uint16_t> y, size_t k,
                const ForestParams& params, std::mt19937_64& rng)
        : x_(x), f_(features), y_(y), k_(k), params_(params), rng_(rng) {
        mtry_ = params.max_features > 0 ? size_t(params.max_features)
                                        : std::max<size_t>(1, size_t(std::floor(std::sqrt(double(features)))));
        mtry_ = std::min(mtry_, features);
    }

    Tree build(std::vector<uint32_t> rows) {
        Tree t;
        grow(t, rows, 0, rows.size());
        return t;
    }

   private:
    float value(uint32_t row, size_t feature) const { return x_[size_t(row) * f_ + feature]; }

    int32_t add_leaf(Tree& t, const std::vector<double>& counts) {
        t.feature.push_back(-1);
        t.threshold.push_back(0.0f);
        t.left.push_back(-1);
        t.right.push_back(-1);
        for (double c : counts) t.votes.push_back(uint32_t(c));
        return int32_t(t.feature.size() - 1);
    }

    int32_t grow(Tree& t, std::vector<uint32_t>& rows, size_t begin, size_t end) {
        const size_t n = end - begin;
        std::vector<double> counts(k_, 0.0);
        for (size_t i = begin; i < end; ++i) counts[y_[rows[i]]] += 1.0;
        size_t nonzero = 0;
        for (double c : counts) nonzero += c > 0.0;
        if (nonzero <= 1 || n < 2 * size_t(params_.min_leaf)) return add_leaf(t, counts);

        SplitCandidate best = find_split(rows, begin, end, counts);
        if (best.feature < 0) return add_leaf(t, counts);

        auto mid = std::stable_partition(rows.begin() + std::ptrdiff_t(begin), rows.begin() + std::ptrdiff_t(end),
                                         [&](uint32_t r) { return goes_left(value(r, size_t(best.feature)), best.threshold); });
        const size_t split = size_t(mid - rows.begin());

        int32_t self = int32_t(t.feature.size());
        t.feature.push_back(best.feature);
        t.threshold.push_back(best.threshold);
        t.left.push_back(-1);
        t.right.push_back(-1);
        t.votes.insert(t.votes.end(), k_, 0u);
        int32_t l = grow(t, rows, begin, split);
        int32_t r = grow(t, rows, split, end);
        t.left[size_t(self)] = l;
        t.right[size_t(self)] = r;
        return self;
    }

    // Evaluates at least mtry random features and keeps drawing until one
    // yields a split that lowers impurity.
    SplitCandidate find_split(const std::vector<uint32_t>& rows, size_t begin, size_t end,
                              const std::vector<double>& counts) {
        const double n = double(end - begin);
        const double parent = gini_sum(counts, n);
        std::vector<size_t> order(f_);
        std::iota(order.begin(), order.end(), size_t(0));
        SplitCandidate best;
        std::vector<std::pair<float, uint16_t>> present;
        std::vector<double> missing(k_), left(k_), right(k_);
        for (size_t drawn = 0; drawn < f_; ++drawn) {
            if (drawn >= mtry_ && best.feature >= 0) break;
            size_t j = drawn + std::uniform_int_distribution<size_t>(0, f_ - 1 - drawn)(rng_);
            std::swap(order[drawn], order[j]);
            const size_t feat = order[drawn];

            present.clear();
            std::fill(missing.begin(), missing.end(), 0.0);
            for (size_t i = begin; i < end; ++i) {
                float v = value(rows[i], feat);
                if (std::isnan(v)) missing[y_[rows[i]]] += 1.0;
                else present.emplace_back(v, y_[rows[i]]);
            }
            if (present.size() < 2) continue;
            std::sort(present.begin(), present.end());
            left = missing;
            double n_left = 0.0;
            for (double c : missing) n_left += c;
            for (size_t c = 0; c < k_; ++c) right[c] = counts[c] - missing[c];
            double n_right = n - n_left;
            for (size_t i = 0; i + 1 < present.size(); ++i) {
                left[present[i].second] += 1.0, n_left += 1.0;
                right[present[i].second] -= 1.0, n_right -= 1.0;
                if (present[i].first == present[i + 1].first) continue;
                if (n_left < params_.min_leaf || n_right < params_.min_leaf) continue;
                double imp = gini_sum(left, n_left) + gini_sum(right, n_right);
                if (imp < best.impurity - 1e-12 && imp < parent - 1e-12) {
                    float a = present[i].first, b = present[i + 1].first;
                    float mid = float(0.5 * (double(a) + double(b)));
                    best = {int32_t(feat), (mid >= a && mid < b) ? mid : a, imp};
                }
            }
        }
        return best;
    }

    std::span<const float> x_;
    size_t f_;
    std::span<const uint16_t> y_;
    size_t k_;
    const ForestParams& params_;
    std::mt19937_64& rng_;
    size_t mtry_ = 1;
};

}  // namespace detail

/// Trains a forest on row-major features `x` (rows x feature_count) and label
/// codes `labels`. Trees are grown in parallel with per-tree seeds, so the
/// result does not depend on scheduling.
inline ForestModel train_forest(std::span<const float> x, size_t feature_count, std::span<const uint16_t> labels,
                                const ForestParams& params, uint64_t seed) {
    params.validate();
    if (feature_count == 0) throw ValidationError("forest needs at least one feature");
    if (x.size() != labels.size() * feature_count) throw ValidationError("feature matrix does not match label count");
    ForestModel model;
    model.feature_count = feature_count;
    model.params = params;
    model.seed = seed;
    model.classes.assign(labels.begin(), labels.end());
    std::sort(model.classes.begin(), model.classes.end());
    model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
    if (model.classes.size() < 2) throw ValidationError("degenerate training pool: fewer than two classes");

    std::vector<uint16_t> y(labels.size());
    for (size_t i = 0; i < labels.size(); ++i)
        y[i] = uint16_t(std::lower_bound(model.classes.begin(), model.classes.end(), labels[i]) - model.classes.begin());

    model.trees.resize(size_t(params.trees));
    parallel_for(
        size_t(params.trees),
        [&](size_t t) {
            std::mt19937_64 rng(derive_seed(seed, "tree", t));
            std::uniform_int_distribution<uint32_t> pick(0, uint32_t(labels.size() - 1));
            std::vector<uint32_t> rows(labels.size());
            for (auto& r : rows) r = pick(rng);
            detail::TreeBuilder builder(x, feature_count, y, model.classes.size(), params, rng);
            model.trees[t] = builder.build(std::move(rows));
        },
        params.threads);
    return model;
}

inline void write_forest(const ForestModel& model, const std::filesystem::path& path, const std::string& provenance = {}) {
    KeyValueHeader h;
    h.set("format", "topolabel-forest");
    h.set("version", kContainerVersion);
    std::vector<std::string> codes;
    for (auto c : model.classes) codes.push_back(std::to_string(c));
    h.set("classes", join(codes, ","));
    h.set("features", static_cast<long long>(model.feature_count));
    h.set("trees", static_cast<long long>(model.trees.size()));
    h.set("min_leaf", model.params.min_leaf);
    h.set("max_features", model.params.max_features);
    h.set("seed", std::to_string(model.seed));
    h.set("byte_order", "little");
    if (!provenance.empty()) h.set("provenance", provenance);
    write_text_file(header_path(path), h.serialize());

    std::string body;
    auto put = [&](const void* p, size_t bytes) { body.append(static_cast<const char*>(p), bytes); };
    for (const Tree& t : model.trees) {
        uint32_t n = uint32_t(t.node_count());
        put(&n, 4);
        put(t.feature.data(), n * 4);
        put(t.threshold.data(), n * 4);
        put(t.left.data(), n * 4);
        put(t.right.data(), n * 4);
        put(t.votes.data(), t.votes.size() * 4);
    }
    write_text_file(path, body);
}

inline ForestModel read_forest(const std::filesystem::path& path) {
    KeyValueHeader h = read_header(path);
    detail::check_format(h, "topolabel-forest", path);
    ForestModel model;
    for (const auto& c : split(h.get("classes"), ',')) model.classes.push_back(uint16_t(std::stoul(c)));
    model.feature_count = size_t(h.get_int("features"));
    model.params.min_leaf = int(h.get_int("min_leaf"));
    model.params.max_features = int(h.get_int("max_features"));
    model.seed = std::stoull(h.get("seed"));
    const size_t trees = size_t(h.get_int("trees"));
    model.params.trees = int(trees);
    const size_t k = model.classes.size();
    std::vector<char> body = detail::read_body(path);
    size_t pos = 0;
    auto take = [&](void* dst, size_t bytes) {
        if (pos + bytes > body.size()) throw ValidationError("'" + path.string() + "': truncated forest body");
        std::memcpy(dst, body.data() + pos, bytes);
        pos += bytes;
    };
    for (size_t i = 0; i < trees; ++i) {
        uint32_t n = 0;
        take(&n, 4);
        Tree t;
        t.feature.resize(n), t.threshold.resize(n), t.left.resize(n), t.right.resize(n), t.votes.resize(size_t(n) * k);
        take(t.feature.data(), n * 4);
        take(t.threshold.data(), n * 4);
        take(t.left.data(), n * 4);
        take(t.right.data(), n * 4);
        take(t.votes.data(), t.votes.size() * 4);
        for (uint32_t j = 0; j < n; ++j) {
            bool leaf = t.feature[j] < 0;
            if (!leaf && (size_t(t.feature[j]) >= model.feature_count || t.left[j] <= int32_t(j) ||
                          t.right[j] <= int32_t(j) || t.left[j] >= int32_t(n) || t.right[j] >= int32_t(n)))
                throw ValidationError("'" + path.string() + "': malformed tree node");
        }
        model.trees.push_back(std::move(t));
    }
    if (pos != body.size()) throw ValidationError("'" + path.string() + "': trailing bytes in forest body");
    return model;
}

}  // namespace topolabel
