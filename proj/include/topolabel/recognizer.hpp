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

// Topology recognizer: trains the segmentation network on heat-map inputs and
// applies it to new heat maps. Targets use pair-local codes 0 = none,
// 1 = class A, 2 = class B.

#pragma once

#include <cstdio>
#include <set>

#include "topolabel/heatmap.hpp"
#include "topolabel/raster_io.hpp"
#include "topolabel/unet.hpp"

namespace topolabel {

inline constexpr uint16_t kPairA = 1;
inline constexpr uint16_t kPairB = 2;

struct TrainConfig {
    int epochs = 12;
    int batch_size = 8;
    double learning_rate = 2e-3;
    double validation_fraction = 0.125;
    double class_balance = 0.5;  // exponent on inverse class frequency; 0 disables
    int base_width = 16;
    uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("batch size must be >= 1");
        if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
        if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5))
            throw ValidationError("validation fraction must be in [0, 0.5]");
        if (!(class_balance >= 0.0 && class_balance <= 1.0)) throw ValidationError("class balance must be in [0, 1]");
    }
};

/// One heat map with its target. Type-II records carry a blank target.
struct TrainingExample {
    std::string id;
    int patch = 0;
    FourChannelInput input;
    TargetMask target;
};

struct RecognizerModel {
    std::string class_a;
    std::string class_b;
    HeatMapConfig heatmap;
    uint64_t seed = 0;
    nn::UNet<float> net;

    RecognizerModel(std::string a, std::string b, HeatMapConfig hm, uint64_t s, int base_width = 16)
        : class_a(std::move(a)), class_b(std::move(b)), heatmap(std::move(hm)), seed(s), net(base_width) {}

    int bins() const { return heatmap.bins; }
};

struct TrainReport {
    double initial_loss = 0.0;
    std::vector<double> epoch_loss;
    size_t train_records = 0;
    size_t validation_records = 0;
    std::vector<int> validation_patches;
    std::array<double, nn::kOutputClasses> class_weight{};
    // Held-out metrics (NaN without a validation split).
    double validation_accuracy = std::numeric_limits<double>::quiet_NaN();
    double validation_occupied_accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Per-bin argmax. The whole mask is blank unless each class of the pair holds
/// at least `min_bins` bins: a recognizable topology needs both clusters, just
/// as pre-triage needs both classes present.
inline TargetMask infer(const RecognizerModel& model, const FourChannelInput& input, int min_bins = 20,
                        nn::Workspace<float>* workspace = nullptr) {
    if (input.bins != model.bins() || input.data.size() != size_t(4) * input.bins * input.bins)
        throw ValidationError("recognizer input shape does not match model (" + std::to_string(input.bins) + " vs " +
                              std::to_string(model.bins()) + " bins)");
    nn::Workspace<float> local;
    nn::Workspace<float>& ws = workspace ? *workspace : local;
    const auto& logits = model.net.forward(input.data, input.bins, input.bins, ws);
    const size_t n = size_t(input.bins) * input.bins;
    TargetMask mask = blank_target(input.bins);
    std::array<size_t, nn::kOutputClasses> labeled{};
    for (size_t i = 0; i < n; ++i) {
        uint16_t best = 0;
        for (uint16_t k = 1; k < nn::kOutputClasses; ++k)
            if (logits[k * n + i] > logits[best * n + i]) best = k;
        mask.cells[i] = best;
        ++labeled[best];
    }
    const size_t need = size_t(std::max(0, min_bins));
    if (labeled[kPairA] < need || labeled[kPairB] < need || labeled[kPairA] + labeled[kPairB] == 0)
        mask = blank_target(input.bins);
    return mask;
}

/// Fraction of bins labeled identically to the target (`occupied_only`
/// restricts to bins with crop-candidate density).
inline double bin_accuracy(const TargetMask& pred, const TargetMask& target, const FourChannelInput* input = nullptr) {
    size_t hit = 0, total = 0;
    const size_t n = target.cells.size();
    for (size_t i = 0; i < n; ++i) {
        if (input && !(input->data[i] > 0.0f)) continue;
        ++total;
        hit += pred.cells[i] == target.cells[i];
    }
    return total ? double(hit) / double(total) : 1.0;
}

/// Intersection over union of the labeled bins (same class counts as a hit).
inline double labeled_iou(const TargetMask& pred, const TargetMask& target) {
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < target.cells.size(); ++i) {
        bool p = pred.cells[i] != kNoTarget, t = target.cells[i] != kNoTarget;
        if (p || t) ++uni;
        if (p && t && pred.cells[i] == target.cells[i]) ++inter;
    }
    return uni ? double(inter) / double(uni) : 1.0;
}

namespace detail {

/// Patch ids held out for validation: a seeded shuffle of the distinct ids.
inline std::set<int> validation_patches(const std::vector<TrainingExample>& examples, double fraction, uint64_t seed) {
    std::set<int> ids;
    for (const auto& e : examples) ids.insert(e.patch);
    std::vector<int> order(ids.begin(), ids.end());
    size_t take = size_t(std::llround(fraction * double(order.size())));
    if (fraction > 0.0 && take == 0 && order.size() > 1) take = 1;
    if (take >= order.size()) take = order.size() - 1;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return {order.begin(), order.begin() + std::ptrdiff_t(take)};
}

/// Inverse-frequency weights raised to `power` (1 = full balance, 0.5 = square
/// root, 0 = uniform). Frequencies are counted over occupied bins
/// (crop-candidate density > 0) because empty bins carry no pixels and would
/// otherwise swamp the none class; classes without bins get weight 0.
inline std::array<double, nn::kOutputClasses> class_weights(const std::vector<const TrainingExample*>& train,
                                                            double power) {
    std::array<double, nn::kOutputClasses> counts{};
    for (const auto* e : train) {
        const size_t n = e->target.cells.size();
        for (size_t i = 0; i < n; ++i)
            if (e->input.data[i] > 0.0f) counts[e->target.cells[i]] += 1.0;
    }
    std::array<double, nn::kOutputClasses> w{};
    double total = counts[0] + counts[1] + counts[2];
    int present = 0;
    for (double c : counts) present += c > 0.0;
    for (int k = 0; k < nn::kOutputClasses; ++k)
        w[k] = counts[k] > 0.0 ? std::pow(total / (present * counts[k]), power) : 0.0;
    if (w[0] == 0.0) w[0] = 1.0;
    return w;
}

inline std::vector<uint8_t> target_codes(const TargetMask& t) {
    std::vector<uint8_t> out(t.cells.size());
    for (size_t i = 0; i < out.size(); ++i) {
        if (t.cells[i] > kPairB) throw ValidationError("recognizer targets must use codes 0, 1, 2");
        out[i] = uint8_t(t.cells[i]);
    }
    return out;
}

}  // namespace detail

/// Trains one recognizer with Adam on the weighted per-bin cross-entropy.
/// Samples are processed in a fixed order so the result depends only on the
/// data and the seed.
inline RecognizerModel train(const std::vector<TrainingExample>& examples, const TrainConfig& cfg,
                             const std::string& class_a, const std::string& class_b, const HeatMapConfig& heatmap,
                             TrainReport* report = nullptr) {
    cfg.validate();
    heatmap.validate();
    bool any_type_i = false;
    for (const auto& e : examples) {
        if (e.input.bins != heatmap.bins || e.target.bins != heatmap.bins)
            throw ValidationError("training record '" + e.id + "' does not match the configured bins");
        any_type_i |= !e.target.blank();
    }
    if (!any_type_i) throw ValidationError("nothing to learn: no type-I records");

    TrainReport rep;
    std::set<int> held_out = detail::validation_patches(examples, cfg.validation_fraction,
                                                        derive_seed(cfg.seed, "validation-split"));
    std::vector<const TrainingExample*> train_set, val_set;
    for (const auto& e : examples) (held_out.count(e.patch) ? val_set : train_set).push_back(&e);
    bool train_has_type_i = false;
    for (const auto* e : train_set) train_has_type_i |= !e->target.blank();
    if (!train_has_type_i) throw ValidationError("nothing to learn: validation split left no type-I records");
    rep.train_records = train_set.size();
    rep.validation_records = val_set.size();
    rep.validation_patches.assign(held_out.begin(), held_out.end());
    rep.class_weight = detail::class_weights(train_set, cfg.class_balance);

    RecognizerModel model(class_a, class_b, heatmap, cfg.seed, cfg.base_width);
    model.net.initialize(derive_seed(cfg.seed, "init"));
    const int n = heatmap.bins;
    const size_t bins2 = size_t(n) * n;
    const size_t np = model.net.parameter_count();

    std::vector<std::vector<uint8_t>> codes;
    codes.reserve(train_set.size());
    std::vector<double> sample_weight;
    for (const auto* e : train_set) {
        codes.push_back(detail::target_codes(e->target));
        double w = 0.0;
        for (uint8_t c : codes.back()) w += rep.class_weight[c];
        sample_weight.push_back(w);
    }

    nn::Workspace<float> ws;
    std::vector<float> dlogits(nn::kOutputClasses * bins2);
    auto dataset_loss = [&]() {
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < train_set.size(); ++i) {
            const auto& logits = model.net.forward(train_set[i]->input.data, n, n, ws);
            num += nn::weighted_cross_entropy<float>(logits, codes[i], rep.class_weight, 0.0, {});
            den += sample_weight[i];
        }
        return den > 0.0 ? num / den : 0.0;
    };
    rep.initial_loss = dataset_loss();

    std::vector<float> grad(np), m(np, 0.0f), v(np, 0.0f);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long step = 0;
    std::vector<size_t> order(train_set.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), size_t(0));
        std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle", uint64_t(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_num = 0.0, epoch_den = 0.0;
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
            double batch_weight = 0.0;
            for (size_t k = start; k < end; ++k) batch_weight += sample_weight[order[k]];
            if (batch_weight <= 0.0) continue;
            std::fill(grad.begin(), grad.end(), 0.0f);
            for (size_t k = start; k < end; ++k) {
                size_t i = order[k];
                const auto& logits = model.net.forward(train_set[i]->input.data, n, n, ws);
                epoch_num +=
                    nn::weighted_cross_entropy<float>(logits, codes[i], rep.class_weight, 1.0 / batch_weight, dlogits);
                model.net.backward(dlogits, ws, grad);
            }
            epoch_den += batch_weight;
            ++step;
            const double lr = cfg.learning_rate * std::sqrt(1.0 - std::pow(beta2, double(step))) /
                              (1.0 - std::pow(beta1, double(step)));
            auto params = model.net.parameters();
            for (size_t j = 0; j < np; ++j) {
                m[j] = float(beta1 * m[j] + (1.0 - beta1) * grad[j]);
                v[j] = float(beta2 * v[j] + (1.0 - beta2) * double(grad[j]) * grad[j]);
                params[j] -= float(lr * m[j] / (std::sqrt(double(v[j])) + eps));
            }
        }
        rep.epoch_loss.push_back(epoch_den > 0.0 ? epoch_num / epoch_den : 0.0);
    }

    if (!val_set.empty()) {
        double acc = 0.0, occ = 0.0;
        for (const auto* e : val_set) {
            TargetMask pred = infer(model, e->input, 0, &ws);
            acc += bin_accuracy(pred, e->target);
            occ += bin_accuracy(pred, e->target, &e->input);
        }
        rep.validation_accuracy = acc / double(val_set.size());
        rep.validation_occupied_accuracy = occ / double(val_set.size());
    }
    if (report) *report = std::move(rep);
    return model;
}

// Checkpoint: `<path>.hdr` key-value header plus `<path>` holding the flat
// float32 parameter vector (little-endian) in network order: for each layer
// enc0, enc1, enc2, mid, dec2, dec1, dec0, head the weights [out][in][ky][kx]
// followed by the bias [out].

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_model(const RecognizerModel& model, const std::filesystem::path& path,
                        const std::string& provenance = {}) {
    const auto& arch = model.net.architecture();
    KeyValueHeader h;
    h.set("format", "topolabel-recognizer");
    h.set("version", kContainerVersion);
    h.set("architecture", arch.descriptor());
    h.set("base_width", arch.base_width);
    h.set("parameter_order", "enc0,enc1,enc2,mid,dec2,dec1,dec0,head; weight[out][in][ky][kx] then bias[out]");
    h.set("parameters", static_cast<long long>(model.net.parameter_count()));
    h.set("class_a", model.class_a);
    h.set("class_b", model.class_b);
    h.set("feature_x", model.heatmap.feature_x);
    h.set("feature_y", model.heatmap.feature_y);
    h.set("bins", model.heatmap.bins);
    h.set("scale_x", format_double(model.heatmap.scale_x));
    h.set("scale_y", format_double(model.heatmap.scale_y));
    h.set("seed", std::to_string(model.seed));
    h.set("byte_order", "little");
    if (!provenance.empty()) h.set("provenance", provenance);
    write_text_file(header_path(path), h.serialize());
    auto params = model.net.parameters();
    write_text_file(path, std::string_view(reinterpret_cast<const char*>(params.data()), params.size_bytes()));
}

inline RecognizerModel read_model(const std::filesystem::path& path) {
    KeyValueHeader h = read_header(path);
    detail::check_format(h, "topolabel-recognizer", path);
    HeatMapConfig hm;
    hm.feature_x = h.get("feature_x");
    hm.feature_y = h.get("feature_y");
    hm.bins = int(h.get_int("bins"));
    hm.scale_x = std::stod(h.get("scale_x"));
    hm.scale_y = std::stod(h.get("scale_y"));
    hm.validate();
    RecognizerModel model(h.get("class_a"), h.get("class_b"), hm, std::stoull(h.get("seed")),
                          int(h.get_int("base_width")));
    if (h.get("architecture") != model.net.architecture().descriptor())
        throw ValidationError("'" + path.string() + "': unknown architecture " + h.get("architecture"));
    std::vector<char> body = detail::read_body(path);
    auto params = model.net.parameters();
    if (size_t(h.get_int("parameters")) != params.size() || body.size() != params.size_bytes())
        throw ValidationError("'" + path.string() + "': parameter count mismatch");
    std::memcpy(params.data(), body.data(), body.size());
    return model;
}

}  // namespace topolabel
