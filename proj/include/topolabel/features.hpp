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

// Classification features.
//
// Window features: for window w = 0, 1, ... (20-day median composites from
// DOY 91), the composite value of every band in stack order followed by
// NDVI, EVI, GCVI, LSWI computed from the composited bands. Value k of
// window w sits at w * (bands + 4) + k. A window enters the vector only once
// it has ended, so features for a later date extend those of an earlier date
// without changing them.
//
// Harmonic features: per band, least-squares coefficients of
//   y(t) = c0 + c1 t + sum_k (a_k cos(2 pi k t / T) + b_k sin(2 pi k t / T))
// laid out band by band as c0, c1, a1, b1, a2, b2, ...

#pragma once

#include <Eigen/Dense>

#include <map>
#include <numbers>
#include <optional>

#include "topolabel/raster.hpp"

namespace topolabel {

struct WindowConfig {
    int first_doy = 91;
    int length_days = 20;

    void validate() const {
        if (length_days < 1) throw ValidationError("window length must be positive");
    }
};

/// Windows that have fully elapsed by `current_doy`.
inline std::vector<CompositeWindow> classification_windows(const WindowConfig& cfg, int current_doy) {
    cfg.validate();
    std::vector<CompositeWindow> out;
    for (int start = cfg.first_doy; start + cfg.length_days - 1 <= current_doy; start += cfg.length_days)
        out.push_back({start, start + cfg.length_days - 1});
    return out;
}

inline size_t values_per_window(size_t band_count) { return band_count + kAllIndices.size(); }

inline std::vector<std::string> window_feature_names(size_t windows, const std::vector<std::string>& bands) {
    std::vector<std::string> out;
    for (size_t w = 0; w < windows; ++w) {
        for (const auto& b : bands) out.push_back("w" + std::to_string(w) + ":" + b);
        for (auto idx : kAllIndices) out.push_back("w" + std::to_string(w) + ":" + std::string(index_name(idx)));
    }
    return out;
}

/// Median composites of one patch for a list of windows; windows without any
/// observation are empty.
inline std::vector<std::optional<BandStack>> window_composites(std::span<const BandStack> series,
                                                               const std::vector<CompositeWindow>& windows) {
    std::vector<std::optional<BandStack>> out;
    for (const auto& w : windows) {
        bool any = false;
        for (const auto& s : series) any |= s.doy() >= w.doy_start && s.doy() <= w.doy_end;
        if (any) out.emplace_back(composite(series, w));
        else out.emplace_back(std::nullopt);
    }
    return out;
}

/// Values of one window for pixel `p` (bands, then indices); all missing
/// when the window has no composite or the pixel is not clear in it.
inline void window_values(const std::optional<BandStack>& c, size_t band_count, size_t p, std::span<float> out) {
    if (out.size() != values_per_window(band_count)) throw ValidationError("feature buffer has the wrong size");
    std::fill(out.begin(), out.end(), kNoData);
    if (!c || !c->valid(p)) return;
    if (c->band_count() != band_count) throw ValidationError("composite band count differs from the feature layout");
    std::vector<float> bands(band_count);
    for (size_t b = 0; b < band_count; ++b) out[b] = bands[b] = c->value(b, p);
    size_t k = band_count;
    for (auto idx : kAllIndices) {
        auto needed = index_bands(idx);
        std::array<float, 4> in{};
        bool have = true;
        for (size_t i = 0; i < needed.size() && have; ++i) {
            auto bi = c->find_band(needed[i]);
            if (bi) in[i] = bands[*bi];
            else have = false;
        }
        out[k++] = have ? index_value(idx, std::span<const float>(in.data(), needed.size())) : kNoData;
    }
}

/// Row-major feature matrix (pixels x windows * values) for selected pixels.
inline std::vector<float> window_features(const std::vector<std::optional<BandStack>>& composites,
                                          std::span<const uint32_t> pixels, size_t band_count) {
    const size_t per = values_per_window(band_count);
    const size_t width = composites.size() * per;
    std::vector<float> out(pixels.size() * width, kNoData);
    for (size_t i = 0; i < pixels.size(); ++i)
        for (size_t w = 0; w < composites.size(); ++w)
            window_values(composites[w], band_count, pixels[i], std::span<float>(out.data() + i * width + w * per, per));
    return out;
}

struct HarmonicConfig {
    int order = 2;
    double period = 365.0;
    size_t min_observations = 7;

    size_t coefficients() const { return 2 + 2 * size_t(order); }
    void validate() const {
        if (order < 0) throw ValidationError("harmonic order must be >= 0");
        if (!(period > 0.0)) throw ValidationError("harmonic period must be positive");
        if (min_observations < coefficients()) throw ValidationError("min observations below coefficient count");
    }
};

inline Eigen::MatrixXd harmonic_design(std::span<const double> t, const HarmonicConfig& cfg) {
    Eigen::MatrixXd x(Eigen::Index(t.size()), Eigen::Index(cfg.coefficients()));
    for (size_t i = 0; i < t.size(); ++i) {
        auto r = Eigen::Index(i);
        x(r, 0) = 1.0;
        x(r, 1) = t[i];
        for (int k = 1; k <= cfg.order; ++k) {
            double a = 2.0 * std::numbers::pi * k * t[i] / cfg.period;
            x(r, 2 * k) = std::cos(a);
            x(r, 2 * k + 1) = std::sin(a);
        }
    }
    return x;
}

/// Least-squares harmonic coefficients of one series.
inline Eigen::VectorXd fit_harmonic(std::span<const double> t, std::span<const double> y, const HarmonicConfig& cfg) {
    cfg.validate();
    if (t.size() != y.size()) throw ValidationError("harmonic fit: time and value counts differ");
    if (t.size() < cfg.min_observations)
        throw ValidationError("harmonic fit needs at least " + std::to_string(cfg.min_observations) +
                              " observations, got " + std::to_string(t.size()));
    Eigen::MatrixXd x = harmonic_design(t, cfg);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < x.cols()) throw ValidationError("harmonic fit: rank-deficient design (too few distinct dates)");
    Eigen::Map<const Eigen::VectorXd> yy(y.data(), Eigen::Index(y.size()));
    return qr.solve(yy);
}

/// Harmonic coefficients of every band for selected pixels of a dated series.
/// Pixels with fewer than min_observations clear dates get missing values.
/// Designs are factorized once per distinct clear-date pattern.
inline std::vector<float> harmonic_features(std::span<const BandStack> series, std::span<const uint32_t> pixels,
                                            const HarmonicConfig& cfg) {
    cfg.validate();
    if (series.empty()) throw ValidationError("harmonic features need a non-empty series");
    if (series.size() > 64) throw ValidationError("harmonic features support at most 64 dates");
    const size_t nb = series.front().band_count();
    const size_t nc = cfg.coefficients();
    const size_t width = nb * nc;
    std::vector<float> out(pixels.size() * width, kNoData);
    std::map<uint64_t, std::optional<Eigen::ColPivHouseholderQR<Eigen::MatrixXd>>> solvers;
    for (size_t i = 0; i < pixels.size(); ++i) {
        const uint32_t p = pixels[i];
        uint64_t pattern = 0;
        std::vector<double> t;
        for (size_t d = 0; d < series.size(); ++d)
            if (series[d].valid(p)) pattern |= uint64_t(1) << d, t.push_back(series[d].doy());
        if (t.size() < cfg.min_observations) continue;
        auto it = solvers.find(pattern);
        if (it == solvers.end()) {
            Eigen::MatrixXd x = harmonic_design(t, cfg);
            std::optional<Eigen::ColPivHouseholderQR<Eigen::MatrixXd>> qr(std::in_place, x);
            if (qr->rank() < x.cols()) qr.reset();
            it = solvers.emplace(pattern, std::move(qr)).first;
        }
        if (!it->second) continue;
        Eigen::VectorXd y(Eigen::Index(t.size()));
        for (size_t b = 0; b < nb; ++b) {
            Eigen::Index r = 0;
            for (size_t d = 0; d < series.size(); ++d)
                if (pattern >> d & 1) y(r++) = series[d].value(b, p);
            Eigen::VectorXd c = it->second->solve(y);
            for (size_t k = 0; k < nc; ++k) out[i * width + b * nc + k] = float(c(Eigen::Index(k)));
        }
    }
    return out;
}

}  // namespace topolabel
