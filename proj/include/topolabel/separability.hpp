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

// Class separability measures: Gaussian Jeffries-Matusita distance and the
// per-axis separability used to screen feature pairs.

#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>

#include "topolabel/common.hpp"

namespace topolabel {

inline constexpr double kCovarianceRidge = 1e-6;
inline constexpr size_t kMinJmSamples = 8;

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Sample mean and (n-1)-normalized covariance, ridge-regularized.
inline GaussianFit fit_gaussian(const Eigen::MatrixXd& samples) {
    if (samples.rows() < static_cast<Eigen::Index>(kMinJmSamples))
        throw ValidationError("JM distance needs at least 8 samples per class");
    if (!samples.allFinite()) throw ValidationError("JM samples must be finite");
    GaussianFit g;
    g.mean = samples.colwise().mean().transpose();
    Eigen::MatrixXd centered = samples.rowwise() - g.mean.transpose();
    g.cov = (centered.transpose() * centered) / double(samples.rows() - 1);
    g.cov.diagonal().array() += kCovarianceRidge;
    return g;
}

/// Bhattacharyya distance between two Gaussians.
inline double bhattacharyya(const GaussianFit& a, const GaussianFit& b) {
    if (a.mean.size() != b.mean.size()) throw ValidationError("JM inputs differ in dimension");
    Eigen::MatrixXd pooled = 0.5 * (a.cov + b.cov);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(pooled);
    double det_pooled = pooled.determinant();
    double det_a = a.cov.determinant();
    double det_b = b.cov.determinant();
    if (ldlt.info() != Eigen::Success || !(det_pooled > 0.0) || !(det_a > 0.0) || !(det_b > 0.0) ||
        !std::isfinite(det_pooled))
        throw RuntimeError("singular covariance in JM distance (degenerate samples)");
    Eigen::VectorXd diff = a.mean - b.mean;
    double mahalanobis = diff.dot(ldlt.solve(diff));
    return mahalanobis / 8.0 + 0.5 * (std::log(det_pooled) - 0.5 * (std::log(det_a) + std::log(det_b)));
}

/// JM = 2(1 - exp(-B)), in [0, 2].
inline double jm_from_bhattacharyya(double b) { return std::clamp(2.0 * (1.0 - std::exp(-b)), 0.0, 2.0); }

inline double jm_distance(const GaussianFit& a, const GaussianFit& b) {
    // Symmetrize so jm(a, b) == jm(b, a) bit for bit.
    return jm_from_bhattacharyya(0.5 * (bhattacharyya(a, b) + bhattacharyya(b, a)));
}

/// JM distance between two sample sets (rows = samples, cols = features).
inline double jm_distance(const Eigen::MatrixXd& samples_a, const Eigen::MatrixXd& samples_b) {
    return jm_distance(fit_gaussian(samples_a), fit_gaussian(samples_b));
}

/// Per-class, per-date mean and standard deviation of one feature.
struct FeatureSeries {
    std::vector<double> mean;
    std::vector<double> stddev;
};

/// Feature name -> series, for one class.
using ClassFeatureStats = std::map<std::string, FeatureSeries>;

struct PairScore {
    std::string feature_x;
    std::string feature_y;
    size_t best_date = 0;
    double separability = 0.0;
    std::string label() const { return feature_x + "/" + feature_y; }
};

/// |mu_a - mu_b| / (sigma_a + sigma_b), 0 when both spreads vanish and means agree.
inline double axis_separability(double mu_a, double sd_a, double mu_b, double sd_b) {
    double gap = std::abs(mu_a - mu_b);
    double spread = sd_a + sd_b;
    if (spread <= 0.0) return gap > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return gap / spread;
}

/// Ranks every unordered pair of candidate features by its best per-date
/// separability (max over the two axes); ties broken by pair label.
inline std::vector<PairScore> screen_feature_pairs(const ClassFeatureStats& class_a, const ClassFeatureStats& class_b) {
    std::vector<std::string> features;
    for (const auto& [name, series] : class_a)
        if (class_b.count(name)) features.push_back(name);
    if (features.size() < 2) throw ValidationError("feature screening needs at least two candidate features");

    auto per_date = [&](const std::string& f, size_t t) {
        const auto& a = class_a.at(f);
        const auto& b = class_b.at(f);
        return axis_separability(a.mean.at(t), a.stddev.at(t), b.mean.at(t), b.stddev.at(t));
    };
    size_t dates = class_a.at(features.front()).mean.size();
    for (const auto& f : features)
        if (class_a.at(f).mean.size() != dates || class_b.at(f).mean.size() != dates ||
            class_a.at(f).stddev.size() != dates || class_b.at(f).stddev.size() != dates)
            throw ValidationError("feature '" + f + "' has inconsistent date counts");

    std::vector<PairScore> out;
    for (size_t i = 0; i < features.size(); ++i)
        for (size_t j = i + 1; j < features.size(); ++j) {
            PairScore s{features[i], features[j], 0, -1.0};
            for (size_t t = 0; t < dates; ++t) {
                double v = std::max(per_date(features[i], t), per_date(features[j], t));
                if (v > s.separability) s.separability = v, s.best_date = t;
            }
            out.push_back(s);
        }
    std::stable_sort(out.begin(), out.end(), [](const PairScore& a, const PairScore& b) {
        if (a.separability != b.separability) return a.separability > b.separability;
        return a.label() < b.label();
    });
    return out;
}

}  // namespace topolabel
