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

// Accuracy assessment: confusion matrices with an extra "unclassified"
// column, UA/PA/F1/OA, per-date curves and the earliest date reaching an OA
// threshold.

#pragma once

#include <iomanip>
#include <optional>
#include <sstream>

#include "topolabel/raster.hpp"

namespace topolabel {

/// Rows = reference class, columns = predicted class plus a final
/// "unclassified" column for unknown or conflict predictions. Class index 0 is
/// background (code 0), index i is label code i.
class ConfusionMatrix {
   public:
    explicit ConfusionMatrix(std::vector<std::string> classes, bool strict = true)
        : classes_(std::move(classes)), strict_(strict), counts_(classes_.size() * (classes_.size() + 1), 0) {
        if (classes_.size() < 2) throw ValidationError("confusion matrix needs at least two classes");
    }

    size_t size() const { return classes_.size(); }
    const std::vector<std::string>& classes() const { return classes_; }
    bool strict() const { return strict_; }

    uint64_t& at(size_t truth, size_t pred) { return counts_[truth * (size() + 1) + pred]; }
    uint64_t at(size_t truth, size_t pred) const { return counts_[truth * (size() + 1) + pred]; }
    uint64_t unclassified(size_t truth) const { return at(truth, size()); }
    size_t unclassified_column() const { return size(); }

    /// Adds one observation; `pred` outside the class range counts as unclassified.
    void add(size_t truth, size_t pred, uint64_t n = 1) {
        if (truth >= size()) throw ValidationError("reference class out of range");
        at(truth, std::min(pred, size())) += n;
    }

    uint64_t row_sum(size_t truth) const {
        uint64_t s = 0;
        for (size_t j = 0; j < size(); ++j) s += at(truth, j);
        return s + (strict_ ? unclassified(truth) : 0);
    }
    uint64_t col_sum(size_t pred) const {
        uint64_t s = 0;
        for (size_t i = 0; i < size(); ++i) s += at(i, pred);
        return s;
    }
    uint64_t total() const {
        uint64_t s = 0;
        for (size_t i = 0; i < size(); ++i) s += row_sum(i);
        return s;
    }
    /// Every counted observation, unclassified included, regardless of strictness.
    uint64_t observations() const {
        uint64_t s = 0;
        for (uint64_t v : counts_) s += v;
        return s;
    }
    uint64_t trace() const {
        uint64_t s = 0;
        for (size_t i = 0; i < size(); ++i) s += at(i, i);
        return s;
    }

   private:
    std::vector<std::string> classes_;
    bool strict_;
    std::vector<uint64_t> counts_;
};

/// Maps a label cell to a matrix index: background 0, classes 1..N, anything
/// else (unknown, conflict) to the unclassified column.
inline size_t matrix_index(uint16_t code, size_t classes) {
    if (code == kBackground) return 0;
    if (is_class_code(code) && code < classes) return code;
    return classes;
}

/// Confusion over pixels with known reference labels where `mask` is set (an
/// empty mask selects every pixel).
inline ConfusionMatrix confusion(const LabelRaster& pred, const LabelRaster& truth, std::span<const uint8_t> mask = {},
                                 bool strict = true) {
    if (!pred.same_geometry(truth)) throw ValidationError("confusion: geometry mismatch");
    if (!mask.empty() && mask.size() != truth.pixel_count()) throw ValidationError("confusion: mask size mismatch");
    std::vector<std::string> names = {std::string(kBackgroundName)};
    names.insert(names.end(), truth.class_names().begin(), truth.class_names().end());
    ConfusionMatrix cm(names, strict);
    for (size_t p = 0; p < truth.pixel_count(); ++p) {
        if (!mask.empty() && !mask[p]) continue;
        uint16_t t = truth.at(p);
        if (t != kBackground && !is_class_code(t)) continue;
        cm.add(matrix_index(t, names.size()), matrix_index(pred.at(p), names.size()));
    }
    return cm;
}

struct ClassAccuracy {
    double ua = 0.0;
    double pa = 0.0;
    double f1 = 0.0;
    bool degenerate = false;  // class absent from both reference and prediction
};

inline ClassAccuracy class_accuracy(const ConfusionMatrix& cm, size_t cls) {
    if (cls >= cm.size()) throw ValidationError("class index out of range");
    ClassAccuracy a;
    const uint64_t d = cm.at(cls, cls), col = cm.col_sum(cls), row = cm.row_sum(cls);
    a.ua = col ? double(d) / double(col) : 0.0;
    a.pa = row ? double(d) / double(row) : 0.0;
    a.f1 = (a.ua + a.pa) > 0.0 ? 2.0 * a.ua * a.pa / (a.ua + a.pa) : 0.0;
    a.degenerate = col == 0 && row == 0 && cm.unclassified(cls) == 0;
    return a;
}

inline double f1_score(double ua, double pa) { return (ua + pa) > 0.0 ? 2.0 * ua * pa / (ua + pa) : 0.0; }

inline double f1(const ConfusionMatrix& cm, size_t cls) { return class_accuracy(cm, cls).f1; }

inline double oa(const ConfusionMatrix& cm) {
    uint64_t t = cm.total();
    return t ? double(cm.trace()) / double(t) : 0.0;
}

/// First index whose value reaches `threshold`.
inline std::optional<size_t> earliest_date(std::span<const double> oa_by_step, double threshold = 0.85) {
    for (size_t i = 0; i < oa_by_step.size(); ++i)
        if (oa_by_step[i] >= threshold) return i;
    return std::nullopt;
}

struct CurvePoint {
    int step = 0;
    int doy = 0;
    double oa = 0.0;
    std::vector<double> f1;  // per matrix class
    bool classified = false; // a map was produced for this step
};

/// Accuracy over time for one method.
struct AccuracyCurve {
    std::string method;
    std::vector<std::string> classes;
    std::vector<CurvePoint> points;

    std::vector<double> oa_series() const {
        std::vector<double> v;
        for (const auto& p : points) v.push_back(p.oa);
        return v;
    }
    double best_oa() const {
        double b = 0.0;
        for (const auto& p : points) b = std::max(b, p.oa);
        return b;
    }
};

inline CurvePoint curve_point(int step, int doy, const ConfusionMatrix& cm, bool classified) {
    CurvePoint p{step, doy, oa(cm), {}, classified};
    for (size_t c = 0; c < cm.size(); ++c) p.f1.push_back(f1(cm, c));
    return p;
}

/// Per-date series for the main method and any baselines, aligned on steps.
struct ComparisonReport {
    AccuracyCurve main;
    std::vector<AccuracyCurve> baselines;
    double threshold = 0.85;

    void check() const {
        for (const auto& b : baselines) {
            if (b.points.size() != main.points.size()) throw ValidationError("curve '" + b.method + "' is not aligned");
            for (size_t i = 0; i < b.points.size(); ++i)
                if (b.points[i].step != main.points[i].step)
                    throw ValidationError("curve '" + b.method + "' is not aligned");
        }
    }

    /// main OA minus baseline OA, per step.
    std::vector<double> oa_delta(size_t baseline) const {
        check();
        std::vector<double> d;
        for (size_t i = 0; i < main.points.size(); ++i) d.push_back(main.points[i].oa - baselines.at(baseline).points[i].oa);
        return d;
    }

    std::string csv() const {
        check();
        std::ostringstream out;
        out << std::setprecision(6) << std::fixed;
        out << "step,doy," << main.method << "_oa";
        for (size_t c = 1; c < main.classes.size(); ++c) out << "," << main.method << "_f1_" << main.classes[c];
        for (const auto& b : baselines) out << "," << b.method << "_oa," << "delta_oa_" << b.method;
        out << "\n";
        for (size_t i = 0; i < main.points.size(); ++i) {
            const auto& p = main.points[i];
            out << p.step << "," << p.doy << "," << p.oa;
            for (size_t c = 1; c < p.f1.size(); ++c) out << "," << p.f1[c];
            for (const auto& b : baselines) out << "," << b.points[i].oa << "," << (p.oa - b.points[i].oa);
            out << "\n";
        }
        return out.str();
    }

    std::string text() const {
        check();
        std::ostringstream out;
        out << std::setprecision(3) << std::fixed;
        out << "step  doy  " << std::setw(8) << main.method;
        for (size_t c = 1; c < main.classes.size(); ++c) out << "  " << std::setw(10) << ("F1 " + main.classes[c]);
        for (const auto& b : baselines) out << "  " << std::setw(10) << b.method;
        out << "\n";
        for (size_t i = 0; i < main.points.size(); ++i) {
            const auto& p = main.points[i];
            out << std::setw(4) << p.step << "  " << std::setw(3) << p.doy << "  " << std::setw(8) << p.oa;
            for (size_t c = 1; c < p.f1.size(); ++c) out << "  " << std::setw(10) << p.f1[c];
            for (const auto& b : baselines) out << "  " << std::setw(10) << b.points[i].oa;
            out << "\n";
        }
        auto when = [&](const AccuracyCurve& c) {
            auto s = c.oa_series();
            auto e = earliest_date(s, threshold);
            return e ? "step " + std::to_string(c.points[*e].step) : std::string("never");
        };
        out << "best OA " << main.method << " " << main.best_oa() << ", earliest OA >= " << threshold << ": "
            << when(main) << "\n";
        for (const auto& b : baselines)
            out << "best OA " << b.method << " " << b.best_oa() << ", earliest OA >= " << threshold << ": " << when(b)
                << "\n";
        return out.str();
    }
};

}  // namespace topolabel
