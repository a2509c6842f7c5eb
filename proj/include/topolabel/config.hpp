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

// Experiment configuration. A config file is a JSON object whose keys are a
// subset of the defaults below (see configs/ for complete examples); unknown
// keys are rejected so typos fail loudly. `--set a.b=value` overrides any leaf.

#pragma once

#include <json.hpp>

#include "topolabel/classifier.hpp"
#include "topolabel/features.hpp"
#include "topolabel/heatmap.hpp"
#include "topolabel/recognizer.hpp"
#include "topolabel/synth.hpp"

namespace topolabel {

using Json = nlohmann::ordered_json;

struct RecognizerSpec {
    std::string class_a;
    std::string class_b;
    std::string feature_x = "RDEG1";
    std::string feature_y = "SWIR1";
    double scale_x = 0.3;
    double scale_y = 0.6;

    std::string name() const { return class_a + "-" + class_b + "_" + feature_x + "-" + feature_y; }
};

struct ExperimentConfig {
    std::string name = "corn_soy";
    std::string preset = "corn_soy";
    uint64_t seed = 42;
    std::string out = "out";
    unsigned threads = 0;

    std::vector<int> training_years = {2017, 2018};
    int target_year = 2019;

    // Scene overrides on top of the preset.
    int patch_size = 512;
    int patches = 8;
    int field_min = 16;
    int field_max = 96;
    double cloud_prob = 0.1;
    int cloud_block = 32;
    /// Replaces the preset's inter-annual effects when non-empty.
    std::map<int, YearEffect> year_effects;

    int bins = 128;
    std::vector<RecognizerSpec> recognizers = {{"corn", "soybean"}};
    PretriageConfig pretriage;
    double target_fraction = 0.5;
    TrainConfig training{.epochs = 8};
    int min_bins = 20;

    WindowConfig windows;
    int grid_rows = 3;
    int grid_cols = 3;
    size_t samples_per_class = 2000;
    ForestParams forest;
    HarmonicConfig harmonic;

    size_t eval_points_per_patch = 4096;  // 0 = every pixel
    bool strict = true;
    double oa_threshold = 0.85;

    void validate() const {
        if (training_years.empty()) throw ValidationError("config: at least one training year is required");
        for (int y : training_years)
            if (y == target_year) throw ValidationError("config: target year must not be a training year");
        if (recognizers.empty()) throw ValidationError("config: at least one recognizer is required");
        HeatMapConfig{"RDEG1", "SWIR1", bins, 0.3, 0.6}.validate();
        if (!(target_fraction > 0.0 && target_fraction <= 1.0)) throw ValidationError("config: target_fraction must be in (0, 1]");
        training.validate();
        windows.validate();
        forest.validate();
        harmonic.validate();
        if (grid_rows < 1 || grid_cols < 1) throw ValidationError("config: grid must have at least one cell");
        if (samples_per_class < 1) throw ValidationError("config: samples_per_class must be >= 1");
        if (min_bins < 0) throw ValidationError("config: min_bins must be >= 0");
        SyntheticPreset p = synthetic_preset();
        p.scene.validate();
        auto crops = p.scene.crop_classes();
        for (const auto& r : recognizers) {
            for (const auto& c : {r.class_a, r.class_b})
                if (std::find(crops.begin(), crops.end(), c) == crops.end())
                    throw ValidationError("config: recognizer class '" + c + "' is not a crop of preset '" + preset + "'");
            if (r.class_a == r.class_b) throw ValidationError("config: recognizer classes must differ");
            HeatMapConfig{r.feature_x, r.feature_y, bins, r.scale_x, r.scale_y}.validate();
        }
    }

    HeatMapConfig heatmap(const RecognizerSpec& r) const { return {r.feature_x, r.feature_y, bins, r.scale_x, r.scale_y}; }

    /// Preset with this config's scene overrides applied.
    SyntheticPreset synthetic_preset() const {
        SyntheticPreset p = preset_by_name(preset);
        p.scene.patch_size = patch_size;
        p.scene.patches = patches;
        p.scene.field_min = field_min;
        p.scene.field_max = field_max;
        p.scene.cloud_prob = cloud_prob;
        p.scene.cloud_block = cloud_block;
        if (!year_effects.empty())
            for (auto& t : p.trajectories) t.year_effects = year_effects;
        return p;
    }

    std::vector<int> all_years() const {
        std::vector<int> y = training_years;
        y.push_back(target_year);
        return y;
    }
};

inline Json to_json(const ExperimentConfig& c) {
    Json j;
    j["name"] = c.name;
    j["preset"] = c.preset;
    j["seed"] = c.seed;
    j["out"] = c.out;
    j["threads"] = c.threads;
    j["training_years"] = c.training_years;
    j["target_year"] = c.target_year;
    j["scene"] = {{"patch_size", c.patch_size}, {"patches", c.patches},     {"field_min", c.field_min},
                  {"field_max", c.field_max},   {"cloud_prob", c.cloud_prob}, {"cloud_block", c.cloud_block}};
    Json effects = Json::object();
    for (const auto& [year, e] : c.year_effects)
        effects[std::to_string(year)] = {{"offset", e.offset}, {"delay_days", e.delay_days}};
    j["year_effects"] = effects;
    j["heatmap"] = {{"bins", c.bins}, {"target_fraction", c.target_fraction}};
    j["recognizers"] = Json::array();
    for (const auto& r : c.recognizers)
        j["recognizers"].push_back({{"classes", {r.class_a, r.class_b}},
                                    {"features", {r.feature_x, r.feature_y}},
                                    {"scale", {r.scale_x, r.scale_y}}});
    j["pretriage"] = {{"jm_threshold", c.pretriage.jm_threshold}, {"min_pixels", c.pretriage.min_pixels}};
    j["training"] = {{"epochs", c.training.epochs},
                     {"batch_size", c.training.batch_size},
                     {"learning_rate", c.training.learning_rate},
                     {"validation_fraction", c.training.validation_fraction},
                     {"class_balance", c.training.class_balance},
                     {"base_width", c.training.base_width}};
    j["generation"] = {{"min_bins", c.min_bins}};
    j["classifier"] = {{"first_doy", c.windows.first_doy},
                       {"window_days", c.windows.length_days},
                       {"grid_rows", c.grid_rows},
                       {"grid_cols", c.grid_cols},
                       {"samples_per_class", c.samples_per_class},
                       {"trees", c.forest.trees},
                       {"min_leaf", c.forest.min_leaf},
                       {"max_features", c.forest.max_features}};
    j["harmonic"] = {{"order", c.harmonic.order},
                     {"period", c.harmonic.period},
                     {"min_observations", c.harmonic.min_observations}};
    j["evaluation"] = {{"points_per_patch", c.eval_points_per_patch},
                       {"strict", c.strict},
                       {"oa_threshold", c.oa_threshold}};
    return j;
}

namespace detail {

// Keys of `given` must exist in `reference`; objects are checked recursively
// except free-form maps (year_effects).
inline void check_keys(const Json& given, const Json& reference, const std::string& prefix) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!reference.contains(key)) throw ValidationError("config: unknown key '" + path + "'");
        if (path == "year_effects") continue;
        if (value.is_object() && reference[key].is_object()) check_keys(value, reference[key], path);
    }
}

template <typename T>
T get(const Json& j, const char* key, const std::string& section) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError("config: '" + (section.empty() ? std::string(key) : section + "." + key) +
                              "' is missing or has the wrong type");
    }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const Json& given) {
    if (!given.is_object()) throw ValidationError("config: top level must be an object");
    const Json defaults = to_json(ExperimentConfig{});
    detail::check_keys(given, defaults, "");
    Json j = defaults;
    j.merge_patch(given);
    if (given.contains("recognizers")) j["recognizers"] = given["recognizers"];
    if (given.contains("year_effects")) j["year_effects"] = given["year_effects"];

    using detail::get;
    ExperimentConfig c;
    c.name = get<std::string>(j, "name", "");
    c.preset = get<std::string>(j, "preset", "");
    c.seed = get<uint64_t>(j, "seed", "");
    c.out = get<std::string>(j, "out", "");
    c.threads = get<unsigned>(j, "threads", "");
    c.training_years = get<std::vector<int>>(j, "training_years", "");
    c.target_year = get<int>(j, "target_year", "");
    const Json& s = j["scene"];
    c.patch_size = get<int>(s, "patch_size", "scene");
    c.patches = get<int>(s, "patches", "scene");
    c.field_min = get<int>(s, "field_min", "scene");
    c.field_max = get<int>(s, "field_max", "scene");
    c.cloud_prob = get<double>(s, "cloud_prob", "scene");
    c.cloud_block = get<int>(s, "cloud_block", "scene");
    for (const auto& [year, e] : j["year_effects"].items()) {
        YearEffect effect;
        effect.offset = get<std::vector<double>>(e, "offset", "year_effects." + year);
        effect.delay_days = get<double>(e, "delay_days", "year_effects." + year);
        try {
            c.year_effects[std::stoi(year)] = effect;
        } catch (const std::exception&) {
            throw ValidationError("config: year_effects key '" + year + "' is not a year");
        }
    }
    c.bins = get<int>(j["heatmap"], "bins", "heatmap");
    c.target_fraction = get<double>(j["heatmap"], "target_fraction", "heatmap");
    c.recognizers.clear();
    for (const auto& r : j["recognizers"]) {
        RecognizerSpec spec;
        auto classes = get<std::vector<std::string>>(r, "classes", "recognizers");
        if (classes.size() != 2) throw ValidationError("config: recognizer 'classes' must name two classes");
        spec.class_a = classes[0], spec.class_b = classes[1];
        if (r.contains("features")) {
            auto f = get<std::vector<std::string>>(r, "features", "recognizers");
            if (f.size() != 2) throw ValidationError("config: recognizer 'features' must name two features");
            spec.feature_x = f[0], spec.feature_y = f[1];
        }
        if (r.contains("scale")) {
            auto sc = get<std::vector<double>>(r, "scale", "recognizers");
            if (sc.size() != 2) throw ValidationError("config: recognizer 'scale' must hold two values");
            spec.scale_x = sc[0], spec.scale_y = sc[1];
        }
        c.recognizers.push_back(spec);
    }
    c.pretriage.jm_threshold = get<double>(j["pretriage"], "jm_threshold", "pretriage");
    c.pretriage.min_pixels = get<size_t>(j["pretriage"], "min_pixels", "pretriage");
    const Json& t = j["training"];
    c.training.epochs = get<int>(t, "epochs", "training");
    c.training.batch_size = get<int>(t, "batch_size", "training");
    c.training.learning_rate = get<double>(t, "learning_rate", "training");
    c.training.validation_fraction = get<double>(t, "validation_fraction", "training");
    c.training.class_balance = get<double>(t, "class_balance", "training");
    c.training.base_width = get<int>(t, "base_width", "training");
    c.min_bins = get<int>(j["generation"], "min_bins", "generation");
    const Json& k = j["classifier"];
    c.windows.first_doy = get<int>(k, "first_doy", "classifier");
    c.windows.length_days = get<int>(k, "window_days", "classifier");
    c.grid_rows = get<int>(k, "grid_rows", "classifier");
    c.grid_cols = get<int>(k, "grid_cols", "classifier");
    c.samples_per_class = get<size_t>(k, "samples_per_class", "classifier");
    c.forest.trees = get<int>(k, "trees", "classifier");
    c.forest.min_leaf = get<int>(k, "min_leaf", "classifier");
    c.forest.max_features = get<int>(k, "max_features", "classifier");
    const Json& h = j["harmonic"];
    c.harmonic.order = get<int>(h, "order", "harmonic");
    c.harmonic.period = get<double>(h, "period", "harmonic");
    c.harmonic.min_observations = get<size_t>(h, "min_observations", "harmonic");
    const Json& e = j["evaluation"];
    c.eval_points_per_patch = get<size_t>(e, "points_per_patch", "evaluation");
    c.strict = get<bool>(e, "strict", "evaluation");
    c.oa_threshold = get<double>(e, "oa_threshold", "evaluation");
    c.forest.threads = c.threads;
    c.validate();
    return c;
}

/// Applies `a.b.c=value` to a JSON document. The value is parsed as JSON
/// when possible and taken as a plain string otherwise.
inline void apply_override(Json& doc, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
    std::string key = assignment.substr(0, eq);
    std::string text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        value = text;
    }
    Json* node = &doc;
    auto parts = split(key, '.');
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        Json& next = (*node)[parts[i]];
        if (next.is_null()) next = Json::object();
        if (!next.is_object()) throw ValidationError("override '" + key + "': '" + parts[i] + "' is not a section");
        node = &next;
    }
    (*node)[parts.back()] = value;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    Json doc = Json::object();
    if (!path.empty()) {
        try {
            doc = Json::parse(read_text_file(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("config '" + path.string() + "': " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return config_from_json(doc);
}

/// Hash of everything that shapes results (output directory and thread count
/// excluded).
inline std::string config_hash(const ExperimentConfig& c) {
    Json j = to_json(c);
    j.erase("out");
    j.erase("threads");
    return hex64(fnv1a64(j.dump()));
}

/// Hash of the listed top-level sections only.
inline std::string sections_hash(const ExperimentConfig& c, std::initializer_list<const char*> sections) {
    Json full = to_json(c);
    Json j = Json::object();
    for (const char* s : sections) j[s] = full.at(s);
    return hex64(fnv1a64(j.dump()));
}

/// Hash of the settings that define the synthetic scenes.
inline std::string scene_hash(const ExperimentConfig& c) {
    return sections_hash(c, {"preset", "seed", "training_years", "target_year", "scene", "year_effects"});
}

/// Hash of the settings that shape generated labels.
inline std::string label_hash(const ExperimentConfig& c) {
    return sections_hash(c, {"preset", "seed", "training_years", "target_year", "scene", "year_effects", "heatmap",
                             "recognizers", "pretriage", "training", "generation"});
}

}  // namespace topolabel
