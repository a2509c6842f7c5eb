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

// Experiment stages over an output directory. Each stage reads the artifacts
// of earlier stages, writes its own, and leaves a run record in runs/.
//
//   scenes/<year>/patch_PP/step_TT.bst     synthetic observations
//   scenes/<year>/patch_PP/truth.lbl       reference labels
//   scenes/never_crop/patch_PP.lbl         never-cropped mask (class "never_crop")
//   heatmaps/<recognizer>/                 review bundle (see manifest.hpp)
//   models/recognizer/<recognizer>.unet    recognizer checkpoints (+ .json report)
//   labels/generated/step_TT/patch_PP.lbl  merged recognizer output per step
//   labels/accumulated/step_TT/patch_PP.lbl
//   labels/summary.json                    counts and agreement per step
//   models/classifier/<method>/<when>/cell_C.rf
//   maps/<method>/<when>/patch_PP.lbl      classified evaluation points
//   reports/curves.csv, report.txt, summary.json
//
// Artifacts carry a provenance hash in their headers; a stage refuses inputs
// whose hash does not match the current configuration.

#pragma once

#include <chrono>
#include <cstdio>

#include "topolabel/config.hpp"
#include "topolabel/eval.hpp"
#include "topolabel/manifest.hpp"
#include "topolabel/transfer.hpp"

namespace topolabel {

inline constexpr std::string_view kVersion = "0.1.0";

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "synth",         "heatmaps",          "pretriage",          "train-recognizer", "gen-labels",
        "train-classifier", "classify",       "baseline-boundary",  "baseline-postseason", "baseline-harmonic",
        "evaluate"};
    return names;
}

inline const std::vector<std::string>& baseline_names() {
    static const std::vector<std::string> names = {"boundary", "postseason", "harmonic"};
    return names;
}

namespace fs = std::filesystem;

class Pipeline {
   public:
    explicit Pipeline(ExperimentConfig cfg, bool full_maps = false)
        : cfg_(std::move(cfg)), full_maps_(full_maps) {
        cfg_.validate();
        preset_ = cfg_.synthetic_preset();
        out_ = cfg_.out;
        classes_ = preset_.scene.crop_classes();
        steps_ = preset_.scene.time_steps;
        scene_hash_ = scene_hash(cfg_);
        label_hash_ = label_hash(cfg_);
        config_hash_ = config_hash(cfg_);
        layout_ = SceneLayout::square(cfg_.patch_size, cfg_.patches);
        grid_ = RegionGrid(layout_.width(), layout_.height(), cfg_.grid_rows, cfg_.grid_cols);
    }

    const ExperimentConfig& config() const { return cfg_; }
    const fs::path& out() const { return out_; }
    const std::vector<std::string>& classes() const { return classes_; }
    const std::vector<TimeStep>& steps() const { return steps_; }
    int final_step() const { return int(steps_.size()) - 1; }

    // ---- paths ----
    static std::string two(int v) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%02d", v);
        return buf;
    }
    fs::path patch_dir(int year, int p) const { return out_ / "scenes" / std::to_string(year) / ("patch_" + two(p)); }
    fs::path stack_path(int year, int p, int t) const { return patch_dir(year, p) / ("step_" + two(t) + ".bst"); }
    fs::path truth_path(int year, int p) const { return patch_dir(year, p) / "truth.lbl"; }
    fs::path never_crop_path(int p) const { return out_ / "scenes" / "never_crop" / ("patch_" + two(p) + ".lbl"); }
    fs::path heatmap_dir(const RecognizerSpec& r) const { return out_ / "heatmaps" / r.name(); }
    fs::path recognizer_path(const RecognizerSpec& r) const { return out_ / "models" / "recognizer" / (r.name() + ".unet"); }
    fs::path generated_path(int t, int p) const {
        return out_ / "labels" / "generated" / ("step_" + two(t)) / ("patch_" + two(p) + ".lbl");
    }
    fs::path accumulated_path(int t, int p) const {
        return out_ / "labels" / "accumulated" / ("step_" + two(t)) / ("patch_" + two(p) + ".lbl");
    }
    fs::path label_summary_path() const { return out_ / "labels" / "summary.json"; }
    static std::string when(int t) { return t < 0 ? "season" : "step_" + two(t); }
    fs::path forest_path(const std::string& method, int t, int cell) const {
        return out_ / "models" / "classifier" / method / when(t) / ("cell_" + std::to_string(cell) + ".rf");
    }
    fs::path map_path(const std::string& method, int t, int p) const {
        return out_ / "maps" / method / when(t) / ("patch_" + two(p) + ".lbl");
    }
    fs::path report_dir() const { return out_ / "reports"; }
    fs::path run_record_path(const std::string& stage) const { return out_ / "runs" / (stage + ".json"); }

    // ---- stages ----
    void run(const std::string& stage) {
        if (stage == "synth") return staged(stage, [&](Json& r) { synth(r); });
        if (stage == "heatmaps") return staged(stage, [&](Json& r) { heatmaps(r); });
        if (stage == "pretriage") return staged(stage, [&](Json& r) { pretriage(r); });
        if (stage == "train-recognizer") return staged(stage, [&](Json& r) { train_recognizers(r); });
        if (stage == "gen-labels") return staged(stage, [&](Json& r) { gen_labels(r); });
        if (stage == "train-classifier") return staged(stage, [&](Json& r) { train_classifier(r); });
        if (stage == "classify") return staged(stage, [&](Json& r) { classify(r); });
        if (stage == "baseline-boundary") return staged(stage, [&](Json& r) { baseline(r, "boundary"); });
        if (stage == "baseline-postseason") return staged(stage, [&](Json& r) { baseline(r, "postseason"); });
        if (stage == "baseline-harmonic") return staged(stage, [&](Json& r) { baseline(r, "harmonic"); });
        if (stage == "evaluate") return staged(stage, [&](Json& r) { evaluate(r); });
        throw ValidationError("unknown stage '" + stage + "'");
    }

    void run_all() {
        for (const auto& s : stage_names()) run(s);
    }

    /// Pixels evaluated in patch p (sorted), every pixel when the config asks
    /// for full evaluation.
    std::vector<uint32_t> eval_pixels(int p) const {
        const uint32_t n = uint32_t(cfg_.patch_size) * uint32_t(cfg_.patch_size);
        std::vector<uint32_t> all(n);
        std::iota(all.begin(), all.end(), 0u);
        if (cfg_.eval_points_per_patch == 0 || cfg_.eval_points_per_patch >= n) return all;
        std::mt19937_64 rng(derive_seed(cfg_.seed, "eval-points", uint64_t(p)));
        for (size_t i = 0; i < cfg_.eval_points_per_patch; ++i) {
            size_t j = i + std::uniform_int_distribution<size_t>(0, n - 1 - i)(rng);
            std::swap(all[i], all[j]);
        }
        all.resize(cfg_.eval_points_per_patch);
        std::sort(all.begin(), all.end());
        return all;
    }

    /// Steps for which `method` has maps on disk.
    std::vector<int> classified_steps(const std::string& method) const {
        std::vector<int> out;
        for (int t = 0; t <= final_step(); ++t)
            if (fs::exists(map_path(method, t, 0))) out.push_back(t);
        return out;
    }

   private:
    ExperimentConfig cfg_;
    bool full_maps_ = false;
    SyntheticPreset preset_;
    fs::path out_;
    std::vector<std::string> classes_;
    std::vector<TimeStep> steps_;
    std::string scene_hash_, label_hash_, config_hash_;
    SceneLayout layout_;
    RegionGrid grid_;

    uint64_t stage_seed(const std::string& stage) const { return derive_seed(cfg_.seed, stage); }

    // Patch-level jobs hold a full series in memory, so they get a small cap.
    unsigned workers(unsigned cap) const { return cfg_.threads ? std::min(cfg_.threads, cap) : cap; }

    template <typename Fn>
    void staged(const std::string& stage, Fn&& body) {
        auto start = std::chrono::steady_clock::now();
        Json record;
        record["stage"] = stage;
        record["version"] = std::string(kVersion);
        record["config_hash"] = config_hash_;
        record["scene_hash"] = scene_hash_;
        record["label_hash"] = label_hash_;
        record["seed"] = cfg_.seed;
        record["stage_seed"] = stage_seed(stage);
        record["config"] = to_json(cfg_);
        try {
            body(record);
        } catch (const ValidationError& e) {
            throw ValidationError("stage " + stage + ": " + e.what());
        } catch (const RuntimeError& e) {
            throw RuntimeError("stage " + stage + ": " + e.what());
        } catch (const fs::filesystem_error& e) {
            throw RuntimeError("stage " + stage + ": " + e.what());
        }
        double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::fprintf(stderr, "[%s] done in %.1f s\n", stage.c_str(), elapsed);
        // Timings vary between runs, so they go to the log, not the record.
        write_text_file(run_record_path(stage), record.dump(2) + "\n");
    }

    static void require(const fs::path& path) {
        if (!fs::exists(path) || !fs::exists(header_path(path)))
            throw ValidationError("missing input '" + path.string() + "'");
    }

    static void require_provenance(const fs::path& path, const std::string& expected) {
        require(path);
        KeyValueHeader h = read_header(path);
        const std::string got = h.has("provenance") ? h.get("provenance") : "";
        if (got != expected)
            throw ValidationError("'" + path.string() + "' was produced under a different configuration (" +
                                  (got.empty() ? "no hash" : got) + " vs " + expected + "); re-run the earlier stages");
    }

    BandStack load_stack(int year, int p, int t) const {
        auto path = stack_path(year, p, t);
        require_provenance(path, scene_hash_);
        BandStack s = read_stack(path);
        if (s.width() != cfg_.patch_size || s.height() != cfg_.patch_size)
            throw ValidationError("'" + path.string() + "' does not match the configured patch size");
        return s;
    }
    std::vector<BandStack> load_series(int year, int p) const {
        std::vector<BandStack> v;
        for (int t = 0; t <= final_step(); ++t) v.push_back(load_stack(year, p, t));
        return v;
    }
    LabelRaster load_truth(int year, int p) const {
        auto path = truth_path(year, p);
        require_provenance(path, scene_hash_);
        return read_labels(path);
    }
    std::vector<uint8_t> load_never_crop(int p) const {
        auto path = never_crop_path(p);
        require_provenance(path, scene_hash_);
        LabelRaster m = read_labels(path);
        std::vector<uint8_t> out(m.pixel_count());
        for (size_t i = 0; i < out.size(); ++i) out[i] = m.at(i) == 1;
        return out;
    }
    std::vector<uint16_t> crop_codes() const {
        std::vector<uint16_t> v;
        for (size_t i = 0; i < classes_.size(); ++i) v.push_back(uint16_t(i + 1));
        return v;
    }
    Json class_pair_json(const RecognizerSpec& r) const { return Json::array({r.class_a, r.class_b}); }

    // ---- synth ----
    void synth(Json& record) {
        const auto years = cfg_.all_years();
        const uint64_t seed = stage_seed("synth");
        parallel_for(
            size_t(cfg_.patches),
            [&](size_t pi) {
                const int p = int(pi);
                std::vector<uint8_t> never(size_t(cfg_.patch_size) * cfg_.patch_size, 1);
                for (int year : years) {
                    PatchScene scene = generate_patch(preset_.scene, preset_.trajectories, year, p, seed);
                    for (size_t t = 0; t < scene.stacks.size(); ++t)
                        write_stack(scene.stacks[t], stack_path(year, p, int(t)), scene_hash_);
                    write_labels(scene.truth, truth_path(year, p), year, scene_hash_);
                    if (std::find(cfg_.training_years.begin(), cfg_.training_years.end(), year) !=
                        cfg_.training_years.end())
                        for (size_t i = 0; i < never.size(); ++i) never[i] &= scene.truth.at(i) == kBackground;
                }
                LabelRaster mask(cfg_.patch_size, cfg_.patch_size, {"never_crop"}, kBackground);
                for (size_t i = 0; i < never.size(); ++i)
                    if (never[i]) mask.set(i, 1);
                write_labels(mask, never_crop_path(p), 0, scene_hash_);
            },
            workers(2));
        record["outputs"] = {{"years", years}, {"patches", cfg_.patches}, {"steps", steps_.size()}};
    }

    // ---- heat maps ----
    void heatmaps(Json& record) {
        Json summary = Json::array();
        for (const auto& spec : cfg_.recognizers) {
            const HeatMapConfig hc = cfg_.heatmap(spec);
            const fs::path dir = heatmap_dir(spec);
            Manifest m;
            m.recognizer = spec.name();
            m.feature_pair = {spec.feature_x, spec.feature_y};
            m.class_pair = {spec.class_a, spec.class_b};
            m.jm_threshold = cfg_.pretriage.jm_threshold;
            std::vector<HeatMapRecord> records;
            for (int year : cfg_.training_years)
                for (int p = 0; p < cfg_.patches; ++p)
                    for (int t = 0; t <= final_step(); ++t) {
                        HeatMapRecord r;
                        r.id = std::to_string(year) + "_p" + two(p) + "_t" + two(t);
                        r.patch = p;
                        r.year = year;
                        r.time_step = t;
                        r.image = r.id + ".pgm";
                        records.push_back(r);
                    }
            m.records = records;
            parallel_for(
                size_t(cfg_.patches) * cfg_.training_years.size(),
                [&](size_t job) {
                    const int year = cfg_.training_years[job / size_t(cfg_.patches)];
                    const int p = int(job % size_t(cfg_.patches));
                    LabelRaster truth = load_truth(year, p);
                    auto never = load_never_crop(p);
                    const uint16_t a = truth.class_id(spec.class_a), b = truth.class_id(spec.class_b);
                    for (int t = 0; t <= final_step(); ++t) {
                        BandStack stack = load_stack(year, p, t);
                        PatchHeatMaps hm = patch_heatmaps(stack, hc, never, &truth);
                        HeatMapRecordData d;
                        d.input = hm.input;
                        d.stats = pair_statistics(collect_pair_samples(stack, truth, never, hc, a, b));
                        bool both = hm.projection.per_class.count(a) && hm.projection.per_class.at(a).total_in_range &&
                                    hm.projection.per_class.count(b) && hm.projection.per_class.at(b).total_in_range;
                        d.target = both ? pair_target(hm.projection, a, b, Category::type_i, cfg_.target_fraction)
                                        : blank_target(hc.bins);
                        size_t idx = (job / size_t(cfg_.patches)) * size_t(cfg_.patches) * steps_.size() +
                                     size_t(p) * steps_.size() + size_t(t);
                        const HeatMapRecord& meta = m.records[idx];
                        write_record(d, meta, dir / (meta.id + ".rec"), scene_hash_);
                        write_pgm(dir / meta.image, std::span<const float>(d.input.data).first(hc.cells()), hc.bins,
                                  hc.bins);
                    }
                },
                workers(2));
            const fs::path manifest_path = dir / "manifest.json";
            size_t kept = 0;
            if (fs::exists(manifest_path)) {
                Manifest previous = read_manifest(manifest_path);
                keep_human_decisions(m, previous);
                for (const auto& r : m.records) kept += r.category_source == CategorySource::human;
            }
            write_manifest(m, manifest_path);
            summary.push_back({{"recognizer", spec.name()}, {"records", m.records.size()}, {"human_decisions_kept", kept}});
        }
        record["outputs"] = summary;
    }

    // ---- pre-triage ----
    void pretriage(Json& record) {
        Json summary = Json::array();
        for (const auto& spec : cfg_.recognizers) {
            const fs::path dir = heatmap_dir(spec);
            require_text(dir / "manifest.json");
            Manifest m = read_manifest(dir / "manifest.json");
            m.jm_threshold = cfg_.pretriage.jm_threshold;
            size_t type_i = 0, human = 0;
            for (auto& r : m.records) {
                auto path = dir / (r.id + ".rec");
                require_provenance(path, scene_hash_);
                HeatMapRecordData d = read_record(path);
                categorize(r, d.stats, cfg_.pretriage);
                type_i += r.category == Category::type_i;
                human += r.category_source == CategorySource::human;
            }
            write_manifest(m, dir / "manifest.json");
            summary.push_back({{"recognizer", spec.name()},
                               {"records", m.records.size()},
                               {"type_i", type_i},
                               {"human", human}});
        }
        record["outputs"] = summary;
    }

    // ---- recognizer training ----
    void train_recognizers(Json& record) {
        Json summary = Json::array();
        for (const auto& spec : cfg_.recognizers) {
            const fs::path dir = heatmap_dir(spec);
            require_text(dir / "manifest.json");
            Manifest m = read_manifest(dir / "manifest.json");
            if (m.class_pair != std::make_pair(spec.class_a, spec.class_b) ||
                m.feature_pair != std::make_pair(spec.feature_x, spec.feature_y))
                throw ValidationError("'" + (dir / "manifest.json").string() + "' belongs to a different recognizer");
            std::vector<TrainingExample> examples;
            size_t type_i = 0, type_ii = 0, skipped = 0;
            for (const auto& r : m.records) {
                if (r.category == Category::uncategorized) {
                    ++skipped;
                    continue;
                }
                auto path = dir / (r.id + ".rec");
                require_provenance(path, scene_hash_);
                HeatMapRecordData d = read_record(path);
                if (d.input.bins != cfg_.bins) throw ValidationError("'" + path.string() + "' has the wrong bin count");
                TrainingExample ex{r.id, r.patch, std::move(d.input), {}};
                if (r.category == Category::type_i) {
                    ex.target = std::move(d.target);
                    ++type_i;
                } else {
                    ex.target = blank_target(cfg_.bins);
                    ++type_ii;
                }
                examples.push_back(std::move(ex));
            }
            TrainConfig tc = cfg_.training;
            tc.seed = derive_seed(stage_seed("train-recognizer"), spec.name());
            TrainReport report;
            RecognizerModel model = train(examples, tc, spec.class_a, spec.class_b, cfg_.heatmap(spec), &report);
            write_model(model, recognizer_path(spec), label_hash_);
            Json rep = {{"recognizer", spec.name()},
                        {"type_i_records", type_i},
                        {"type_ii_records", type_ii},
                        {"uncategorized_records", skipped},
                        {"train_records", report.train_records},
                        {"validation_records", report.validation_records},
                        {"validation_patches", report.validation_patches},
                        {"class_weight", report.class_weight},
                        {"initial_loss", report.initial_loss},
                        {"epoch_loss", report.epoch_loss},
                        {"validation_accuracy", nullable(report.validation_accuracy)},
                        {"validation_occupied_accuracy", nullable(report.validation_occupied_accuracy)}};
            auto rp = recognizer_path(spec);
            rp.replace_extension(".json");
            write_text_file(rp, rep.dump(2) + "\n");
            summary.push_back(rep);
        }
        record["outputs"] = summary;
    }

    static Json nullable(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

    // ---- label generation ----
    void gen_labels(Json& record) {
        std::vector<RecognizerModel> models;
        for (const auto& spec : cfg_.recognizers) {
            auto path = recognizer_path(spec);
            require_provenance(path, label_hash_);
            models.push_back(read_model(path));
        }
        const size_t K = classes_.size();
        const size_t T = steps_.size();
        // Per patch, per step, per class (index = code).
        struct PatchStats {
            std::vector<std::vector<size_t>> generated, hits, accumulated, stable;
            std::vector<size_t> conflicts;
            std::vector<size_t> accumulated_conflicts;
        };
        std::vector<PatchStats> stats(size_t(cfg_.patches));
        parallel_for(
            size_t(cfg_.patches),
            [&](size_t pi) {
                const int p = int(pi);
                auto never = load_never_crop(p);
                LabelRaster truth = load_truth(cfg_.target_year, p);
                AccumulatedLabels acc(cfg_.patch_size, cfg_.patch_size, classes_);
                nn::Workspace<float> ws;
                PatchStats& st = stats[pi];
                for (int t = 0; t <= final_step(); ++t) {
                    BandStack stack = load_stack(cfg_.target_year, p, t);
                    std::vector<LabelRaster> parts;
                    for (const auto& model : models)
                        parts.push_back(recognize_patch(model, stack, never, classes_, cfg_.min_bins, &ws));
                    LabelRaster merged = merge_labels(parts);
                    write_labels(merged, generated_path(t, p), cfg_.target_year, label_hash_);
                    acc.add(t, merged);
                    write_labels(acc.labels, accumulated_path(t, p), cfg_.target_year, label_hash_);
                    std::vector<size_t> gen(K + 1, 0), hit(K + 1, 0);
                    size_t conflicts = 0;
                    for (size_t i = 0; i < merged.pixel_count(); ++i) {
                        uint16_t c = merged.at(i);
                        if (c == kConflict) ++conflicts;
                        if (!is_class_code(c)) continue;
                        ++gen[c];
                        hit[c] += truth.at(i) == c;
                    }
                    st.generated.push_back(gen);
                    st.hits.push_back(hit);
                    st.conflicts.push_back(conflicts);
                    st.accumulated.push_back(acc.counts.back());
                    st.accumulated_conflicts.push_back(acc.labels.count(kConflict));
                }
                for (size_t i = 0; i < T; ++i) {
                    std::vector<size_t> s(K + 1, 0);
                    for (uint16_t c = 1; c <= K; ++c) s[c] = acc.stable_count(i, c);
                    st.stable.push_back(s);
                }
            },
            workers(2));

        Json steps = Json::array();
        std::ostringstream csv;
        csv << "step,doy";
        for (const auto& c : classes_) csv << ",generated_" << c << ",agreement_" << c << ",accumulated_" << c;
        csv << ",conflicts,accumulated_conflicts\n";
        csv << std::setprecision(6) << std::fixed;
        for (size_t t = 0; t < T; ++t) {
            Json s;
            s["step"] = t;
            s["doy"] = steps_[t].doy_end;
            csv << t << "," << steps_[t].doy_end;
            size_t conflicts = 0, acc_conflicts = 0, labeled = 0;
            for (const auto& st : stats) conflicts += st.conflicts[t], acc_conflicts += st.accumulated_conflicts[t];
            for (size_t k = 1; k <= K; ++k) {
                size_t gen = 0, hit = 0, acc = 0, stable = 0;
                for (const auto& st : stats) {
                    gen += st.generated[t][k];
                    hit += st.hits[t][k];
                    acc += st.accumulated[t][k];
                    stable += st.stable[t][k];
                }
                labeled += gen;
                Json c = {{"generated", gen}, {"agreeing", hit}, {"accumulated", acc}, {"stable", stable}};
                c["agreement"] = gen ? Json(double(hit) / double(gen)) : Json(nullptr);
                s["classes"][classes_[k - 1]] = c;
                csv << "," << gen << ",";
                if (gen) csv << double(hit) / double(gen);
                csv << "," << acc;
            }
            s["conflicts"] = conflicts;
            s["accumulated_conflicts"] = acc_conflicts;
            s["labeled"] = labeled;
            csv << "," << conflicts << "," << acc_conflicts << "\n";
            steps.push_back(s);
        }
        Json summary = {{"target_year", cfg_.target_year}, {"classes", classes_}, {"steps", steps}};
        write_text_file(label_summary_path(), summary.dump(2) + "\n");
        write_text_file(out_ / "labels" / "summary.csv", csv.str());
        record["outputs"] = {{"summary", label_summary_path().string()}};
    }

    // ---- features ----

    /// Window features of the given pixels (sorted per patch) for one year,
    /// through the last step. Patch ids in the table are offset by `id_offset`.
    void add_window_features(FeatureTable& table, int year, const std::vector<std::vector<uint32_t>>& pixels,
                             int id_offset) const {
        const auto windows = classification_windows(cfg_.windows, steps_.back().doy_end);
        const size_t bands = preset_.scene.bands.size();
        table.width = windows.size() * values_per_window(bands);
        for (int p = 0; p < cfg_.patches; ++p) {
            const auto& px = pixels[size_t(p)];
            if (px.empty()) continue;
            auto series = load_series(year, p);
            auto composites = window_composites(series, windows);
            auto values = window_features(composites, px, bands);
            for (uint32_t v : px) table.pixels.push_back({p + id_offset, v});
            table.values.insert(table.values.end(), values.begin(), values.end());
        }
    }

    void add_harmonic_features(FeatureTable& table, int year, const std::vector<std::vector<uint32_t>>& pixels,
                               int id_offset) const {
        table.width = preset_.scene.bands.size() * cfg_.harmonic.coefficients();
        for (int p = 0; p < cfg_.patches; ++p) {
            const auto& px = pixels[size_t(p)];
            if (px.empty()) continue;
            auto series = load_series(year, p);
            auto values = harmonic_features(series, px, cfg_.harmonic);
            for (uint32_t v : px) table.pixels.push_back({p + id_offset, v});
            table.values.insert(table.values.end(), values.begin(), values.end());
        }
    }

    std::vector<std::vector<uint32_t>> pixels_of(const std::vector<std::vector<CellSamples>>& sets, int id_offset) const {
        std::vector<std::set<uint32_t>> per(size_t(cfg_.patches));
        for (const auto& cells : sets)
            for (const auto& cs : cells)
                for (const auto& cls : cs.classes)
                    for (const auto& ref : cls.pixels)
                        if (ref.patch >= id_offset && ref.patch < id_offset + cfg_.patches)
                            per[size_t(ref.patch - id_offset)].insert(ref.pixel);
        std::vector<std::vector<uint32_t>> out;
        for (auto& s : per) out.emplace_back(s.begin(), s.end());
        return out;
    }

    std::vector<std::vector<uint32_t>> map_pixels() const {
        std::vector<std::vector<uint32_t>> out;
        for (int p = 0; p < cfg_.patches; ++p) {
            if (full_maps_) {
                std::vector<uint32_t> all(size_t(cfg_.patch_size) * cfg_.patch_size);
                std::iota(all.begin(), all.end(), 0u);
                out.push_back(std::move(all));
            } else {
                out.push_back(eval_pixels(p));
            }
        }
        return out;
    }

    size_t window_width(int t) const {
        return classification_windows(cfg_.windows, steps_[size_t(t)].doy_end).size() *
               values_per_window(preset_.scene.bands.size());
    }

    void write_forests(const std::string& method, int t, const std::vector<std::optional<ForestModel>>& forests) const {
        for (size_t c = 0; c < forests.size(); ++c)
            if (forests[c]) write_forest(*forests[c], forest_path(method, t, int(c)), config_hash_);
    }

    std::vector<std::optional<ForestModel>> read_forests(const std::string& method, int t) const {
        auto occupied = occupied_cells(layout_, grid_);
        std::vector<std::optional<ForestModel>> out(occupied.size());
        for (size_t c = 0; c < occupied.size(); ++c) {
            if (!occupied[c]) continue;
            auto path = forest_path(method, t, int(c));
            require_provenance(path, config_hash_);
            out[c] = read_forest(path);
        }
        return out;
    }

    /// Classifies map pixels of the target year with per-cell forests and
    /// writes one raster per patch (pixels outside the map set stay unknown).
    void write_maps(const std::string& method, int t, const std::vector<std::optional<ForestModel>>& forests,
                    const FeatureTable& table) const {
        auto pixels = map_pixels();
        for (int p = 0; p < cfg_.patches; ++p) {
            LabelRaster map(cfg_.patch_size, cfg_.patch_size, classes_, kUnknown);
            auto [ox, oy] = layout_.origin(p);
            for (uint32_t px : pixels[size_t(p)]) {
                auto row = table.find({p, px});
                if (!row) throw ValidationError("map pixel has no features");
                int cell = grid_.cell_of(ox + int(px % uint32_t(cfg_.patch_size)), oy + int(px / uint32_t(cfg_.patch_size)));
                map.set(px, classify_pixel(forests[size_t(cell)], table.row(*row)));
            }
            write_labels(map, map_path(method, t, p), cfg_.target_year, config_hash_);
        }
    }

    FeatureTable target_window_table() const {
        FeatureTable table;
        add_window_features(table, cfg_.target_year, map_pixels(), 0);
        return table;
    }

    // ---- main classifier ----
    void train_classifier(Json& record) {
        const uint64_t seed = stage_seed("train-classifier");
        std::vector<std::vector<uint8_t>> never;
        for (int p = 0; p < cfg_.patches; ++p) never.push_back(load_never_crop(p));
        auto occupied = occupied_cells(layout_, grid_);
        std::vector<int> trained;
        std::vector<std::vector<CellSamples>> samples;
        Json steps = Json::array();
        for (int t = 0; t <= final_step(); ++t) {
            Json s = {{"step", t}, {"doy", steps_[size_t(t)].doy_end}};
            if (window_width(t) == 0) {
                s["skipped"] = "no complete composite window yet";
                steps.push_back(s);
                continue;
            }
            std::vector<LabelRaster> labels;
            for (int p = 0; p < cfg_.patches; ++p) {
                auto path = accumulated_path(t, p);
                require_provenance(path, label_hash_);
                labels.push_back(read_labels(path));
            }
            try {
                samples.push_back(sample_training(labels, never, layout_, grid_, crop_codes(), cfg_.samples_per_class,
                                                  derive_seed(seed, "step", uint64_t(t))));
            } catch (const ValidationError& e) {
                s["skipped"] = e.what();
                steps.push_back(s);
                continue;
            }
            trained.push_back(t);
            Json borrowed = Json::array();
            for (size_t c = 0; c < samples.back().size(); ++c)
                for (const auto& cls : samples.back()[c].classes)
                    if (cls.source_cell != int(c))
                        borrowed.push_back({{"cell", c}, {"class", cls.cls}, {"from", cls.source_cell}});
            s["borrowed"] = borrowed;
            steps.push_back(s);
        }
        FeatureTable table;
        add_window_features(table, cfg_.target_year, pixels_of(samples, 0), 0);
        for (size_t i = 0; i < trained.size(); ++i) {
            const int t = trained[i];
            ForestParams fp = cfg_.forest;
            fp.threads = cfg_.threads;
            auto forests = train_cells(samples[i], table, window_width(t), occupied, fp, derive_seed(seed, "forest", uint64_t(t)));
            write_forests("main", t, forests);
        }
        write_text_file(out_ / "models" / "classifier" / "main" / "steps.json",
                        Json({{"trained_steps", trained}, {"steps", steps}}).dump(2) + "\n");
        record["outputs"] = {{"trained_steps", trained}};
    }

    std::vector<int> trained_steps(const std::string& method) const {
        auto path = out_ / "models" / "classifier" / method / "steps.json";
        require_text(path);
        return Json::parse(read_text_file(path)).at("trained_steps").get<std::vector<int>>();
    }

    static void require_text(const fs::path& path) {
        if (!fs::exists(path)) throw ValidationError("missing input '" + path.string() + "'");
    }

    void clear_maps(const std::string& method) const { fs::remove_all(out_ / "maps" / method); }

    void classify(Json& record) {
        auto steps = trained_steps("main");
        clear_maps("main");
        FeatureTable table = target_window_table();
        for (int t : steps) write_maps("main", t, read_forests("main", t), table);
        record["outputs"] = {{"classified_steps", steps}, {"full", full_maps_}};
    }

    // ---- baselines ----

    /// Reference-label samples pooled over the training years; patch ids of
    /// year i are offset by i * patches.
    std::vector<CellSamples> historical_samples(uint64_t seed) const {
        std::vector<std::vector<uint8_t>> never;
        for (int p = 0; p < cfg_.patches; ++p) never.push_back(load_never_crop(p));
        const size_t years = cfg_.training_years.size();
        const size_t per_year = (cfg_.samples_per_class + years - 1) / years;
        std::vector<CellSamples> pooled;
        for (size_t yi = 0; yi < years; ++yi) {
            std::vector<LabelRaster> truth;
            for (int p = 0; p < cfg_.patches; ++p) truth.push_back(load_truth(cfg_.training_years[yi], p));
            auto s = sample_training(truth, never, layout_, grid_, crop_codes(), per_year,
                                     derive_seed(seed, "year", uint64_t(cfg_.training_years[yi])));
            const int offset = int(yi) * cfg_.patches;
            for (auto& cell : s)
                for (auto& cls : cell.classes)
                    for (auto& ref : cls.pixels) ref.patch += offset;
            if (pooled.empty()) {
                pooled = std::move(s);
                continue;
            }
            for (size_t c = 0; c < pooled.size(); ++c)
                for (size_t k = 0; k < pooled[c].classes.size(); ++k) {
                    auto& dst = pooled[c].classes[k].pixels;
                    const auto& src = s[c].classes[k].pixels;
                    dst.insert(dst.end(), src.begin(), src.end());
                }
        }
        return pooled;
    }

    void baseline(Json& record, const std::string& method) {
        const uint64_t seed = stage_seed("baseline-" + method);
        auto samples = historical_samples(seed);
        auto occupied = occupied_cells(layout_, grid_);
        ForestParams fp = cfg_.forest;
        fp.threads = cfg_.threads;
        const bool harmonic = method == "harmonic";
        FeatureTable train_table;
        for (size_t yi = 0; yi < cfg_.training_years.size(); ++yi) {
            const int offset = int(yi) * cfg_.patches;
            auto px = pixels_of({samples}, offset);
            if (harmonic) add_harmonic_features(train_table, cfg_.training_years[yi], px, offset);
            else add_window_features(train_table, cfg_.training_years[yi], px, offset);
        }
        clear_maps(method);
        FeatureTable target;
        if (harmonic) add_harmonic_features(target, cfg_.target_year, map_pixels(), 0);
        else target = target_window_table();

        std::vector<int> trained;
        if (method == "boundary") {
            for (int t = 0; t <= final_step(); ++t) {
                if (window_width(t) == 0) continue;
                auto forests = train_cells(samples, train_table, window_width(t), occupied, fp,
                                           derive_seed(seed, "forest", uint64_t(t)));
                write_forests(method, t, forests);
                write_maps(method, t, forests, target);
                trained.push_back(t);
            }
        } else {
            auto forests = train_cells(samples, train_table, train_table.width, occupied, fp, derive_seed(seed, "forest"));
            write_forests(method, -1, forests);
            write_maps(method, -1, forests, target);
        }
        write_text_file(out_ / "models" / "classifier" / method / "steps.json",
                        Json({{"trained_steps", trained}}).dump(2) + "\n");
        record["outputs"] = {{"method", method}, {"trained_steps", trained}, {"feature_width", train_table.width}};
    }

    // ---- evaluation ----
    ConfusionMatrix evaluate_map(const std::string& method, int t, const std::vector<LabelRaster>& truth,
                                 const std::vector<std::vector<uint8_t>>& masks, bool* available) const {
        std::vector<std::string> names = {std::string(kBackgroundName)};
        names.insert(names.end(), classes_.begin(), classes_.end());
        ConfusionMatrix total(names, cfg_.strict);
        *available = fs::exists(map_path(method, t, 0));
        for (int p = 0; p < cfg_.patches; ++p) {
            LabelRaster pred(cfg_.patch_size, cfg_.patch_size, classes_, kUnknown);
            if (*available) {
                auto path = map_path(method, t, p);
                require_provenance(path, config_hash_);
                pred = read_labels(path);
            }
            ConfusionMatrix cm = confusion(pred, truth[size_t(p)], masks[size_t(p)], cfg_.strict);
            for (size_t i = 0; i < cm.size(); ++i)
                for (size_t j = 0; j <= cm.size(); ++j) total.at(i, j) += cm.at(i, j);
        }
        return total;
    }

    static Json matrix_json(const ConfusionMatrix& cm) {
        Json rows = Json::array();
        for (size_t i = 0; i < cm.size(); ++i) {
            Json r = Json::array();
            for (size_t j = 0; j <= cm.size(); ++j) r.push_back(cm.at(i, j));
            rows.push_back(r);
        }
        return rows;
    }

    static Json accuracy_json(const ConfusionMatrix& cm) {
        Json j;
        j["oa"] = oa(cm);
        for (size_t c = 0; c < cm.size(); ++c) {
            auto a = class_accuracy(cm, c);
            j["classes"][cm.classes()[c]] = {{"ua", a.ua}, {"pa", a.pa}, {"f1", a.f1}, {"degenerate", a.degenerate}};
        }
        j["confusion"] = matrix_json(cm);
        return j;
    }

    void evaluate(Json& record) {
        std::vector<LabelRaster> truth;
        std::vector<std::vector<uint8_t>> masks;
        for (int p = 0; p < cfg_.patches; ++p) {
            truth.push_back(load_truth(cfg_.target_year, p));
            std::vector<uint8_t> m(truth.back().pixel_count(), 0);
            for (uint32_t px : eval_pixels(p)) m[px] = 1;
            masks.push_back(std::move(m));
        }
        std::vector<std::string> names = {std::string(kBackgroundName)};
        names.insert(names.end(), classes_.begin(), classes_.end());

        ComparisonReport report;
        report.threshold = cfg_.oa_threshold;
        Json summary;
        summary["target_year"] = cfg_.target_year;
        summary["strict"] = cfg_.strict;
        summary["oa_threshold"] = cfg_.oa_threshold;
        summary["eval_points_per_patch"] = cfg_.eval_points_per_patch;
        std::vector<std::string> curve_methods = {"main"};
        if (fs::exists(out_ / "maps" / "boundary")) curve_methods.push_back("boundary");
        for (const auto& method : curve_methods) {
            AccuracyCurve curve{method, names, {}};
            Json points = Json::array();
            for (int t = 0; t <= final_step(); ++t) {
                bool available = false;
                ConfusionMatrix cm = evaluate_map(method, t, truth, masks, &available);
                curve.points.push_back(curve_point(t, steps_[size_t(t)].doy_end, cm, available));
                Json pt = accuracy_json(cm);
                pt["step"] = t;
                pt["doy"] = steps_[size_t(t)].doy_end;
                pt["classified"] = available;
                points.push_back(pt);
            }
            auto series = curve.oa_series();
            auto earliest = earliest_date(series, cfg_.oa_threshold);
            summary["methods"][method] = {{"curve", points},
                                          {"best_oa", curve.best_oa()},
                                          {"earliest_step", earliest ? Json(*earliest) : Json(nullptr)}};
            if (method == "main") report.main = std::move(curve);
            else report.baselines.push_back(std::move(curve));
        }
        for (const std::string method : {"postseason", "harmonic"}) {
            if (!fs::exists(out_ / "maps" / method)) continue;
            bool available = false;
            ConfusionMatrix cm = evaluate_map(method, -1, truth, masks, &available);
            summary["methods"][method] = accuracy_json(cm);
        }
        // Season-end baselines appear in the aligned CSV only as summary lines.
        std::string text = report.text();
        for (const std::string method : {"postseason", "harmonic"})
            if (summary["methods"].contains(method)) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "season-end OA %s %.3f\n", method.c_str(),
                              summary["methods"][method]["oa"].get<double>());
                text += buf;
            }
        write_text_file(report_dir() / "curves.csv", report.csv());
        write_text_file(report_dir() / "report.txt", text);
        write_text_file(report_dir() / "summary.json", summary.dump(2) + "\n");
        std::fputs(text.c_str(), stdout);
        record["outputs"] = {{"report", (report_dir() / "report.txt").string()}};
    }
};

}  // namespace topolabel
