#include "locinv/runner.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "locinv/errors.hpp"
#include "locinv/image_io.hpp"
#include "locinv/p2p.hpp"
#include "locinv/pipeline.hpp"

namespace locinv {

namespace fs = std::filesystem;
using nlohmann::json;

std::set<Stage> parse_stages(const std::string& csv) {
    std::set<Stage> stages;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "invert")
            stages.insert(Stage::Invert);
        else if (item == "edit")
            stages.insert(Stage::Edit);
        else if (item == "eval")
            stages.insert(Stage::Eval);
        else
            throw UsageError("unknown stage \"" + item + "\" (expected invert, edit, eval)");
    }
    if (stages.empty()) throw UsageError("no stages requested");
    return stages;
}

int BatchReport::failed() const {
    int n = 0;
    for (const auto& e : entries) n += !e.error.empty();
    return n;
}

int BatchReport::cached() const {
    int n = 0;
    for (const auto& e : entries) n += e.cached;
    return n;
}

PromptAnnotation entry_annotation(const ManifestEntry& entry, const Tokenizer& tokenizer) {
    ManualAnnotation manual;
    for (const auto& n : entry.nouns) manual.nouns.push_back(n.word);
    manual.pairs = entry.adjective_pairs;
    RuleTagger tagger;  // unused when manual annotation is present
    return annotate(entry.prompt, tokenizer, tagger, manual);
}

LocalizationPrior entry_prior(const DatasetManifest& manifest, const ManifestEntry& entry,
                              const PromptAnnotation& ann, int resolution) {
    std::map<int, Tensor> grids;
    bool any_box = false;
    for (size_t i = 0; i < entry.nouns.size(); ++i) {
        int pos = ann.noun_positions[i];
        const ManifestNoun& noun = entry.nouns[i];
        if (noun.box) {
            grids.emplace(pos, rasterize_box(*noun.box, resolution));
            any_box = true;
        } else {
            Tensor img = read_mask_image(manifest.resolve(noun.mask_path));
            Tensor grid({img.shape[1], img.shape[2]});
            for (int64_t k = 0; k < grid.numel(); ++k) grid[k] = img.data[static_cast<size_t>(k)];
            grids.emplace(pos, std::move(grid));
        }
    }
    return make_prior(grids, ann, resolution,
                      any_box ? PriorSource::Detection : PriorSource::Segmentation);
}

namespace {

class JsonlTraceSink : public TraceSink {
public:
    explicit JsonlTraceSink(const std::string& path) : os_(path) {
        if (!os_) throw DataError("cannot open trace file: " + path);
    }
    void on_iteration(const TraceEvent& e) override {
        json j{{"t", e.t},           {"iter", e.iter},     {"l_sim", e.l_sim},
               {"l_ovl", e.l_ovl},   {"l_adj", e.l_adj},   {"l_total", e.l_total},
               {"th_sim", e.th_sim}, {"th_ovl", e.th_ovl}, {"th_adj", e.th_adj}};
        os_ << j.dump() << "\n";
    }

private:
    std::ofstream os_;
};

bool has_cached_inversion(const std::string& entry_dir) {
    if (!fs::exists(entry_dir + "/inversion/manifest.json")) return false;
    try {
        load_result(entry_dir + "/inversion");
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

std::string derive_target_prompt(const std::string& prompt, const std::string& source_word,
                                 const std::string& target_word) {
    std::istringstream is(prompt);
    std::ostringstream os;
    std::string w;
    bool first = true, replaced = false;
    while (is >> w) {
        std::string lower = w;
        for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (!first) os << " ";
        if (!replaced && lower == source_word) {
            os << target_word;
            replaced = true;
        } else {
            os << w;
        }
        first = false;
    }
    return os.str();
}

json metric_values_json(const ImageMetricValues& v) {
    json j{{"mse", v.mse}, {"ssim", v.ssim}};
    if (std::isinf(v.psnr))
        j["psnr"] = "+inf";
    else
        j["psnr"] = v.psnr;
    return j;
}

struct EntryWork {
    const DatasetManifest* manifest;
    const RunConfig* config;
    const std::set<Stage>* stages;
    std::shared_ptr<ModelAdapter> adapter;
    NoiseSchedule sched;
    std::string run_dir;

    EntryStatus process(const ManifestEntry& entry) const {
        EntryStatus status;
        status.id = entry.id;
        std::string entry_dir = run_dir + "/entries/" + entry.id;
        try {
            int r = resolve_attention_resolution(adapter->spec(), config->pipeline);
            PromptAnnotation ann = entry_annotation(entry, adapter->tokenizer());
            LocalizationPrior prior = entry_prior(*manifest, entry, ann, r);

            if (stages->count(Stage::Invert)) {
                if (has_cached_inversion(entry_dir)) {
                    status.cached = true;
                } else {
                    fs::create_directories(entry_dir + "/attn");
                    PipelineConfig pcfg = config->pipeline;
                    pcfg.loss = config->loss_for(prior.source_kind);
                    Tensor image = read_image(manifest->resolve(entry.image_path));
                    std::unique_ptr<JsonlTraceSink> trace;
                    if (config->trace)
                        trace = std::make_unique<JsonlTraceSink>(entry_dir + "/trace.jsonl");
                    InversionResult result =
                        invert(*adapter, sched, image, ann, prior, pcfg, trace.get());
                    result.config_json = config->to_json();
                    save_result(entry_dir + "/inversion", result);
                    char name[32];
                    for (int t = 1; t <= result.T; ++t) {
                        std::snprintf(name, sizeof(name), "/attn/t%04d.bin", t);
                        write_snapshot(entry_dir + name, result.attention[static_cast<size_t>(t) - 1]);
                    }
                }
            }

            if (stages->count(Stage::Edit)) {
                if (entry.edit_source.empty())
                    throw DataError("entry " + entry.id + " has no edit task");
                InversionResult result = load_result(entry_dir + "/inversion");
                EditSpec spec;
                spec.source_word = entry.edit_source;
                spec.target_word = entry.edit_target;
                spec.target_prompt =
                    derive_target_prompt(entry.prompt, entry.edit_source, entry.edit_target);
                spec.blend_with_prior = true;
                bool is_attribute = false;
                for (const auto& [adj, noun] : entry.adjective_pairs)
                    if (adj == entry.edit_source) is_attribute = true;
                spec.kind = is_attribute ? EditSpec::Kind::AttributeEdit : EditSpec::Kind::WordSwap;

                EditResult edited =
                    is_attribute
                        ? attribute_edit(result, spec, config->p2p, *adapter, sched, &prior)
                        : edit(result, spec, config->p2p, *adapter, sched, &prior);
                fs::create_directories(entry_dir + "/edits");
                write_ppm(entry_dir + "/edits/edited.ppm", edited.edited_image);
                write_ppm(entry_dir + "/edits/reconstruction.ppm", edited.source_image);
                json meta{{"source_word", spec.source_word},
                          {"target_word", spec.target_word},
                          {"target_prompt", spec.target_prompt},
                          {"kind", is_attribute ? "attribute_edit" : "word_swap"},
                          {"blend", spec.blend_with_prior}};
                std::ofstream ms(entry_dir + "/edits/metadata.json");
                ms << meta.dump(2) << "\n";
            }
        } catch (const std::exception& e) {
            status.error = e.what();
        }
        return status;
    }
};

}  // namespace

BatchReport run_batch(const DatasetManifest& manifest, const RunConfig& config,
                      const std::set<Stage>& stages, int jobs_override) {
    BatchReport report;
    report.run_dir = config.output_dir;
    fs::create_directories(config.output_dir + "/entries");
    {
        std::ofstream cs(config.output_dir + "/config.json");
        cs << config.to_json() << "\n";
        if (!cs) throw DataError("cannot write run config snapshot");
    }

    EntryWork work;
    work.manifest = &manifest;
    work.config = &config;
    work.stages = &stages;
    work.adapter = make_adapter(config.adapter);
    work.sched = NoiseSchedule::scaled_linear(work.adapter->spec().train_timesteps,
                                              config.pipeline.sampler.steps);
    work.run_dir = config.output_dir;

    int jobs = jobs_override > 0 ? jobs_override : config.jobs;
    jobs = std::max(1, std::min<int>(jobs, static_cast<int>(manifest.entries.size())));
    report.entries.resize(manifest.entries.size());

    if (jobs <= 1) {
        for (size_t i = 0; i < manifest.entries.size(); ++i)
            report.entries[i] = work.process(manifest.entries[i]);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                while (true) {
                    size_t i = next.fetch_add(1);
                    if (i >= manifest.entries.size()) break;
                    report.entries[i] = work.process(manifest.entries[i]);
                }
            });
        for (auto& th : pool) th.join();
    }

    if (stages.count(Stage::Eval)) evaluate_runs({config.output_dir}, manifest, config, config.output_dir);
    return report;
}

namespace {

// Attention dumps for one entry reduced to per-noun normalized maps.
std::vector<TokenMap> entry_token_maps(const std::string& entry_dir, const PromptAnnotation& ann,
                                       const EvalConfig& eval, int T) {
    std::vector<TokenMap> out;
    char name[32];
    int k = std::min(eval.final_k, T);
    if (eval.timestep_policy == TimestepPolicy::MeanOverFinalK) {
        AttentionSnapshot mean_snap;
        int found = 0;
        for (int t = 1; t <= k; ++t) {
            std::snprintf(name, sizeof(name), "/attn/t%04d.bin", t);
            if (!fs::exists(entry_dir + name)) continue;
            AttentionSnapshot snap = read_snapshot(entry_dir + name);
            if (found == 0)
                mean_snap = snap;
            else
                mean_snap.maps = mean_snap.maps + snap.maps;
            found += 1;
        }
        if (found == 0) throw DataError("no attention dumps under " + entry_dir);
        mean_snap.maps = (1.0 / found) * mean_snap.maps;
        for (int p : ann.noun_positions) out.push_back(token_map(mean_snap, p, /*normalize=*/true));
    } else {
        for (int t = 1; t <= k; ++t) {
            std::snprintf(name, sizeof(name), "/attn/t%04d.bin", t);
            if (!fs::exists(entry_dir + name)) continue;
            AttentionSnapshot snap = read_snapshot(entry_dir + name);
            for (int p : ann.noun_positions) out.push_back(token_map(snap, p, /*normalize=*/true));
        }
        if (out.empty()) throw DataError("no attention dumps under " + entry_dir);
    }
    return out;
}

// The mask gating background metrics: the edited noun, or the governed noun
// when an adjective was edited.
std::string noun_word_for_edit(const ManifestEntry& entry) {
    if (entry.edit_source.empty()) return entry.nouns.front().word;
    for (const auto& n : entry.nouns)
        if (n.word == entry.edit_source) return n.word;
    for (const auto& [adj, noun] : entry.adjective_pairs)
        if (adj == entry.edit_source) return noun;
    return entry.nouns.front().word;
}

Tensor image_resolution_mask(const DatasetManifest& manifest, const ManifestEntry& entry,
                             const std::string& word, int image_size) {
    for (const auto& noun : entry.nouns) {
        if (noun.word != word) continue;
        if (noun.box) {
            Tensor m = rasterize_box(*noun.box, image_size);
            return m;
        }
        Tensor img = read_mask_image(manifest.resolve(noun.mask_path));
        Tensor grid({img.shape[1], img.shape[2]});
        for (int64_t i = 0; i < grid.numel(); ++i) grid[i] = img.data[static_cast<size_t>(i)];
        return resize_mask_nearest(grid, image_size);
    }
    return Tensor();
}

}  // namespace

EvalOutput evaluate_runs(const std::vector<std::string>& run_dirs, const DatasetManifest& manifest,
                         const RunConfig& config, const std::string& out_dir) {
    if (run_dirs.empty()) throw UsageError("evaluate_runs: no run directories");
    auto adapter = make_adapter(config.adapter);
    int image_size = adapter->spec().image_size;

    EvalOutput out;
    json report;
    report["runs"] = run_dirs;
    json per_method = json::array();

    int expected_resolution = -1;
    for (const auto& run_dir : run_dirs) {
        std::string method = fs::path(run_dir).filename().string();
        if (method.empty()) method = run_dir;
        std::vector<IoUCurve> curves;
        int skipped = 0;

        json entries_json = json::array();
        std::vector<ImageMetricValues> full_acc;
        std::vector<ImageMetricValues> bg_acc;

        for (const auto& entry : manifest.entries) {
            std::string entry_dir = run_dir + "/entries/" + entry.id;
            json ej{{"id", entry.id}};
            try {
                InversionResult stored = load_result(entry_dir + "/inversion");
                const PromptAnnotation& ann = stored.annotation;
                auto maps = entry_token_maps(entry_dir, ann, config.eval, stored.T);
                int r = maps.front().grid.shape[0];
                if (expected_resolution < 0) expected_resolution = r;
                if (r != expected_resolution)
                    throw DataError("attention resolution mismatch across runs: " +
                                    std::to_string(r) + " vs " + std::to_string(expected_resolution));
                LocalizationPrior prior = entry_prior(manifest, entry, ann, r);
                for (const auto& m : maps)
                    curves.push_back(iou_curve(m, prior.mask_for(m.token_position)));
                ej["status"] = "ok";

                std::string edited_path = entry_dir + "/edits/edited.ppm";
                if (fs::exists(edited_path)) {
                    Tensor edited = read_image(edited_path);
                    Tensor reference = read_image(manifest.resolve(entry.image_path));
                    Tensor fg = image_resolution_mask(manifest, entry, noun_word_for_edit(entry),
                                                      image_size);
                    MetricReport mr = image_metrics(edited, reference, fg);
                    ej["metrics"] = json{{"full", metric_values_json(mr.full)}};
                    full_acc.push_back(mr.full);
                    if (mr.background) {
                        ej["metrics"]["background"] = metric_values_json(*mr.background);
                        bg_acc.push_back(*mr.background);
                    }
                }
            } catch (const DataError& e) {
                if (std::string(e.what()).find("resolution mismatch") != std::string::npos) throw;
                ej["status"] = "skipped";
                ej["warning"] = e.what();
                skipped += 1;
            }
            entries_json.push_back(ej);
        }

        MethodCurveSummary summary = summarize_curves(method, curves);
        summary.skipped_entries = skipped;
        out.methods.push_back(summary);

        json mj{{"method", method},
                {"auc", summary.auc},
                {"peak", summary.peak},
                {"curves", summary.curves},
                {"skipped_entries", skipped},
                {"entries", entries_json}};
        auto mean_of = [](const std::vector<ImageMetricValues>& acc) {
            ImageMetricValues m;
            if (acc.empty()) return m;
            scalar_t psnr_sum = 0;
            bool psnr_finite = true;
            for (const auto& v : acc) {
                m.mse += v.mse;
                m.ssim += v.ssim;
                if (std::isinf(v.psnr))
                    psnr_finite = false;
                else
                    psnr_sum += v.psnr;
            }
            m.mse /= static_cast<scalar_t>(acc.size());
            m.ssim /= static_cast<scalar_t>(acc.size());
            m.psnr = psnr_finite ? psnr_sum / static_cast<scalar_t>(acc.size())
                                 : std::numeric_limits<scalar_t>::infinity();
            return m;
        };
        if (!full_acc.empty()) {
            mj["aggregate_metrics"] = json{{"full", metric_values_json(mean_of(full_acc))}};
            if (!bg_acc.empty()) mj["aggregate_metrics"]["background"] = metric_values_json(mean_of(bg_acc));
        }
        per_method.push_back(mj);
    }
    report["methods"] = per_method;

    fs::create_directories(out_dir);
    {
        std::ofstream cs(out_dir + "/curves.csv");
        cs << "threshold,method,mean_iou\n";
        for (const auto& m : out.methods)
            for (size_t i = 0; i < m.thresholds.size(); ++i)
                cs << m.thresholds[i] << "," << m.method << "," << m.mean_iou[i] << "\n";
        if (!cs) throw DataError("cannot write curves.csv");
    }
    out.report_json = report.dump(2);
    {
        std::ofstream rs(out_dir + "/report.json");
        rs << out.report_json << "\n";
        if (!rs) throw DataError("cannot write report.json");
    }
    return out;
}

}  // namespace locinv
