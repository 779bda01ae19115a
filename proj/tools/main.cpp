// Command-line surface: invert, edit, eval, ablate, toy-train. One structured
// config file drives everything; flags override config fields.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "locinv/config.hpp"
#include "locinv/errors.hpp"
#include "locinv/image_io.hpp"
#include "locinv/manifest.hpp"
#include "locinv/p2p.hpp"
#include "locinv/pipeline.hpp"
#include "locinv/runner.hpp"
#include "locinv/serialize.hpp"
#include "locinv/toy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace locinv;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
    std::string config_path;
    std::string output_dir;
    std::string manifest_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int steps = 0;
    double guidance = 0;
    std::string checkpoint;
    bool trace = false;
    int jobs = 0;
};

RunConfig load_config(const CommonFlags& flags) {
    RunConfig cfg = flags.config_path.empty() ? RunConfig() : RunConfig::from_json_file(flags.config_path);
    if (!flags.output_dir.empty()) cfg.output_dir = flags.output_dir;
    if (!flags.manifest_path.empty()) cfg.manifest_path = flags.manifest_path;
    if (flags.seed_set) cfg.seed = flags.seed;
    if (flags.steps > 0) cfg.pipeline.sampler.steps = flags.steps;
    if (flags.guidance > 0) cfg.pipeline.sampler.guidance_scale = flags.guidance;
    if (!flags.checkpoint.empty()) cfg.adapter.checkpoint = flags.checkpoint;
    if (flags.trace) cfg.trace = true;
    if (flags.jobs > 0) cfg.jobs = flags.jobs;
    cfg.pipeline.validate();
    return cfg;
}

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "Run configuration JSON file");
    cmd->add_option("--output", flags.output_dir, "Output directory");
    cmd->add_option("--manifest", flags.manifest_path, "Dataset manifest JSON");
    cmd->add_option("--seed", flags.seed, "Random seed")->each([&flags](const std::string&) {
        flags.seed_set = true;
    });
    cmd->add_option("--steps", flags.steps, "DDIM steps (T)");
    cmd->add_option("--guidance", flags.guidance, "Guidance scale w");
    cmd->add_option("--checkpoint", flags.checkpoint, "Adapter weights blob");
    cmd->add_flag("--trace", flags.trace, "Write per-iteration loss trace (JSON lines)");
    cmd->add_option("--jobs", flags.jobs, "Worker pool size for batch stages");
}

std::map<int, std::string> mask_paths_from_json(const std::string& path,
                                                const PromptAnnotation& ann,
                                                const Tokenizer& tokenizer,
                                                const std::string& prompt) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open mask list: " + path);
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw DataError("mask list must be a JSON object {noun: path}: " + path);
    auto spans = tokenizer.token_spans(prompt);
    std::istringstream ps(prompt);
    std::vector<std::string> words;
    std::string w;
    while (ps >> w) words.push_back(w);

    std::map<int, std::string> out;
    fs::path base = fs::path(path).parent_path();
    for (const auto& [noun, mask] : j.items()) {
        int pos = -1;
        for (size_t i = 0; i < words.size(); ++i)
            if (words[i] == noun) pos = spans[i].first;
        if (pos < 0) throw DataError("mask list: noun \"" + noun + "\" not in prompt");
        fs::path m = mask.get<std::string>();
        out[pos] = m.is_absolute() ? m.string() : (base / m).string();
    }
    (void)ann;
    return out;
}

std::map<int, NormalizedBox> boxes_from_json(const std::string& path, const Tokenizer& tokenizer,
                                             const std::string& prompt) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open box list: " + path);
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded() || !j.is_array())
        throw DataError("box list must be a JSON array of {noun, box}: " + path);
    auto spans = tokenizer.token_spans(prompt);
    std::istringstream ps(prompt);
    std::vector<std::string> words;
    std::string w;
    while (ps >> w) words.push_back(w);

    std::map<int, NormalizedBox> out;
    for (const auto& item : j) {
        std::string noun = item.at("noun").get<std::string>();
        auto b = item.at("box").get<std::vector<double>>();
        if (b.size() != 4) throw DataError("box list: box needs 4 values");
        int pos = -1;
        for (size_t i = 0; i < words.size(); ++i)
            if (words[i] == noun) pos = spans[i].first;
        if (pos < 0) throw DataError("box list: noun \"" + noun + "\" not in prompt");
        NormalizedBox box{b[0], b[1], b[2], b[3]};
        box.validate();
        out[pos] = box;
    }
    return out;
}

int cmd_invert(const CommonFlags& flags, const std::string& image_path, const std::string& prompt,
               const std::string& masks_path, const std::string& boxes_path,
               const std::string& annotation_path) {
    RunConfig cfg = load_config(flags);
    auto adapter = make_adapter(cfg.adapter);
    NoiseSchedule sched =
        NoiseSchedule::scaled_linear(adapter->spec().train_timesteps, cfg.pipeline.sampler.steps);

    std::optional<ManualAnnotation> manual;
    if (!annotation_path.empty()) manual = load_manual_annotation(annotation_path);
    RuleTagger tagger;
    PromptAnnotation ann = annotate(prompt, adapter->tokenizer(), tagger, manual);

    int r = resolve_attention_resolution(adapter->spec(), cfg.pipeline);
    LocalizationPrior prior =
        !masks_path.empty()
            ? load_prior_from_masks(mask_paths_from_json(masks_path, ann, adapter->tokenizer(), prompt),
                                    ann, r)
            : load_prior_from_boxes(boxes_from_json(boxes_path, adapter->tokenizer(), prompt), ann, r);

    PipelineConfig pcfg = cfg.pipeline;
    if (!cfg.loss_specified) pcfg.loss = cfg.loss_for(prior.source_kind);

    Tensor image = read_image(image_path);
    fs::create_directories(cfg.output_dir + "/attn");
    std::unique_ptr<TraceSink> trace;
    struct FileTrace : TraceSink {
        std::ofstream os;
        explicit FileTrace(const std::string& p) : os(p) {}
        void on_iteration(const TraceEvent& e) override {
            os << json{{"t", e.t},         {"iter", e.iter},     {"l_sim", e.l_sim},
                       {"l_ovl", e.l_ovl}, {"l_adj", e.l_adj},   {"l_total", e.l_total},
                       {"th_sim", e.th_sim}, {"th_ovl", e.th_ovl}, {"th_adj", e.th_adj}}
                      .dump()
               << "\n";
        }
    };
    if (cfg.trace) trace = std::make_unique<FileTrace>(cfg.output_dir + "/trace.jsonl");

    InversionResult result = invert(*adapter, sched, image, ann, prior, pcfg, trace.get());
    result.config_json = cfg.to_json();
    save_result(cfg.output_dir + "/inversion", result);
    char name[32];
    for (int t = 1; t <= result.T; ++t) {
        std::snprintf(name, sizeof(name), "/attn/t%04d.bin", t);
        write_snapshot(cfg.output_dir + name, result.attention[static_cast<size_t>(t) - 1]);
    }
    {
        std::ofstream cs(cfg.output_dir + "/config.json");
        cs << cfg.to_json() << "\n";
    }

    std::cout << "inversion written to " << cfg.output_dir << "\n";
    std::cout << "  t  iters  converged  L_sim      L_ovl      L_adj\n";
    for (int t = result.T; t >= 1; --t) {
        const LossReport& r2 = result.loss_reports[static_cast<size_t>(t) - 1];
        std::printf("%4d %6d %10s  %-10.5f %-10.5f %-10.5f\n", t, r2.iterations_used,
                    r2.converged ? "yes" : "no", r2.l_sim, r2.l_ovl, r2.l_adj);
    }
    return 0;
}

int cmd_edit(const CommonFlags& flags, const std::string& run_dir, const std::string& task_file) {
    RunConfig cfg = load_config(flags);
    auto adapter = make_adapter(cfg.adapter);
    InversionResult result = load_result(run_dir + "/inversion");
    NoiseSchedule sched = NoiseSchedule::scaled_linear(adapter->spec().train_timesteps, result.T);

    std::ifstream is(task_file);
    if (!is) throw DataError("cannot open task file: " + task_file);
    json tasks = json::parse(is, nullptr, false);
    if (tasks.is_discarded()) throw DataError("invalid task JSON: " + task_file);
    if (tasks.is_object()) tasks = json::array({tasks});

    fs::create_directories(cfg.output_dir);
    int index = 0;
    for (const auto& t : tasks) {
        EditSpec spec;
        spec.source_word = t.at("source_word").get<std::string>();
        spec.target_word = t.at("target_word").get<std::string>();
        spec.target_prompt = t.at("target_prompt").get<std::string>();
        spec.blend_with_prior = t.value("blend", false);
        if (t.contains("occurrence")) spec.occurrence = t["occurrence"].get<int>();
        std::string kind = t.value("kind", "word_swap");
        spec.kind = kind == "attribute_edit" ? EditSpec::Kind::AttributeEdit : EditSpec::Kind::WordSwap;

        LocalizationPrior prior;
        const LocalizationPrior* prior_ptr = nullptr;
        if (spec.blend_with_prior) {
            if (!t.contains("masks"))
                throw DataError("task with blend=true needs a \"masks\" object {noun: path}");
            std::map<int, std::string> paths;
            fs::path base = fs::path(task_file).parent_path();
            auto spans = adapter->tokenizer().token_spans(result.annotation.prompt_text);
            std::istringstream ps(result.annotation.prompt_text);
            std::vector<std::string> words;
            std::string w;
            while (ps >> w) words.push_back(w);
            for (const auto& [noun, mask] : t["masks"].items()) {
                int pos = -1;
                for (size_t i = 0; i < words.size(); ++i)
                    if (words[i] == noun) pos = spans[i].first;
                if (pos < 0) throw DataError("task masks: noun \"" + noun + "\" not in prompt");
                fs::path m = mask.get<std::string>();
                paths[pos] = m.is_absolute() ? m.string() : (base / m).string();
            }
            int r = resolve_attention_resolution(adapter->spec(), cfg.pipeline);
            prior = load_prior_from_masks(paths, result.annotation, r);
            prior_ptr = &prior;
        }

        EditResult er = spec.kind == EditSpec::Kind::AttributeEdit
                            ? attribute_edit(result, spec, cfg.p2p, *adapter, sched, prior_ptr)
                            : edit(result, spec, cfg.p2p, *adapter, sched, prior_ptr);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "task_%02d", index);
        write_ppm(cfg.output_dir + "/" + stem + "_edited.ppm", er.edited_image);
        write_ppm(cfg.output_dir + "/" + stem + "_reconstruction.ppm", er.source_image);
        json meta{{"source_word", spec.source_word},
                  {"target_word", spec.target_word},
                  {"target_prompt", spec.target_prompt},
                  {"kind", kind},
                  {"blend", spec.blend_with_prior}};
        std::ofstream ms(cfg.output_dir + "/" + stem + "_metadata.json");
        ms << meta.dump(2) << "\n";
        std::cout << stem << ": " << spec.source_word << " -> " << spec.target_word << "\n";
        index += 1;
    }
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::vector<std::string>& run_dirs) {
    RunConfig cfg = load_config(flags);
    if (cfg.manifest_path.empty()) throw UsageError("eval needs --manifest (or manifest in config)");
    DatasetManifest manifest = DatasetManifest::load(cfg.manifest_path);
    std::string out = cfg.output_dir;
    EvalOutput eo = evaluate_runs(run_dirs, manifest, cfg, out);
    for (const auto& m : eo.methods)
        std::printf("%-24s auc %.4f  peak %.4f  curves %d  skipped %d\n", m.method.c_str(), m.auc,
                    m.peak, m.curves, m.skipped_entries);
    std::cout << "report: " << out << "/report.json, curves: " << out << "/curves.csv\n";
    return 0;
}

int cmd_batch_stage(const CommonFlags& flags, const std::string& stages_csv) {
    RunConfig cfg = load_config(flags);
    if (cfg.manifest_path.empty()) throw UsageError("batch stages need --manifest");
    DatasetManifest manifest = DatasetManifest::load(cfg.manifest_path);
    BatchReport report = run_batch(manifest, cfg, parse_stages(stages_csv));
    std::printf("batch: %zu entries, %d cached, %d failed -> %s\n", report.entries.size(),
                report.cached(), report.failed(), report.run_dir.c_str());
    for (const auto& e : report.entries)
        if (!e.error.empty()) std::printf("  %s FAILED: %s\n", e.id.c_str(), e.error.c_str());
    return report.failed() == 0 ? 0 : kExitData;
}

// Grid spec: "key=v1,v2;key2=v3,v4" over loss-config fields.
struct GridAxis {
    std::string key;
    std::vector<double> values;
};

std::vector<GridAxis> parse_grid(const std::string& spec) {
    static const std::set<std::string> valid = {
        "lambda_sim", "alpha_sim", "beta_sim", "lambda_ovl", "alpha_ovl", "beta_ovl",
        "lambda_adj", "alpha_adj", "beta_adj", "max_inner_iters", "step_size"};
    std::vector<GridAxis> axes;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ';')) {
        if (part.empty()) continue;
        size_t eq = part.find('=');
        if (eq == std::string::npos) throw UsageError("grid: expected key=v1,v2 in \"" + part + "\"");
        GridAxis axis;
        axis.key = part.substr(0, eq);
        if (!valid.count(axis.key)) {
            std::string names;
            for (const auto& v : valid) names += (names.empty() ? "" : ", ") + v;
            throw UsageError("grid: unknown key \"" + axis.key + "\"; valid keys: " + names);
        }
        std::stringstream vs(part.substr(eq + 1));
        std::string v;
        while (std::getline(vs, v, ',')) axis.values.push_back(std::stod(v));
        if (axis.values.empty()) throw UsageError("grid: no values for " + axis.key);
        axes.push_back(std::move(axis));
    }
    if (axes.empty()) throw UsageError("grid: empty specification");
    return axes;
}

void apply_grid_value(LossConfig& loss, const std::string& key, double value) {
    if (key == "lambda_sim") loss.sim.lambda = value;
    else if (key == "alpha_sim") loss.sim.alpha = value;
    else if (key == "beta_sim") loss.sim.beta = value;
    else if (key == "lambda_ovl") loss.ovl.lambda = value;
    else if (key == "alpha_ovl") loss.ovl.alpha = value;
    else if (key == "beta_ovl") loss.ovl.beta = value;
    else if (key == "lambda_adj") loss.adj.lambda = value;
    else if (key == "alpha_adj") loss.adj.alpha = value;
    else if (key == "beta_adj") loss.adj.beta = value;
    else if (key == "max_inner_iters") loss.max_inner_iters = static_cast<int>(value);
    else if (key == "step_size") loss.step_size = value;
}

int cmd_ablate(const CommonFlags& flags, const std::string& grid_spec) {
    RunConfig base = load_config(flags);
    if (base.manifest_path.empty()) throw UsageError("ablate needs --manifest");
    DatasetManifest manifest = DatasetManifest::load(base.manifest_path);
    std::vector<GridAxis> axes = parse_grid(grid_spec);

    size_t cells = 1;
    for (const auto& a : axes) cells *= a.values.size();
    fs::create_directories(base.output_dir);
    std::ofstream table(base.output_dir + "/ablation.csv");
    table << "cell";
    for (const auto& a : axes) table << "," << a.key;
    table << ",auc,peak\n";

    for (size_t cell = 0; cell < cells; ++cell) {
        RunConfig cfg = base;
        if (!cfg.loss_specified) {
            cfg.pipeline.loss = LossConfig::defaults_for(PriorSource::Segmentation);
            cfg.loss_specified = true;
        }
        size_t rest = cell;
        std::vector<double> cell_values;
        for (const auto& a : axes) {
            double v = a.values[rest % a.values.size()];
            rest /= a.values.size();
            apply_grid_value(cfg.pipeline.loss, a.key, v);
            cell_values.push_back(v);
        }
        char cell_name[32];
        std::snprintf(cell_name, sizeof(cell_name), "cell_%03zu", cell);
        cfg.output_dir = base.output_dir + "/" + cell_name;

        run_batch(manifest, cfg, {Stage::Invert}, 0);
        EvalOutput eo = evaluate_runs({cfg.output_dir}, manifest, cfg, cfg.output_dir);
        table << cell_name;
        for (double v : cell_values) table << "," << v;
        table << "," << eo.methods[0].auc << "," << eo.methods[0].peak << "\n";
        table.flush();
        std::printf("%s: auc %.4f peak %.4f\n", cell_name, eo.methods[0].auc, eo.methods[0].peak);
    }
    std::cout << "ablation table: " << base.output_dir << "/ablation.csv\n";
    return 0;
}

int cmd_toy_train(const CommonFlags& flags, const std::string& out_path, int steps, int batch,
                  double lr, double attn_reg, const std::string& fixtures_dir) {
    ToyTrainConfig cfg;
    if (flags.seed_set) cfg.seed = flags.seed;
    if (steps > 0) cfg.steps = steps;
    if (batch > 0) cfg.batch = batch;
    if (lr > 0) cfg.lr = lr;
    if (attn_reg >= 0) cfg.attn_reg = attn_reg;

    if (!out_path.empty()) {
        NetworkWeights weights = train_toy(cfg, &std::cout);
        fs::create_directories(fs::path(out_path).parent_path().empty()
                                   ? "."
                                   : fs::path(out_path).parent_path().string());
        save_network(out_path, weights);
        std::cout << "weights blob: " << out_path << " (checksum "
                  << checksum_hex(file_checksum(out_path)) << ")\n";
    }
    if (!fixtures_dir.empty()) {
        write_toy_fixtures(fixtures_dir, flags.seed_set ? flags.seed : 7);
        std::cout << "fixtures: " << fixtures_dir << "/manifest.json\n";
    }
    if (out_path.empty() && fixtures_dir.empty())
        throw UsageError("toy-train: nothing to do (use --out and/or --fixtures)");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Localization-aware inversion and text-guided editing for latent diffusion models"};
    app.require_subcommand(1);

    CommonFlags flags;

    auto* invert_cmd = app.add_subcommand("invert", "Invert an image with localization priors");
    std::string image_path, prompt, masks_path, boxes_path, annotation_path;
    add_common_flags(invert_cmd, flags);
    invert_cmd->add_option("--image", image_path, "Input image (PPM)")->required();
    invert_cmd->add_option("--prompt", prompt, "Source prompt")->required();
    auto* masks_opt = invert_cmd->add_option("--masks", masks_path, "JSON object {noun: mask path}");
    auto* boxes_opt = invert_cmd->add_option("--boxes", boxes_path, "JSON array of {noun, box}");
    invert_cmd->add_option("--annotation", annotation_path, "Manual annotation JSON");
    masks_opt->excludes(boxes_opt);

    auto* edit_cmd = app.add_subcommand("edit", "Apply prompt edits to an inversion run");
    std::string run_dir, task_file;
    add_common_flags(edit_cmd, flags);
    edit_cmd->add_option("--run", run_dir, "Inversion run directory")->required();
    edit_cmd->add_option("--task-file", task_file, "Edit task JSON")->required();

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate one or more runs");
    std::vector<std::string> run_dirs;
    add_common_flags(eval_cmd, flags);
    eval_cmd->add_option("--run", run_dirs, "Run directory (repeatable)")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "Hyperparameter grid sweep");
    std::string grid_spec;
    add_common_flags(ablate_cmd, flags);
    ablate_cmd->add_option("--grid", grid_spec, "Grid spec: key=v1,v2;key2=v3,v4")->required();

    auto* batch_cmd = app.add_subcommand("batch", "Run manifest stages (invert,edit,eval)");
    std::string stages_csv = "invert,edit,eval";
    add_common_flags(batch_cmd, flags);
    batch_cmd->add_option("--stages", stages_csv, "Comma-separated stages");

    auto* toy_cmd = app.add_subcommand("toy-train", "Train the toy backend and emit fixtures");
    std::string toy_out, fixtures_dir;
    int toy_steps = 0, toy_batch = 0;
    double toy_lr = 0, toy_attn_reg = -1;
    add_common_flags(toy_cmd, flags);
    toy_cmd->add_option("--out", toy_out, "Weights blob output path");
    toy_cmd->add_option("--train-steps", toy_steps, "Optimization steps");
    toy_cmd->add_option("--batch", toy_batch, "Batch size");
    toy_cmd->add_option("--lr", toy_lr, "Learning rate");
    toy_cmd->add_option("--attn-reg", toy_attn_reg, "Attention regularizer weight");
    toy_cmd->add_option("--fixtures", fixtures_dir, "Write the bundled evaluation split here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (invert_cmd->parsed()) {
            if (masks_path.empty() == boxes_path.empty())
                throw UsageError("invert needs exactly one of --masks or --boxes");
            return cmd_invert(flags, image_path, prompt, masks_path, boxes_path, annotation_path);
        }
        if (edit_cmd->parsed()) return cmd_edit(flags, run_dir, task_file);
        if (eval_cmd->parsed()) return cmd_eval(flags, run_dirs);
        if (ablate_cmd->parsed()) return cmd_ablate(flags, grid_spec);
        if (batch_cmd->parsed()) return cmd_batch_stage(flags, stages_csv);
        if (toy_cmd->parsed())
            return cmd_toy_train(flags, toy_out, toy_steps, toy_batch, toy_lr, toy_attn_reg,
                                 fixtures_dir);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
