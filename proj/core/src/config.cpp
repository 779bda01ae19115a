#include "locinv/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "locinv/errors.hpp"
#include "locinv/toy.hpp"

namespace locinv {

namespace fs = std::filesystem;
using nlohmann::json;

static void reject_unknown(const json& j, const std::set<std::string>& known,
                           const std::string& where) {
    for (const auto& [key, _] : j.items())
        if (!known.count(key))
            throw UsageError("config: unknown key \"" + key + "\" in " + where);
}

static ThresholdParams parse_threshold(const json& j, const std::string& where) {
    reject_unknown(j, {"lambda", "alpha", "beta"}, where);
    ThresholdParams p;
    if (j.contains("lambda")) p.lambda = j["lambda"].get<scalar_t>();
    if (j.contains("alpha")) p.alpha = j["alpha"].get<scalar_t>();
    if (j.contains("beta")) p.beta = j["beta"].get<scalar_t>();
    return p;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw UsageError("config: invalid JSON");
    RunConfig cfg;
    reject_unknown(j, {"adapter", "sampler", "loss", "pipeline", "p2p", "eval", "manifest",
                       "output_dir", "seed", "trace", "jobs"},
                   "config root");

    if (j.contains("adapter")) {
        const auto& a = j["adapter"];
        reject_unknown(a, {"kind", "checkpoint"}, "adapter");
        if (a.contains("kind")) cfg.adapter.kind = a["kind"].get<std::string>();
        if (a.contains("checkpoint")) cfg.adapter.checkpoint = a["checkpoint"].get<std::string>();
        if (cfg.adapter.kind != "toy" && cfg.adapter.kind != "checkpoint")
            throw UsageError("config: adapter.kind must be \"toy\" or \"checkpoint\"");
    }
    if (j.contains("sampler")) {
        const auto& s = j["sampler"];
        reject_unknown(s, {"guidance_scale", "steps"}, "sampler");
        if (s.contains("guidance_scale"))
            cfg.pipeline.sampler.guidance_scale = s["guidance_scale"].get<scalar_t>();
        if (s.contains("steps")) cfg.pipeline.sampler.steps = s["steps"].get<int>();
    }
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        reject_unknown(l, {"sim", "ovl", "adj", "max_inner_iters", "step_size", "prior_kind"}, "loss");
        LossConfig base = LossConfig::defaults_for(
            l.contains("prior_kind") && l["prior_kind"].get<std::string>() == "detection"
                ? PriorSource::Detection
                : PriorSource::Segmentation);
        cfg.pipeline.loss = base;
        if (l.contains("sim")) cfg.pipeline.loss.sim = parse_threshold(l["sim"], "loss.sim");
        if (l.contains("ovl")) cfg.pipeline.loss.ovl = parse_threshold(l["ovl"], "loss.ovl");
        if (l.contains("adj")) cfg.pipeline.loss.adj = parse_threshold(l["adj"], "loss.adj");
        if (l.contains("max_inner_iters")) cfg.pipeline.loss.max_inner_iters = l["max_inner_iters"].get<int>();
        if (l.contains("step_size")) cfg.pipeline.loss.step_size = l["step_size"].get<scalar_t>();
        cfg.loss_specified = true;
    }
    if (j.contains("pipeline")) {
        const auto& p = j["pipeline"];
        reject_unknown(p,
                       {"nti_inner_iters", "nti_step_size", "nti_early_exit", "adjective_binding",
                        "attention_resolution"},
                       "pipeline");
        if (p.contains("nti_inner_iters")) cfg.pipeline.nti_inner_iters = p["nti_inner_iters"].get<int>();
        if (p.contains("nti_step_size")) cfg.pipeline.nti_step_size = p["nti_step_size"].get<scalar_t>();
        if (p.contains("nti_early_exit")) cfg.pipeline.nti_early_exit = p["nti_early_exit"].get<scalar_t>();
        if (p.contains("adjective_binding")) cfg.pipeline.adjective_binding = p["adjective_binding"].get<bool>();
        if (p.contains("attention_resolution"))
            cfg.pipeline.attention_resolution = p["attention_resolution"].get<int>();
    }
    if (j.contains("p2p")) {
        const auto& p = j["p2p"];
        reject_unknown(p,
                       {"cross_replace_fraction", "self_replace_fraction", "transfer_dynamic_tokens",
                        "local_blend_positions"},
                       "p2p");
        if (p.contains("cross_replace_fraction"))
            cfg.p2p.cross_replace_fraction = p["cross_replace_fraction"].get<scalar_t>();
        if (p.contains("self_replace_fraction"))
            cfg.p2p.self_replace_fraction = p["self_replace_fraction"].get<scalar_t>();
        if (p.contains("transfer_dynamic_tokens"))
            cfg.p2p.transfer_dynamic_tokens = p["transfer_dynamic_tokens"].get<bool>();
        if (p.contains("local_blend_positions"))
            cfg.p2p.local_blend_positions = p["local_blend_positions"].get<std::vector<int>>();
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        reject_unknown(e, {"timestep_policy", "final_k"}, "eval");
        if (e.contains("timestep_policy")) {
            std::string policy = e["timestep_policy"].get<std::string>();
            if (policy == "mean-over-final-k")
                cfg.eval.timestep_policy = TimestepPolicy::MeanOverFinalK;
            else if (policy == "per-t")
                cfg.eval.timestep_policy = TimestepPolicy::PerTimestep;
            else
                throw UsageError("config: eval.timestep_policy must be mean-over-final-k or per-t");
        }
        if (e.contains("final_k")) cfg.eval.final_k = e["final_k"].get<int>();
    }
    if (j.contains("manifest")) cfg.manifest_path = j["manifest"].get<std::string>();
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("trace")) cfg.trace = j["trace"].get<bool>();
    if (j.contains("jobs")) cfg.jobs = j["jobs"].get<int>();
    if (cfg.jobs < 1) throw UsageError("config: jobs must be >= 1");

    cfg.pipeline.validate();
    cfg.p2p.validate();
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::to_json() const {
    json j;
    j["adapter"] = {{"kind", adapter.kind}, {"checkpoint", adapter.checkpoint}};
    j["sampler"] = {{"guidance_scale", pipeline.sampler.guidance_scale},
                    {"steps", pipeline.sampler.steps}};
    if (loss_specified) {
        auto th = [](const ThresholdParams& p) {
            return json{{"lambda", p.lambda}, {"alpha", p.alpha}, {"beta", p.beta}};
        };
        j["loss"] = {{"sim", th(pipeline.loss.sim)},
                     {"ovl", th(pipeline.loss.ovl)},
                     {"adj", th(pipeline.loss.adj)},
                     {"max_inner_iters", pipeline.loss.max_inner_iters},
                     {"step_size", pipeline.loss.step_size}};
    }
    j["pipeline"] = {{"nti_inner_iters", pipeline.nti_inner_iters},
                     {"nti_step_size", pipeline.nti_step_size},
                     {"nti_early_exit", pipeline.nti_early_exit},
                     {"adjective_binding", pipeline.adjective_binding},
                     {"attention_resolution", pipeline.attention_resolution}};
    j["p2p"] = {{"cross_replace_fraction", p2p.cross_replace_fraction},
                {"self_replace_fraction", p2p.self_replace_fraction},
                {"transfer_dynamic_tokens", p2p.transfer_dynamic_tokens},
                {"local_blend_positions", p2p.local_blend_positions}};
    j["eval"] = {{"timestep_policy", eval.timestep_policy == TimestepPolicy::MeanOverFinalK
                                         ? "mean-over-final-k"
                                         : "per-t"},
                 {"final_k", eval.final_k}};
    j["manifest"] = manifest_path;
    j["output_dir"] = output_dir;
    j["seed"] = seed;
    j["trace"] = trace;
    j["jobs"] = jobs;
    return j.dump(2);
}

LossConfig RunConfig::loss_for(PriorSource kind) const {
    if (loss_specified) return pipeline.loss;
    LossConfig cfg = LossConfig::defaults_for(kind);
    cfg.max_inner_iters = pipeline.loss.max_inner_iters;
    cfg.step_size = pipeline.loss.step_size;
    return cfg;
}

std::string resolve_checkpoint_path(const std::string& path) {
    if (fs::exists(path)) return path;
    const char* cache = std::getenv("LOCINV_CACHE");
    if (cache) {
        fs::path candidate = fs::path(cache) / path;
        if (fs::exists(candidate)) return candidate.string();
        candidate = fs::path(cache) / fs::path(path).filename();
        if (fs::exists(candidate)) return candidate.string();
    }
    throw DataError("checkpoint not found: " + path +
                    (cache ? " (also searched LOCINV_CACHE)" : " (LOCINV_CACHE not set)"));
}

std::shared_ptr<ModelAdapter> make_adapter(const AdapterConfig& cfg) {
    std::string path = resolve_checkpoint_path(cfg.checkpoint);
    auto adapter = load_network_adapter(path);
    if (cfg.kind == "toy") {
        NetworkConfig expect = toy_network_config();
        const NetworkConfig& got = adapter->config();
        if (got.image_size != expect.image_size || got.latent_hw != expect.latent_hw ||
            got.context_length != expect.context_length)
            throw DataError("adapter: blob at " + path + " is not a toy-backend checkpoint");
    }
    return adapter;
}

}  // namespace locinv
