#include "locinv/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "locinv/errors.hpp"
#include "locinv/optimizer.hpp"
#include "locinv/serialize.hpp"

namespace locinv {

namespace fs = std::filesystem;
using nlohmann::json;

void PipelineConfig::validate() const {
    sampler.validate();
    loss.validate();
    if (nti_inner_iters < 0) throw DataError("pipeline: nti_inner_iters must be >= 0");
    if (!(nti_step_size > 0)) throw DataError("pipeline: nti_step_size must be > 0");
    if (attention_resolution < 0) throw DataError("pipeline: attention_resolution must be >= 0");
}

void InversionResult::validate_lengths() const {
    auto expect = [&](size_t got, const char* what) {
        if (got != static_cast<size_t>(T))
            throw DataError(std::string("inversion result: ") + what + " has length " +
                            std::to_string(got) + ", expected T=" + std::to_string(T));
    };
    expect(token_schedule.size(), "token schedule");
    expect(null_schedule.embeddings.size(), "null schedule");
    expect(loss_reports.size(), "loss reports");
    if (forward_trajectory.latents.size() != static_cast<size_t>(T) + 1)
        throw DataError("inversion result: forward trajectory length mismatch");
    if (backward_trajectory.size() != static_cast<size_t>(T) + 1)
        throw DataError("inversion result: backward trajectory length mismatch");
}

int resolve_attention_resolution(const AdapterSpec& spec, const PipelineConfig& cfg) {
    if (cfg.attention_resolution > 0) {
        for (const auto& l : spec.attention_layers)
            if (l.resolution == cfg.attention_resolution) return cfg.attention_resolution;
        throw DataError("no attention layer at configured resolution " +
                        std::to_string(cfg.attention_resolution));
    }
    // Canonical default: the most frequent capture resolution.
    std::map<int, int> counts;
    for (const auto& l : spec.attention_layers) counts[l.resolution] += 1;
    int best = 0, best_count = 0;
    for (const auto& [r, c] : counts)
        if (c > best_count) best = r, best_count = c;
    return best;
}

NtiStepResult null_text_step(const ModelAdapter& adapter, const NoiseSchedule& sched,
                             const Tensor& target_z_prev, const Tensor& z_bar_t, int t,
                             const Tensor& eps_cond, const Tensor& null_embedding,
                             const PipelineConfig& cfg) {
    if (t < 1 || t > sched.T) throw DataError("null_text_step: timestep outside [1, T]");
    if (!z_bar_t.same_shape(target_z_prev) || !z_bar_t.same_shape(eps_cond))
        throw DataError("null_text_step: latent shape mismatch");
    scalar_t w = cfg.sampler.guidance_scale;
    scalar_t abar_t = sched.alpha_bar[static_cast<size_t>(t)];
    scalar_t abar_prev = sched.alpha_bar[static_cast<size_t>(t) - 1];
    // One DDIM step is affine in the noise estimate: z_prev = a*z + b*eps.
    scalar_t a = std::sqrt(abar_prev / abar_t);
    scalar_t b = std::sqrt(1.0 - abar_prev) - std::sqrt(abar_prev * (1.0 - abar_t) / abar_t);

    NtiStepResult out;
    out.null_embedding = null_embedding;

    if (w == 1.0) {
        // Guided noise equals the conditional prediction; the objective does
        // not depend on the null embedding.
        out.z_prev = ddim::step_back(z_bar_t, t, eps_cond, sched);
        Tensor d = out.z_prev - target_z_prev;
        out.initial_residual = out.final_residual = (d * d).mean();
        return out;
    }

    int tau = sched.timestep_map[static_cast<size_t>(t)];
    ag::Var null_var = ag::Var::leaf(null_embedding);
    Adam adam(cfg.nti_step_size);
    Tensor base = a * z_bar_t;
    Tensor w_eps_cond = w * eps_cond;
    int iters = 0;
    while (true) {
        ag::Var eps_null = adapter.predict_noise_graph(Latent{z_bar_t, tau}, tau, null_var);
        ag::Var guided = ag::add(ag::Var::constant(w_eps_cond), ag::scale(eps_null, 1.0 - w));
        ag::Var z_prev = ag::add(ag::Var::constant(base), ag::scale(guided, b));
        ag::Var loss = ag::mean_squared_error(z_prev, ag::Var::constant(target_z_prev));
        scalar_t residual = loss.value()[0];
        if (!std::isfinite(residual))
            throw NumericError("null_text_step: non-finite residual at t=" + std::to_string(t));
        if (iters == 0) out.initial_residual = residual;
        out.final_residual = residual;
        out.z_prev = z_prev.value();
        if (residual < cfg.nti_early_exit || iters >= cfg.nti_inner_iters) break;
        null_var.zero_grad();
        ag::backward(loss);
        adam.step({null_var});
        iters += 1;
    }
    out.iterations_used = iters;
    out.null_embedding = null_var.value();
    return out;
}

InversionResult invert(const ModelAdapter& adapter, const NoiseSchedule& sched, const Tensor& image,
                       const PromptAnnotation& ann, const LocalizationPrior& prior,
                       const PipelineConfig& cfg, TraceSink* trace, const InvertObserver* observer) {
    cfg.validate();
    prior.validate(ann);
    int r = resolve_attention_resolution(adapter.spec(), cfg);
    if (prior.resolution() != r)
        throw DataError("invert: prior resolution " + std::to_string(prior.resolution()) +
                        " does not match attention resolution " + std::to_string(r));

    InversionResult result;
    result.T = sched.T;
    result.annotation = ann;
    result.adapter_hash = adapter.spec().checkpoint_hash;

    Latent z0 = adapter.encode_image(image);
    ConditioningEmbedding vanilla = adapter.encode_text(ann.token_ids, {});
    try {
        result.forward_trajectory = ddim::invert(adapter, sched, z0.data, vanilla);
    } catch (const NumericError& e) {
        throw NumericError(std::string("invert: DDIM inversion stage failed: ") + e.what());
    }

    // Dynamic tokens start from the original input embeddings at the
    // annotated positions; adjectives join only when binding is on.
    DynamicTokenSet tokens;
    for (int p : ann.noun_positions)
        tokens.emplace(p, adapter.token_input_embedding(ann.token_ids[static_cast<size_t>(p)]));
    if (cfg.adjective_binding)
        for (const auto& [a, n] : ann.adjective_pairs)
            tokens.emplace(a, adapter.token_input_embedding(ann.token_ids[static_cast<size_t>(a)]));

    Tensor null_emb = adapter.null_text_embedding().data;
    int T = sched.T;
    result.token_schedule.resize(static_cast<size_t>(T));
    result.null_schedule.embeddings.resize(static_cast<size_t>(T));
    result.loss_reports.resize(static_cast<size_t>(T));
    result.attention.resize(static_cast<size_t>(T));
    result.backward_trajectory.assign(static_cast<size_t>(T) + 1, Tensor());
    Tensor z_bar = result.forward_trajectory.latents.back();
    result.z_bar_T = z_bar;
    result.backward_trajectory[static_cast<size_t>(T)] = z_bar;

    for (int t = T; t >= 1; --t) {
        TokenOptResult opt;
        try {
            opt = optimize_tokens(adapter, sched, z_bar, t, tokens, ann, prior, cfg.loss, r, trace);
        } catch (const NumericError& e) {
            throw NumericError("invert: token stage failed at t=" + std::to_string(t) + ": " + e.what());
        }
        tokens = opt.tokens;
        result.token_schedule[static_cast<size_t>(t) - 1] = tokens;
        result.loss_reports[static_cast<size_t>(t) - 1] = opt.report;
        if (observer && observer->on_step) observer->on_step(t, "tokens", result);

        std::map<int, Tensor> overrides(tokens.begin(), tokens.end());
        ConditioningEmbedding cond_t = adapter.encode_text(ann.token_ids, overrides);
        int tau = sched.timestep_map[static_cast<size_t>(t)];
        AttentionSink sink;
        Tensor eps_cond = adapter.predict_noise(Latent{z_bar, tau}, tau, cond_t, &sink);
        result.attention[static_cast<size_t>(t) - 1] = aggregate(sink, adapter.spec(), r, t);

        NtiStepResult nti;
        try {
            nti = null_text_step(adapter, sched, result.forward_trajectory.latents[static_cast<size_t>(t) - 1],
                                 z_bar, t, eps_cond, null_emb, cfg);
        } catch (const NumericError& e) {
            throw NumericError("invert: null-text stage failed at t=" + std::to_string(t) + ": " +
                               e.what());
        }
        result.null_schedule.embeddings[static_cast<size_t>(t) - 1] = nti.null_embedding;
        null_emb = nti.null_embedding;  // warm start for t-1
        z_bar = nti.z_prev;
        result.backward_trajectory[static_cast<size_t>(t) - 1] = z_bar;
        if (observer && observer->on_step) observer->on_step(t, "nti", result);
    }
    result.validate_lengths();
    return result;
}

static Tensor guided_noise(const ModelAdapter& adapter, const NoiseSchedule& sched,
                           const InversionResult& result, const Tensor& z, int t) {
    const DynamicTokenSet& tokens = result.token_schedule[static_cast<size_t>(t) - 1];
    std::map<int, Tensor> overrides(tokens.begin(), tokens.end());
    ConditioningEmbedding cond = adapter.encode_text(result.annotation.token_ids, overrides);
    ConditioningEmbedding null_emb{result.null_schedule.embeddings[static_cast<size_t>(t) - 1],
                                   std::vector<int>(result.annotation.token_ids.size(), 0)};
    json cfg = json::parse(result.config_json.empty() ? "{}" : result.config_json,
                           nullptr, /*allow_exceptions=*/false);
    scalar_t w = 7.5;
    if (cfg.is_object() && cfg.contains("sampler") && cfg["sampler"].contains("guidance_scale"))
        w = cfg["sampler"]["guidance_scale"].get<scalar_t>();
    return ddim::cfg_noise(adapter, sched, z, t, cond, null_emb, w);
}

Tensor reconstruct(const InversionResult& result, const ModelAdapter& adapter,
                   const NoiseSchedule& sched) {
    if (result.T != sched.T)
        throw DataError("reconstruct: schedule has T=" + std::to_string(sched.T) +
                        " but result was inverted with T=" + std::to_string(result.T));
    result.validate_lengths();
    Tensor z = result.z_bar_T;
    for (int t = sched.T; t >= 1; --t) {
        Tensor eps = guided_noise(adapter, sched, result, z, t);
        z = ddim::step_back(z, t, eps, sched);
        if (!z.all_finite())
            throw NumericError("reconstruct: non-finite latent at t=" + std::to_string(t));
    }
    return adapter.decode_latent(Latent{z, 0});
}

scalar_t replay_error(const InversionResult& result, const ModelAdapter& adapter,
                      const NoiseSchedule& sched) {
    result.validate_lengths();
    Tensor z = result.z_bar_T;
    scalar_t worst = 0;
    for (int t = sched.T; t >= 1; --t) {
        Tensor eps = guided_noise(adapter, sched, result, z, t);
        z = ddim::step_back(z, t, eps, sched);
        worst = std::max(worst, max_abs_diff(z, result.backward_trajectory[static_cast<size_t>(t) - 1]));
    }
    return worst;
}

// ---- persistence ----

static json annotation_to_json(const PromptAnnotation& ann) {
    json pairs = json::array();
    for (const auto& [a, n] : ann.adjective_pairs) pairs.push_back({a, n});
    return json{{"prompt", ann.prompt_text},
                {"token_ids", ann.token_ids},
                {"noun_positions", ann.noun_positions},
                {"adjective_pairs", pairs}};
}

static PromptAnnotation annotation_from_json(const json& j) {
    PromptAnnotation ann;
    ann.prompt_text = j.at("prompt").get<std::string>();
    ann.token_ids = j.at("token_ids").get<std::vector<int>>();
    ann.noun_positions = j.at("noun_positions").get<std::vector<int>>();
    for (const auto& p : j.at("adjective_pairs"))
        ann.adjective_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
    return ann;
}

static json report_to_json(const LossReport& r) {
    return json{{"l_sim", r.l_sim},         {"l_ovl", r.l_ovl},
                {"l_adj", r.l_adj},         {"l_total", r.l_total},
                {"th_sim", r.th_sim},       {"th_ovl", r.th_ovl},
                {"th_adj", r.th_adj},       {"iterations_used", r.iterations_used},
                {"converged", r.converged}, {"adj_active", r.adj_active}};
}

static LossReport report_from_json(const json& j) {
    LossReport r;
    r.l_sim = j.at("l_sim").get<scalar_t>();
    r.l_ovl = j.at("l_ovl").get<scalar_t>();
    r.l_adj = j.at("l_adj").get<scalar_t>();
    r.l_total = j.at("l_total").get<scalar_t>();
    r.th_sim = j.at("th_sim").get<scalar_t>();
    r.th_ovl = j.at("th_ovl").get<scalar_t>();
    r.th_adj = j.at("th_adj").get<scalar_t>();
    r.iterations_used = j.at("iterations_used").get<int>();
    r.converged = j.at("converged").get<bool>();
    r.adj_active = j.at("adj_active").get<bool>();
    return r;
}

void save_result(const std::string& dir, const InversionResult& result) {
    result.validate_lengths();
    fs::create_directories(dir);
    char key[32];

    write_tensor_list(dir + "/forward.bin", result.forward_trajectory.latents, TensorDType::f64);
    write_tensor_list(dir + "/backward.bin", result.backward_trajectory, TensorDType::f64);
    write_tensor_list(dir + "/nulls.bin", result.null_schedule.embeddings, TensorDType::f64);

    std::map<std::string, Tensor> token_tensors;
    for (size_t i = 0; i < result.token_schedule.size(); ++i)
        for (const auto& [pos, emb] : result.token_schedule[i]) {
            std::snprintf(key, sizeof(key), "%04zu.p%03d", i, pos);
            token_tensors.emplace(key, emb);
        }
    write_tensor_file(dir + "/tokens.bin", token_tensors, TensorDType::f64);

    json manifest;
    manifest["format_version"] = InversionResult::kFormatVersion;
    manifest["T"] = result.T;
    manifest["adapter_hash"] = result.adapter_hash;
    manifest["config"] =
        result.config_json.empty() ? json::object() : json::parse(result.config_json);
    manifest["annotation"] = annotation_to_json(result.annotation);
    json reports = json::array();
    for (const auto& r : result.loss_reports) reports.push_back(report_to_json(r));
    manifest["loss_reports"] = reports;
    json checksums;
    for (const char* f : {"forward.bin", "backward.bin", "nulls.bin", "tokens.bin"})
        checksums[f] = checksum_hex(file_checksum(dir + "/" + f));
    manifest["checksums"] = checksums;
    std::ofstream os(dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw DataError("cannot write " + dir + "/manifest.json");
}

InversionResult load_result(const std::string& dir) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw DataError("no inversion result at " + dir);
    json manifest = json::parse(is, nullptr, /*allow_exceptions=*/false);
    if (manifest.is_discarded()) throw DataError("invalid manifest JSON in " + dir);
    if (manifest.at("format_version").get<int>() != InversionResult::kFormatVersion)
        throw DataError("unsupported result format version in " + dir);

    for (const char* f : {"forward.bin", "backward.bin", "nulls.bin", "tokens.bin"}) {
        std::string want = manifest.at("checksums").at(f).get<std::string>();
        std::string got = checksum_hex(file_checksum(dir + "/" + f));
        if (want != got)
            throw DataError("checksum mismatch for " + std::string(f) + " in " + dir +
                            " (stored " + want + ", computed " + got + ")");
    }

    InversionResult result;
    result.T = manifest.at("T").get<int>();
    result.adapter_hash = manifest.at("adapter_hash").get<std::string>();
    result.config_json = manifest.at("config").dump();
    result.annotation = annotation_from_json(manifest.at("annotation"));
    for (const auto& r : manifest.at("loss_reports")) result.loss_reports.push_back(report_from_json(r));

    result.forward_trajectory.latents = read_tensor_list(dir + "/forward.bin");
    result.backward_trajectory = read_tensor_list(dir + "/backward.bin");
    result.null_schedule.embeddings = read_tensor_list(dir + "/nulls.bin");
    result.z_bar_T = result.backward_trajectory.back();

    auto token_tensors = read_tensor_file(dir + "/tokens.bin");
    result.token_schedule.resize(static_cast<size_t>(result.T));
    for (const auto& [name, emb] : token_tensors) {
        size_t dot = name.find(".p");
        if (dot == std::string::npos) throw DataError("bad token key in " + dir);
        size_t idx = std::stoul(name.substr(0, dot));
        int pos = std::stoi(name.substr(dot + 2));
        if (idx >= result.token_schedule.size()) throw DataError("token key out of range in " + dir);
        result.token_schedule[idx].emplace(pos, emb);
    }
    result.validate_lengths();
    return result;
}

}  // namespace locinv
