#include "locinv/token_opt.hpp"

#include <cmath>

#include "locinv/attention_store.hpp"
#include "locinv/errors.hpp"
#include "locinv/optimizer.hpp"

namespace locinv {

TokenOptResult optimize_tokens(const ModelAdapter& adapter, const NoiseSchedule& sched,
                               const Tensor& z_bar_t, int t, const DynamicTokenSet& tokens,
                               const PromptAnnotation& ann, const LocalizationPrior& prior,
                               const LossConfig& cfg, int canonical_resolution, TraceSink* trace) {
    cfg.validate();
    prior.validate(ann);
    for (int p : ann.noun_positions)
        if (!tokens.count(p))
            throw DataError("optimize_tokens: no dynamic token for noun position " + std::to_string(p));

    bool sim_active = cfg.sim.lambda > 0;
    bool ovl_active = cfg.ovl.lambda > 0;
    bool adj_active = cfg.adj.lambda > 0 && !ann.adjective_pairs.empty();
    for (const auto& [a, n] : ann.adjective_pairs)
        if (!tokens.count(a)) adj_active = false;  // inversion ran without adjective tokens

    LossReport report;
    report.th_sim = threshold(t, cfg.sim.alpha, cfg.sim.beta);
    report.th_ovl = threshold(t, cfg.ovl.alpha, cfg.ovl.beta);
    report.th_adj = threshold(t, cfg.adj.alpha, cfg.adj.beta);
    report.adj_active = adj_active;

    // Leaves persist across iterations so optimizer state stays attached.
    std::map<int, ag::Var> leaves;
    std::vector<ag::Var> leaf_list;
    for (const auto& [pos, emb] : tokens) {
        require_shape(emb, {adapter.spec().d_text}, "dynamic token embedding");
        auto [it, _] = leaves.emplace(pos, ag::Var::leaf(emb));
        leaf_list.push_back(it->second);
    }

    int tau = sched.timestep_map[static_cast<size_t>(t)];
    Adam adam(cfg.step_size);
    std::vector<Tensor> noun_masks;
    for (int p : ann.noun_positions) noun_masks.push_back(prior.mask_for(p));
    for (auto& m : noun_masks) m = Tensor::from({static_cast<int>(m.numel())}, m.data);

    int iter = 0;
    while (true) {
        std::map<int, ag::Var> overrides(leaves.begin(), leaves.end());
        ag::Var cond = adapter.encode_text_graph(ann.token_ids, overrides);
        AttentionGraphCapture capture;
        ag::Var noise = adapter.predict_noise_graph(Latent{z_bar_t, tau}, tau, cond, &capture);
        (void)noise;
        std::vector<ag::Var> maps = aggregate_graph(capture, canonical_resolution);

        std::vector<ag::Var> noun_maps;
        for (int p : ann.noun_positions) {
            if (p >= static_cast<int>(maps.size()))
                throw DataError("optimize_tokens: noun position beyond captured token count");
            noun_maps.push_back(maps[static_cast<size_t>(p)]);
        }

        ag::Var total = ag::Var::constant(Tensor::scalar(0.0));
        report.l_sim = report.l_ovl = report.l_adj = 0.0;
        if (sim_active) {
            ag::Var l = similarity_loss_graph(noun_maps, noun_masks);
            report.l_sim = l.value()[0];
            total = ag::add(total, ag::scale(l, cfg.sim.lambda));
        }
        if (ovl_active) {
            ag::Var l = overlapping_loss_graph(noun_maps, noun_masks);
            report.l_ovl = l.value()[0];
            total = ag::add(total, ag::scale(l, cfg.ovl.lambda));
        }
        if (adj_active) {
            std::vector<ag::Var> pair_nouns, pair_adjs;
            for (const auto& [a, n] : ann.adjective_pairs) {
                pair_adjs.push_back(maps[static_cast<size_t>(a)]);
                pair_nouns.push_back(maps[static_cast<size_t>(n)]);
            }
            ag::Var l = adjective_binding_loss_graph(pair_nouns, pair_adjs);
            report.l_adj = l.value()[0];
            total = ag::add(total, ag::scale(l, cfg.adj.lambda));
        }
        report.l_total = total.value()[0];

        for (auto [name, value] : {std::pair<const char*, scalar_t>{"sim", report.l_sim},
                                   {"ovl", report.l_ovl},
                                   {"adj", report.l_adj}}) {
            if (!std::isfinite(value))
                throw NumericError("optimize_tokens: non-finite " + std::string(name) +
                                   " loss at iteration " + std::to_string(iter));
        }

        if (trace) {
            trace->on_iteration({t, iter, report.l_sim, report.l_ovl, report.l_adj, report.l_total,
                                 report.th_sim, report.th_ovl, report.th_adj});
        }

        bool converged = (!sim_active || report.l_sim < report.th_sim) &&
                         (!ovl_active || report.l_ovl < report.th_ovl) &&
                         (!adj_active || report.l_adj < report.th_adj);
        if (converged) {
            report.converged = true;
            break;
        }
        if (iter >= cfg.max_inner_iters) break;

        for (auto& v : leaf_list) v.zero_grad();
        ag::backward(total);
        try {
            adam.step(leaf_list);
        } catch (const NumericError&) {
            throw NumericError("optimize_tokens: non-finite gradient at iteration " +
                               std::to_string(iter));
        }
        iter += 1;
    }

    report.iterations_used = iter;
    TokenOptResult out;
    out.report = report;
    for (const auto& [pos, leaf] : leaves) out.tokens.emplace(pos, leaf.value());
    return out;
}

}  // namespace locinv
