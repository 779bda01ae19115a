#include "locinv/losses.hpp"

#include <cmath>

#include "locinv/errors.hpp"

namespace locinv {

LossConfig LossConfig::defaults_for(PriorSource kind) {
    LossConfig cfg;
    if (kind == PriorSource::Segmentation) {
        cfg.sim = {1.0, 50.0, 0.7};
        cfg.ovl = {1.0, 10.0, 0.7};
    } else {
        cfg.sim = {0.1, 25.0, 0.5};
        cfg.ovl = {1.0, 25.0, 0.3};
    }
    cfg.adj = {2.0, 50.0, 0.1};
    return cfg;
}

void LossConfig::validate() const {
    for (const auto* p : {&sim, &ovl, &adj}) {
        if (p->lambda < 0) throw DataError("loss config: lambda must be >= 0");
        if (!(p->alpha > 0)) throw DataError("loss config: alpha must be > 0");
        if (!(p->beta > 0 && p->beta <= 1)) throw DataError("loss config: beta must be in (0, 1]");
    }
    if (max_inner_iters < 0) throw DataError("loss config: max_inner_iters must be >= 0");
    if (!(step_size > 0)) throw DataError("loss config: step_size must be > 0");
}

scalar_t threshold(int t, scalar_t alpha, scalar_t beta) {
    if (t < 0) throw DataError("threshold: t must be >= 0");
    return beta * std::exp(-static_cast<scalar_t>(t) / alpha);
}

static bool is_zero(const Tensor& t) {
    for (scalar_t v : t.data)
        if (v != 0.0) return false;
    return true;
}

// cos with a zero operand is taken as 0 (contribution 1); this penalizes dead
// attention instead of dividing by zero.
static ag::Var one_minus_cosine(const ag::Var& a, const ag::Var& b) {
    if (is_zero(a.value()) || is_zero(b.value())) return ag::Var::constant(Tensor::scalar(1.0));
    return ag::add_scalar(ag::scale(ag::cosine(a, b), -1.0), 1.0);
}

ag::Var similarity_loss_graph(const std::vector<ag::Var>& noun_maps,
                              const std::vector<Tensor>& noun_masks) {
    if (noun_maps.size() != noun_masks.size())
        throw DataError("similarity loss: map/mask count mismatch");
    if (noun_maps.empty()) throw DataError("similarity loss: no noun maps");
    ag::Var total = ag::Var::constant(Tensor::scalar(0.0));
    for (size_t i = 0; i < noun_maps.size(); ++i) {
        if (noun_maps[i].value().numel() != noun_masks[i].numel())
            throw DataError("similarity loss: map/mask size mismatch");
        Tensor flat_mask = Tensor::from({static_cast<int>(noun_masks[i].numel())}, noun_masks[i].data);
        total = ag::add(total, one_minus_cosine(noun_maps[i], ag::Var::constant(flat_mask)));
    }
    return total;
}

ag::Var overlapping_loss_graph(const std::vector<ag::Var>& noun_maps,
                               const std::vector<Tensor>& noun_masks) {
    if (noun_maps.size() != noun_masks.size())
        throw DataError("overlapping loss: map/mask count mismatch");
    if (noun_maps.empty()) throw DataError("overlapping loss: no noun maps");
    ag::Var inside = ag::Var::constant(Tensor::scalar(0.0));
    ag::Var total = ag::Var::constant(Tensor::scalar(0.0));
    scalar_t total_value = 0;
    for (size_t i = 0; i < noun_maps.size(); ++i) {
        if (noun_maps[i].value().numel() != noun_masks[i].numel())
            throw DataError("overlapping loss: map/mask size mismatch");
        Tensor flat_mask = Tensor::from({static_cast<int>(noun_masks[i].numel())}, noun_masks[i].data);
        inside = ag::add(inside, ag::dot(noun_maps[i], ag::Var::constant(flat_mask)));
        total = ag::add(total, ag::sum(noun_maps[i]));
        total_value += noun_maps[i].value().sum();
    }
    if (total_value <= 0.0)
        throw DataError("overlapping loss: attention mass is zero across all nouns "
                        "(upstream capture bug)");
    return ag::add_scalar(ag::scale(ag::mul(inside, ag::vpow(total, -1.0)), -1.0), 1.0);
}

ag::Var adjective_binding_loss_graph(const std::vector<ag::Var>& noun_maps,
                                     const std::vector<ag::Var>& adjective_maps) {
    if (noun_maps.size() != adjective_maps.size())
        throw DataError("adjective loss: pair count mismatch");
    ag::Var total = ag::Var::constant(Tensor::scalar(0.0));
    for (size_t i = 0; i < noun_maps.size(); ++i)
        total = ag::add(total, one_minus_cosine(noun_maps[i], adjective_maps[i]));
    return total;
}

static std::vector<ag::Var> as_vars(const std::vector<Tensor>& maps) {
    std::vector<ag::Var> out;
    out.reserve(maps.size());
    for (const auto& m : maps)
        out.push_back(ag::Var::constant(Tensor::from({static_cast<int>(m.numel())}, m.data)));
    return out;
}

scalar_t similarity_loss(const std::vector<Tensor>& noun_maps, const std::vector<Tensor>& noun_masks) {
    return similarity_loss_graph(as_vars(noun_maps), noun_masks).value()[0];
}

scalar_t overlapping_loss(const std::vector<Tensor>& noun_maps, const std::vector<Tensor>& noun_masks) {
    return overlapping_loss_graph(as_vars(noun_maps), noun_masks).value()[0];
}

scalar_t adjective_binding_loss(const std::vector<Tensor>& noun_maps,
                                const std::vector<Tensor>& adjective_maps) {
    if (noun_maps.empty()) return 0.0;  // no pairs: loss inactive
    return adjective_binding_loss_graph(as_vars(noun_maps), as_vars(adjective_maps)).value()[0];
}

}  // namespace locinv
