#pragma once

#include <optional>
#include <vector>

#include "locinv/autograd.hpp"
#include "locinv/priors.hpp"
#include "locinv/prompt.hpp"

namespace locinv {

// Per-loss threshold parameters: the target at step t is beta * exp(-t / alpha).
struct ThresholdParams {
    scalar_t lambda = 0.0;
    scalar_t alpha = 1.0;
    scalar_t beta = 1.0;
};

struct LossConfig {
    ThresholdParams sim;
    ThresholdParams ovl;
    ThresholdParams adj;
    int max_inner_iters = 15;
    scalar_t step_size = 0.01;

    static LossConfig defaults_for(PriorSource kind);
    void validate() const;
};

struct LossReport {
    scalar_t l_sim = 0, l_ovl = 0, l_adj = 0, l_total = 0;
    scalar_t th_sim = 0, th_ovl = 0, th_adj = 0;
    int iterations_used = 0;
    bool converged = false;
    bool adj_active = false;
};

scalar_t threshold(int t, scalar_t alpha, scalar_t beta);

// Per-noun flattened attention maps in annotation order. Token j's map is a
// [r*r] vector; masks are the matching priors.
ag::Var similarity_loss_graph(const std::vector<ag::Var>& noun_maps,
                              const std::vector<Tensor>& noun_masks);
ag::Var overlapping_loss_graph(const std::vector<ag::Var>& noun_maps,
                               const std::vector<Tensor>& noun_masks);
ag::Var adjective_binding_loss_graph(const std::vector<ag::Var>& noun_maps,
                                     const std::vector<ag::Var>& adjective_maps);

// Value-only entry points used by reports and tests.
scalar_t similarity_loss(const std::vector<Tensor>& noun_maps, const std::vector<Tensor>& noun_masks);
scalar_t overlapping_loss(const std::vector<Tensor>& noun_maps, const std::vector<Tensor>& noun_masks);
scalar_t adjective_binding_loss(const std::vector<Tensor>& noun_maps,
                                const std::vector<Tensor>& adjective_maps);

}  // namespace locinv
