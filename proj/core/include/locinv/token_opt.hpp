#pragma once

#include <map>

#include "locinv/adapter.hpp"
#include "locinv/ddim.hpp"
#include "locinv/losses.hpp"
#include "locinv/priors.hpp"
#include "locinv/prompt.hpp"

namespace locinv {

// Learnable replacement embeddings, one per annotated token position.
using DynamicTokenSet = std::map<int, Tensor>;

struct TraceEvent {
    int t = 0;
    int iter = 0;
    scalar_t l_sim = 0, l_ovl = 0, l_adj = 0, l_total = 0;
    scalar_t th_sim = 0, th_ovl = 0, th_adj = 0;
};

class TraceSink {
public:
    virtual ~TraceSink() = default;
    virtual void on_iteration(const TraceEvent& event) = 0;
};

struct TokenOptResult {
    DynamicTokenSet tokens;
    LossReport report;
};

// Inner optimization at one timestep: encode the prompt with token overrides,
// predict noise with attention capture, aggregate, evaluate the active
// losses, and take adaptive-moment steps on the token embeddings until every
// active loss is under its threshold or the iteration cap is hit. The loop
// guard always re-evaluates at the current tokens, so `converged` implies the
// reported losses hold at the returned embeddings.
TokenOptResult optimize_tokens(const ModelAdapter& adapter, const NoiseSchedule& sched,
                               const Tensor& z_bar_t, int t, const DynamicTokenSet& tokens,
                               const PromptAnnotation& ann, const LocalizationPrior& prior,
                               const LossConfig& cfg, int canonical_resolution,
                               TraceSink* trace = nullptr);

}  // namespace locinv
