#pragma once

#include <memory>
#include <optional>
#include <string>

#include "locinv/network.hpp"
#include "locinv/p2p.hpp"
#include "locinv/pipeline.hpp"

namespace locinv {

enum class TimestepPolicy { MeanOverFinalK, PerTimestep };

struct EvalConfig {
    TimestepPolicy timestep_policy = TimestepPolicy::MeanOverFinalK;
    int final_k = 10;
};

struct AdapterConfig {
    std::string kind = "toy";  // toy | checkpoint
    std::string checkpoint = "data/toy/weights.bin";
};

// One structured config drives every command; flags override fields. Unknown
// keys are rejected. The loss block may be omitted, in which case per-prior
// defaults apply at run time.
struct RunConfig {
    AdapterConfig adapter;
    PipelineConfig pipeline;  // holds sampler and loss settings
    bool loss_specified = false;
    P2PConfig p2p;
    EvalConfig eval;
    std::string manifest_path;
    std::string output_dir = "runs/out";
    uint64_t seed = 1234;
    bool trace = false;
    int jobs = 1;

    static RunConfig from_json_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
    std::string to_json() const;

    // Effective loss config: explicit settings, else defaults for the prior kind.
    LossConfig loss_for(PriorSource kind) const;
};

// Resolves a checkpoint path, consulting $LOCINV_CACHE when the file is not
// found next to the working directory.
std::string resolve_checkpoint_path(const std::string& path);

std::shared_ptr<ModelAdapter> make_adapter(const AdapterConfig& cfg);

}  // namespace locinv
