#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "locinv/network.hpp"

namespace locinv {

// Test backbone: 64x64 images, 4x16x16 latents, one cross-attention layer at
// 8x8, word vocabulary of 16. Images are procedurally generated colored
// shapes, block-constant at the latent grid so the codec is exact.
NetworkConfig toy_network_config();

struct ToyShape {
    std::string shape;  // circle | square | triangle
    std::string color;
    int cx = 0, cy = 0, size = 0;  // on the 16x16 grid
    Tensor mask16;                 // [16 x 16] binary footprint
};

struct ToySample {
    Tensor image;  // [3 x 64 x 64]
    std::string prompt;
    std::vector<ToyShape> shapes;  // prompt order
};

ToySample make_toy_sample(std::mt19937_64& rng, int num_shapes = 0 /* 0 = random 1..2 */);

struct ToyTrainConfig {
    int steps = 4000;
    int batch = 8;
    scalar_t lr = 2e-3;
    uint64_t seed = 7;
    scalar_t attn_reg = 0.1;      // attention-localization regularizer weight
    scalar_t cond_dropout = 0.1;  // fraction of samples trained unconditioned
    int log_every = 200;
};

NetworkWeights train_toy(const ToyTrainConfig& cfg, std::ostream* log = nullptr);

// Writes the bundled evaluation split: images, per-noun masks, and a dataset
// manifest with one edit task per entry.
void write_toy_fixtures(const std::string& dir, uint64_t seed, int entries = 6);

}  // namespace locinv
