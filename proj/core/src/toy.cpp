#include "locinv/toy.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "locinv/ddim.hpp"
#include "locinv/errors.hpp"
#include "locinv/image_io.hpp"
#include "locinv/optimizer.hpp"

namespace locinv {

namespace fs = std::filesystem;
using nlohmann::json;

NetworkConfig toy_network_config() {
    NetworkConfig c;
    c.image_size = 64;
    c.latent_channels = 4;
    c.latent_hw = 16;
    c.d_text = 32;
    c.context_length = 8;
    c.d_attn = 32;
    c.ch0 = 32;
    c.ch1 = 64;
    c.time_hidden = 48;
    c.train_timesteps = 1000;
    c.vocabulary = {"<pad>", "a",      "and",    "the",  "circle", "square", "triangle", "red",
                    "green", "blue",   "yellow", "purple", "cyan", "white",  "on",       "dark"};
    return c;
}

namespace {

struct Palette {
    const char* name;
    double r, g, b;
};
const Palette kColors[] = {{"red", 0.90, 0.15, 0.15},   {"green", 0.15, 0.80, 0.20},
                           {"blue", 0.20, 0.30, 0.90},  {"yellow", 0.95, 0.90, 0.20},
                           {"purple", 0.60, 0.20, 0.80}, {"cyan", 0.20, 0.85, 0.85},
                           {"white", 0.95, 0.95, 0.95}};
const char* kShapes[] = {"circle", "square", "triangle"};

Tensor shape_mask16(const std::string& shape, int cx, int cy, int size) {
    Tensor m({16, 16}, 0.0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            bool in = false;
            if (shape == "circle") {
                double dx = x - cx, dy = y - cy;
                in = dx * dx + dy * dy <= (size + 0.5) * (size + 0.5);
            } else if (shape == "square") {
                in = std::abs(x - cx) <= size && std::abs(y - cy) <= size;
            } else {  // triangle, apex up
                int dy = y - (cy - size);
                in = dy >= 0 && dy <= 2 * size && std::abs(x - cx) * 2 <= dy;
            }
            if (in) m.at2(y, x) = 1.0;
        }
    return m;
}

}  // namespace

ToySample make_toy_sample(std::mt19937_64& rng, int num_shapes) {
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> shape_pick(0, 2);
    std::uniform_int_distribution<int> color_pick(0, 6);
    std::uniform_int_distribution<int> pos_pick(3, 12);
    std::uniform_int_distribution<int> size_pick(2, 3);
    std::uniform_real_distribution<double> bg_jitter(-0.03, 0.03);

    if (num_shapes == 0) num_shapes = 1 + coin(rng);
    ToySample s;
    double bg[3] = {0.12 + bg_jitter(rng), 0.12 + bg_jitter(rng), 0.16 + bg_jitter(rng)};

    for (int k = 0; k < num_shapes; ++k) {
        for (int attempt = 0;; ++attempt) {
            ToyShape sh;
            sh.shape = kShapes[shape_pick(rng)];
            const Palette& col = kColors[color_pick(rng)];
            sh.color = col.name;
            sh.cx = pos_pick(rng);
            sh.cy = pos_pick(rng);
            sh.size = size_pick(rng);
            sh.mask16 = shape_mask16(sh.shape, sh.cx, sh.cy, sh.size);
            bool distinct = true;
            for (const auto& other : s.shapes) {
                if (other.shape == sh.shape || other.color == sh.color) distinct = false;
                for (int64_t i = 0; i < sh.mask16.numel() && distinct; ++i)
                    if (sh.mask16[i] != 0.0 && other.mask16[i] != 0.0) distinct = false;
                int dx = other.cx - sh.cx, dy = other.cy - sh.cy;
                if (dx * dx + dy * dy < 49) distinct = false;
            }
            if (distinct) {
                s.shapes.push_back(std::move(sh));
                break;
            }
            if (attempt > 200) throw DataError("toy sample: placement failed");
        }
    }

    // Paint at the 16x16 grid, then expand blocks to 64x64.
    Tensor grid({3, 16, 16});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 256; ++i) grid.data[static_cast<size_t>(c) * 256 + i] = bg[c];
    for (const auto& sh : s.shapes) {
        const Palette* col = nullptr;
        for (const auto& p : kColors)
            if (sh.color == p.name) col = &p;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                if (sh.mask16.at2(y, x) != 0.0) {
                    grid.at3(0, y, x) = col->r;
                    grid.at3(1, y, x) = col->g;
                    grid.at3(2, y, x) = col->b;
                }
    }
    s.image = Tensor({3, 64, 64});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) s.image.at3(c, y, x) = grid.at3(c, y / 4, x / 4);

    s.prompt = "a " + s.shapes[0].color + " " + s.shapes[0].shape;
    if (s.shapes.size() == 2)
        s.prompt += " and a " + s.shapes[1].color + " " + s.shapes[1].shape;
    return s;
}

static Tensor mask_to_8x8(const Tensor& mask16) {
    // A coarse cell is foreground if any of its 2x2 fine cells is.
    Tensor m({8, 8}, 0.0);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            if (mask16.at2(y, x) != 0.0) m.at2(y / 2, x / 2) = 1.0;
    return m;
}

NetworkWeights train_toy(const ToyTrainConfig& cfg, std::ostream* log) {
    NetworkConfig net_cfg = toy_network_config();
    NetworkWeights weights = init_network_weights(net_cfg, cfg.seed);
    ParamVars params = make_param_vars(weights, /*trainable=*/true);
    std::vector<ag::Var> plist = param_list(params);
    Adam adam(cfg.lr);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

    // Full-resolution training schedule.
    NoiseSchedule train_sched = NoiseSchedule::scaled_linear(net_cfg.train_timesteps,
                                                             net_cfg.train_timesteps);
    std::uniform_int_distribution<int> t_pick(0, net_cfg.train_timesteps - 1);
    std::uniform_real_distribution<scalar_t> unit(0.0, 1.0);
    std::normal_distribution<scalar_t> gauss(0.0, 1.0);
    WordTokenizer tokenizer(net_cfg.vocabulary, net_cfg.context_length);

    for (int step = 0; step < cfg.steps; ++step) {
        adam.zero_grad(plist);
        ag::Var total = ag::Var::constant(Tensor::scalar(0.0));
        scalar_t mse_val = 0, reg_val = 0;
        for (int bi = 0; bi < cfg.batch; ++bi) {
            ToySample sample = make_toy_sample(rng);
            bool conditioned = unit(rng) >= cfg.cond_dropout;
            std::vector<int> ids = tokenizer.tokenize(conditioned ? sample.prompt : "");

            // Encode to latent and diffuse to a random timestep.
            Tensor z0({net_cfg.latent_channels, 16, 16}, 0.0);
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 16; ++y)
                    for (int x = 0; x < 16; ++x)
                        z0.at3(c, y, x) = 2.0 * sample.image.at3(c, y * 4, x * 4) - 1.0;
            int tau = t_pick(rng);
            scalar_t abar = train_sched.alpha_bar[static_cast<size_t>(tau) + 1];
            Tensor eps(z0.shape);
            for (auto& v : eps.data) v = gauss(rng);
            Tensor z_t = z0;
            scalar_t c0 = std::sqrt(abar), c1 = std::sqrt(1.0 - abar);
            for (int64_t i = 0; i < z_t.numel(); ++i) z_t[i] = c0 * z_t[i] + c1 * eps[i];

            ag::Var cond = text_encode_graph(net_cfg, params, ids, {});
            UnetGraphOut out = unet_graph(net_cfg, params, z_t, tau, cond, nullptr);
            ag::Var loss = ag::mean_squared_error(out.noise, ag::Var::constant(eps));
            mse_val += loss.value()[0];

            if (conditioned && cfg.attn_reg > 0) {
                // Keep each noun's attention mass inside its shape.
                auto spans = tokenizer.token_spans(sample.prompt);
                ag::Var reg = ag::Var::constant(Tensor::scalar(0.0));
                int nouns = 0;
                for (size_t k = 0; k < sample.shapes.size(); ++k) {
                    int word_idx = k == 0 ? 2 : 6;
                    int pos = spans[static_cast<size_t>(word_idx)].first;
                    Tensor m8 = mask_to_8x8(sample.shapes[k].mask16);
                    Tensor flat = Tensor::from({64}, m8.data);
                    ag::Var amap = ag::col(out.attention, pos);
                    ag::Var inside = ag::dot(amap, ag::Var::constant(flat));
                    ag::Var mass = ag::sum(amap);
                    reg = ag::add(reg, ag::add_scalar(
                                           ag::scale(ag::mul(inside, ag::vpow(mass, -1.0)), -1.0), 1.0));
                    nouns += 1;
                }
                if (nouns > 0) {
                    reg = ag::scale(reg, 1.0 / nouns);
                    reg_val += reg.value()[0];
                    loss = ag::add(loss, ag::scale(reg, cfg.attn_reg));
                }
            }
            total = ag::add(total, loss);
        }
        total = ag::scale(total, 1.0 / cfg.batch);
        ag::backward(total);
        adam.step(plist);

        if (log && (step % cfg.log_every == 0 || step == cfg.steps - 1)) {
            (*log) << "step " << step << "  mse " << mse_val / cfg.batch << "  attn-reg "
                   << reg_val / cfg.batch << "\n";
        }
    }

    for (auto& [name, tensor] : weights.tensors) tensor = params.at(name).value();
    return weights;
}

void write_toy_fixtures(const std::string& dir, uint64_t seed, int entries) {
    fs::create_directories(dir + "/images");
    fs::create_directories(dir + "/masks");
    std::mt19937_64 rng(seed);
    json manifest;
    manifest["entries"] = json::array();

    for (int i = 0; i < entries; ++i) {
        // Alternate single and two-shape scenes.
        ToySample s = make_toy_sample(rng, i % 2 == 0 ? 1 : 2);
        char name[32];
        std::snprintf(name, sizeof(name), "toy_%02d", i);
        std::string image_path = dir + "/images/" + name + ".ppm";
        write_ppm(image_path, s.image);

        json nouns = json::array();
        json pairs = json::array();
        for (size_t k = 0; k < s.shapes.size(); ++k) {
            std::string mask_path = dir + "/masks/" + name + "_" + s.shapes[k].shape + ".pgm";
            Tensor mask64({1, 64, 64});
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x)
                    mask64.at3(0, y, x) = s.shapes[k].mask16.at2(y / 4, x / 4);
            write_pgm(mask_path, mask64);
            nouns.push_back({{"word", s.shapes[k].shape},
                             {"mask", "masks/" + std::string(name) + "_" + s.shapes[k].shape + ".pgm"}});
            pairs.push_back({s.shapes[k].color, s.shapes[k].shape});
        }

        // One edit task per entry: word swap on the first shape, attribute
        // swap on every third entry.
        json task;
        if (i % 3 == 2) {
            const char* new_color = s.shapes[0].color == "red" ? "blue" : "red";
            task = {{"source_word", s.shapes[0].color}, {"target_word", new_color}};
        } else {
            const char* new_shape = s.shapes[0].shape == "circle" ? "square" : "circle";
            bool clash = s.shapes.size() == 2 && s.shapes[1].shape == new_shape;
            if (clash) new_shape = "triangle";
            task = {{"source_word", s.shapes[0].shape}, {"target_word", new_shape}};
        }

        manifest["entries"].push_back({{"image_path", "images/" + std::string(name) + ".ppm"},
                                       {"prompt", s.prompt},
                                       {"nouns", nouns},
                                       {"adjective_pairs", pairs},
                                       {"edit_task", task}});
    }
    std::ofstream os(dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
    if (!os) throw DataError("cannot write toy manifest");
}

}  // namespace locinv
