#include "locinv/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "locinv/errors.hpp"
#include "locinv/serialize.hpp"

namespace locinv {

using nlohmann::json;

void NetworkConfig::validate() const {
    if (image_size <= 0 || latent_hw <= 0 || image_size % latent_hw != 0)
        throw DataError("network config: latent size must divide image size");
    if (latent_hw % 2 != 0) throw DataError("network config: latent side must be even");
    if (latent_channels < 3) throw DataError("network config: need >= 3 latent channels");
    if (vocabulary.empty()) throw DataError("network config: empty vocabulary");
    if (context_length <= 0 || d_text <= 0 || d_attn <= 0 || train_timesteps <= 0)
        throw DataError("network config: invalid dimensions");
}

static json config_to_json(const NetworkConfig& c) {
    return json{{"image_size", c.image_size},
                {"latent_channels", c.latent_channels},
                {"latent_hw", c.latent_hw},
                {"d_text", c.d_text},
                {"context_length", c.context_length},
                {"d_attn", c.d_attn},
                {"ch0", c.ch0},
                {"ch1", c.ch1},
                {"time_hidden", c.time_hidden},
                {"train_timesteps", c.train_timesteps},
                {"vocabulary", c.vocabulary}};
}

static NetworkConfig config_from_json(const json& j) {
    NetworkConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.latent_channels = j.at("latent_channels").get<int>();
    c.latent_hw = j.at("latent_hw").get<int>();
    c.d_text = j.at("d_text").get<int>();
    c.context_length = j.at("context_length").get<int>();
    c.d_attn = j.at("d_attn").get<int>();
    c.ch0 = j.at("ch0").get<int>();
    c.ch1 = j.at("ch1").get<int>();
    c.time_hidden = j.at("time_hidden").get<int>();
    c.train_timesteps = j.at("train_timesteps").get<int>();
    c.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    c.validate();
    return c;
}

static constexpr char kBlobMagic[4] = {'L', 'T', 'W', 'B'};
static constexpr uint32_t kBlobVersion = 1;

void save_network(const std::string& path, const NetworkWeights& weights) {
    std::string cfg = config_to_json(weights.config).dump();
    std::string tmp = path + ".tensors.tmp";
    write_tensor_file(tmp, weights.tensors, TensorDType::f64);
    std::ifstream tin(tmp, std::ios::binary);
    std::stringstream tensors;
    tensors << tin.rdbuf();
    tin.close();
    std::remove(tmp.c_str());

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    os.write(kBlobMagic, 4);
    uint32_t v = kBlobVersion, n = static_cast<uint32_t>(cfg.size());
    os.write(reinterpret_cast<const char*>(&v), 4);
    os.write(reinterpret_cast<const char*>(&n), 4);
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    std::string blob = tensors.str();
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!os) throw DataError("write failed: " + path);
}

NetworkWeights load_network(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open weights blob: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kBlobMagic, 4) != 0)
        throw DataError("bad weights blob magic in " + path);
    uint32_t version = 0, cfg_len = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    is.read(reinterpret_cast<char*>(&cfg_len), 4);
    if (!is || version != kBlobVersion)
        throw DataError("unsupported weights blob version in " + path);
    std::string cfg(cfg_len, '\0');
    is.read(cfg.data(), cfg_len);
    if (!is) throw DataError("weights blob truncated: " + path);

    NetworkWeights w;
    w.config = config_from_json(json::parse(cfg));

    // The remainder is a tensor container; hand it to the tensor reader via a
    // temp spill to keep one reader implementation.
    std::stringstream rest;
    rest << is.rdbuf();
    std::string tmp = path + ".read.tmp";
    {
        std::ofstream t(tmp, std::ios::binary);
        t << rest.str();
    }
    w.tensors = read_tensor_file(tmp);
    std::remove(tmp.c_str());
    return w;
}

static Tensor randn(std::vector<int> shape, scalar_t stddev, std::mt19937_64& rng) {
    std::normal_distribution<scalar_t> dist(0.0, stddev);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = dist(rng);
    return t;
}

NetworkWeights init_network_weights(const NetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    NetworkWeights w;
    w.config = cfg;
    auto& t = w.tensors;
    int V = static_cast<int>(cfg.vocabulary.size());
    int D = cfg.d_text, L = cfg.context_length, DA = cfg.d_attn;
    int C = cfg.latent_channels, C0 = cfg.ch0, C1 = cfg.ch1, TH = cfg.time_hidden;

    t["te.embed"] = randn({V, D}, 0.3, rng);
    t["te.pos"] = randn({L, D}, 0.1, rng);
    t["te.wq"] = randn({D, D}, 1.0 / std::sqrt(D), rng);
    t["te.wk"] = randn({D, D}, 1.0 / std::sqrt(D), rng);
    t["te.wv"] = randn({D, D}, 1.0 / std::sqrt(D), rng);
    t["te.wo"] = randn({D, D}, 1.0 / std::sqrt(D), rng);
    t["te.ln1.g"] = Tensor({D}, 1.0);
    t["te.ln1.b"] = Tensor({D}, 0.0);
    t["te.mlp.w1"] = randn({D, 2 * D}, 1.0 / std::sqrt(D), rng);
    t["te.mlp.b1"] = Tensor({2 * D}, 0.0);
    t["te.mlp.w2"] = randn({2 * D, D}, 1.0 / std::sqrt(2.0 * D), rng);
    t["te.mlp.b2"] = Tensor({D}, 0.0);
    t["te.ln2.g"] = Tensor({D}, 1.0);
    t["te.ln2.b"] = Tensor({D}, 0.0);

    t["un.time.w1"] = randn({D, TH}, 1.0 / std::sqrt(D), rng);
    t["un.time.b1"] = Tensor({TH}, 0.0);
    t["un.time.w2a"] = randn({TH, C0}, 1.0 / std::sqrt(TH), rng);
    t["un.time.b2a"] = Tensor({C0}, 0.0);
    t["un.time.w2b"] = randn({TH, C1}, 1.0 / std::sqrt(TH), rng);
    t["un.time.b2b"] = Tensor({C1}, 0.0);

    t["un.conv_in.w"] = randn({C0, C, 3, 3}, std::sqrt(2.0 / (C * 9)), rng);
    t["un.conv_in.b"] = Tensor({C0}, 0.0);
    t["un.down.w"] = randn({C1, C0, 3, 3}, std::sqrt(2.0 / (C0 * 9)), rng);
    t["un.down.b"] = Tensor({C1}, 0.0);

    t["un.attn.wq"] = randn({C1, DA}, 1.0 / std::sqrt(C1), rng);
    t["un.attn.wk"] = randn({D, DA}, 1.0 / std::sqrt(D), rng);
    t["un.attn.wv"] = randn({D, DA}, 1.0 / std::sqrt(D), rng);
    t["un.attn.wo"] = randn({DA, C1}, 1.0 / std::sqrt(DA), rng);

    t["un.mid.w"] = randn({C1, C1, 3, 3}, std::sqrt(2.0 / (C1 * 9)), rng);
    t["un.mid.b"] = Tensor({C1}, 0.0);
    t["un.up.w"] = randn({C0, C1 + C0, 3, 3}, std::sqrt(2.0 / ((C1 + C0) * 9)), rng);
    t["un.up.b"] = Tensor({C0}, 0.0);
    t["un.out.w"] = Tensor({C, C0, 3, 3}, 0.0);  // zero init: initial prediction is zero noise
    t["un.out.b"] = Tensor({C}, 0.0);
    return w;
}

ParamVars make_param_vars(const NetworkWeights& weights, bool trainable) {
    ParamVars out;
    for (const auto& [name, tensor] : weights.tensors)
        out.emplace(name, trainable ? ag::Var::leaf(tensor) : ag::Var::constant(tensor));
    return out;
}

std::vector<ag::Var> param_list(const ParamVars& params) {
    std::vector<ag::Var> out;
    out.reserve(params.size());
    for (const auto& [name, v] : params) out.push_back(v);
    return out;
}

static const ag::Var& P(const ParamVars& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw DataError("missing network parameter: " + name);
    return it->second;
}

ag::Var text_encode_graph(const NetworkConfig& cfg, const ParamVars& params,
                          const std::vector<int>& token_ids, const std::map<int, ag::Var>& overrides) {
    if (static_cast<int>(token_ids.size()) != cfg.context_length)
        throw DataError("encode_text: expected " + std::to_string(cfg.context_length) +
                        " token ids, got " + std::to_string(token_ids.size()));
    for (const auto& [pos, v] : overrides) {
        if (pos < 0 || pos >= cfg.context_length)
            throw DataError("encode_text: override position " + std::to_string(pos) +
                            " outside context length " + std::to_string(cfg.context_length));
        require_shape(v.value(), {cfg.d_text}, "embedding override");
    }
    const Tensor& embed = P(params, "te.embed").value();
    std::vector<ag::Var> rows;
    rows.reserve(token_ids.size());
    for (size_t i = 0; i < token_ids.size(); ++i) {
        auto ov = overrides.find(static_cast<int>(i));
        if (ov != overrides.end()) {
            rows.push_back(ov->second);
            continue;
        }
        int id = token_ids[i];
        if (id < 0 || id >= embed.shape[0])
            throw DataError("encode_text: token id " + std::to_string(id) + " outside vocabulary");
        Tensor r({cfg.d_text});
        for (int j = 0; j < cfg.d_text; ++j) r[j] = embed.at2(id, j);
        rows.push_back(ag::Var::constant(std::move(r)));
    }
    using namespace ag;
    Var x = add(concat_rows(rows), P(params, "te.pos"));
    Var h = layer_norm_rows(x, P(params, "te.ln1.g"), P(params, "te.ln1.b"));
    Var q = matmul(h, P(params, "te.wq"));
    Var k = matmul(h, P(params, "te.wk"));
    Var v = matmul(h, P(params, "te.wv"));
    Var attn = softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<scalar_t>(cfg.d_text))));
    Var a = add(x, matmul(matmul(attn, v), P(params, "te.wo")));
    Var h2 = layer_norm_rows(a, P(params, "te.ln2.g"), P(params, "te.ln2.b"));
    Var m = add_row_bias(matmul(silu(add_row_bias(matmul(h2, P(params, "te.mlp.w1")), P(params, "te.mlp.b1"))),
                                P(params, "te.mlp.w2")),
                         P(params, "te.mlp.b2"));
    return add(a, m);
}

static Tensor sinusoidal_time_embedding(int timestep, int dim) {
    Tensor t({dim});
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        scalar_t freq = std::exp(-std::log(10000.0) * static_cast<scalar_t>(i) / half);
        scalar_t arg = static_cast<scalar_t>(timestep) * freq;
        t[2 * i] = std::sin(arg);
        t[2 * i + 1] = std::cos(arg);
    }
    return t;
}

UnetGraphOut unet_graph(const NetworkConfig& cfg, const ParamVars& params, const Tensor& z,
                        int timestep, const ag::Var& cond, AttentionController* controller) {
    require_shape(z, {cfg.latent_channels, cfg.latent_hw, cfg.latent_hw}, "unet latent");
    if (timestep < 0 || timestep >= cfg.train_timesteps)
        throw DataError("predict_noise: timestep " + std::to_string(timestep) + " outside [0, " +
                        std::to_string(cfg.train_timesteps) + ")");
    require_shape(cond.value(), {cfg.context_length, cfg.d_text}, "unet conditioning");
    using namespace ag;

    Var temb = Var::constant(
        Tensor::from({1, cfg.d_text}, sinusoidal_time_embedding(timestep, cfg.d_text).data));
    Var th = silu(add_row_bias(matmul(temb, P(params, "un.time.w1")), P(params, "un.time.b1")));
    Var tb1 = reshape(add_row_bias(matmul(th, P(params, "un.time.w2a")), P(params, "un.time.b2a")),
                      {cfg.ch0});
    Var tb2 = reshape(add_row_bias(matmul(th, P(params, "un.time.w2b")), P(params, "un.time.b2b")),
                      {cfg.ch1});

    Var zin = Var::constant(z);
    Var h1 = silu(add_channel_bias(conv3x3(zin, P(params, "un.conv_in.w"), P(params, "un.conv_in.b")),
                                   tb1));
    Var h2 = silu(add_channel_bias(
        conv3x3(avg_pool2(h1), P(params, "un.down.w"), P(params, "un.down.b")), tb2));

    int r = cfg.attn_resolution();
    Var cells = to_cell_rows(h2);  // [r*r x ch1]
    Var q = matmul(cells, P(params, "un.attn.wq"));
    Var k = matmul(cond, P(params, "un.attn.wk"));
    Var v = matmul(cond, P(params, "un.attn.wv"));
    Var attn = softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<scalar_t>(cfg.d_attn))));
    if (controller) {
        Tensor replaced = attn.value();
        if (controller->transform("mid.cross", r, replaced)) {
            // Injected weights are treated as data, not part of the graph.
            attn = Var::constant(std::move(replaced));
        }
    }
    Var ctx = matmul(attn, v);
    Var h3 = add(h2, from_cell_rows(matmul(ctx, P(params, "un.attn.wo")), r, r));

    Var h4 = silu(conv3x3(h3, P(params, "un.mid.w"), P(params, "un.mid.b")));
    Var h5 = silu(conv3x3(concat_channels(upsample2(h4), h1), P(params, "un.up.w"), P(params, "un.up.b")));
    Var noise = conv3x3(h5, P(params, "un.out.w"), P(params, "un.out.b"));
    return UnetGraphOut{noise, attn};
}

WordTokenizer::WordTokenizer(std::vector<std::string> vocabulary, int context_length)
    : vocab_(std::move(vocabulary)), context_length_(context_length) {
    for (size_t i = 0; i < vocab_.size(); ++i) index_[vocab_[i]] = static_cast<int>(i);
}

static std::vector<std::string> split_words(const std::string& prompt) {
    std::vector<std::string> words;
    std::istringstream is(prompt);
    std::string w;
    while (is >> w) {
        for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        words.push_back(w);
    }
    return words;
}

int WordTokenizer::id_of(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw DataError("word not in vocabulary: \"" + word + "\"");
    return it->second;
}

std::vector<int> WordTokenizer::tokenize(const std::string& prompt) const {
    auto words = split_words(prompt);
    if (static_cast<int>(words.size()) > context_length_)
        throw DataError("prompt exceeds context length " + std::to_string(context_length_));
    std::vector<int> ids(static_cast<size_t>(context_length_), 0);
    for (size_t i = 0; i < words.size(); ++i) ids[i] = id_of(words[i]);
    return ids;
}

std::vector<std::pair<int, int>> WordTokenizer::token_spans(const std::string& prompt) const {
    auto words = split_words(prompt);
    if (static_cast<int>(words.size()) > context_length_)
        throw DataError("prompt exceeds context length " + std::to_string(context_length_));
    std::vector<std::pair<int, int>> spans;
    for (size_t i = 0; i < words.size(); ++i)
        spans.emplace_back(static_cast<int>(i), static_cast<int>(i) + 1);
    return spans;
}

NetworkAdapter::NetworkAdapter(NetworkWeights weights, std::string checkpoint_hash)
    : weights_(std::move(weights)),
      params_(make_param_vars(weights_, /*trainable=*/false)),
      tokenizer_(weights_.config.vocabulary, weights_.config.context_length) {
    weights_.config.validate();
    const auto& c = weights_.config;
    spec_.latent_shape = {c.latent_channels, c.latent_hw, c.latent_hw};
    spec_.attention_layers = {{"mid.cross", c.attn_resolution()}};
    spec_.d_text = c.d_text;
    spec_.context_length = c.context_length;
    spec_.image_size = c.image_size;
    spec_.train_timesteps = c.train_timesteps;
    spec_.codec_tolerance = 1e-9;  // exact on block-constant images
    spec_.validate();

    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : weights_.tensors) {
        uint64_t hn = fnv1a64(name.data(), name.size());
        uint64_t hd = fnv1a64(t.data.data(), t.data.size() * sizeof(scalar_t));
        h ^= hn;
        h *= 1099511628211ull;
        h ^= hd;
        h *= 1099511628211ull;
    }
    checksum_ = h;
    spec_.checkpoint_hash = checkpoint_hash.empty() ? checksum_hex(checksum_) : checkpoint_hash;
}

Tensor NetworkAdapter::token_input_embedding(int token_id) const {
    const Tensor& embed = weights_.tensors.at("te.embed");
    if (token_id < 0 || token_id >= embed.shape[0])
        throw DataError("token id " + std::to_string(token_id) + " outside vocabulary");
    Tensor r({weights_.config.d_text});
    for (int j = 0; j < weights_.config.d_text; ++j) r[j] = embed.at2(token_id, j);
    return r;
}

ConditioningEmbedding NetworkAdapter::encode_text(const std::vector<int>& token_ids,
                                                  const std::map<int, Tensor>& overrides) const {
    std::map<int, ag::Var> ov;
    for (const auto& [pos, t] : overrides) ov.emplace(pos, ag::Var::constant(t));
    ag::Var out = text_encode_graph(weights_.config, params_, token_ids, ov);
    return ConditioningEmbedding{out.value(), token_ids};
}

ag::Var NetworkAdapter::encode_text_graph(const std::vector<int>& token_ids,
                                          const std::map<int, ag::Var>& overrides) const {
    return text_encode_graph(weights_.config, params_, token_ids, overrides);
}

Latent NetworkAdapter::encode_image(const Tensor& image) const {
    const auto& c = weights_.config;
    require_shape(image, {3, c.image_size, c.image_size}, "encode_image input");
    int b = c.block(), hw = c.latent_hw;
    Tensor z({c.latent_channels, hw, hw}, 0.0);
    scalar_t inv = 1.0 / (b * b);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                scalar_t s = 0;
                for (int dy = 0; dy < b; ++dy)
                    for (int dx = 0; dx < b; ++dx) s += image.at3(ch, y * b + dy, x * b + dx);
                z.at3(ch, y, x) = 2.0 * s * inv - 1.0;  // block mean mapped to [-1, 1]
            }
    return Latent{std::move(z), std::nullopt};
}

Tensor NetworkAdapter::decode_latent(const Latent& z) const {
    const auto& c = weights_.config;
    require_shape(z.data, {c.latent_channels, c.latent_hw, c.latent_hw}, "decode_latent input");
    int b = c.block(), hw = c.latent_hw;
    Tensor img({3, c.image_size, c.image_size});
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                scalar_t v = 0.5 * (z.data.at3(ch, y, x) + 1.0);
                v = std::min(1.0, std::max(0.0, v));
                for (int dy = 0; dy < b; ++dy)
                    for (int dx = 0; dx < b; ++dx) img.at3(ch, y * b + dy, x * b + dx) = v;
            }
    return img;
}

Tensor NetworkAdapter::predict_noise(const Latent& z, int timestep, const ConditioningEmbedding& cond,
                                     AttentionSink* sink, AttentionController* controller) const {
    ag::Var cond_var = ag::Var::constant(cond.data);
    UnetGraphOut out = unet_graph(weights_.config, params_, z.data, timestep, cond_var, controller);
    if (sink) {
        const Tensor& a = out.attention.value();
        CapturedAttention cap;
        cap.layer_id = "mid.cross";
        cap.resolution = weights_.config.attn_resolution();
        cap.heads = 1;
        cap.d_key = weights_.config.d_attn;
        cap.weights = Tensor::from({1, a.shape[0], a.shape[1]}, a.data);
        sink->layers.push_back(std::move(cap));
    }
    return out.noise.value();
}

ag::Var NetworkAdapter::predict_noise_graph(const Latent& z, int timestep, const ag::Var& cond,
                                            AttentionGraphCapture* capture,
                                            AttentionController* controller) const {
    UnetGraphOut out = unet_graph(weights_.config, params_, z.data, timestep, cond, controller);
    if (capture) {
        AttentionGraphCapture::Layer layer;
        layer.layer_id = "mid.cross";
        layer.resolution = weights_.config.attn_resolution();
        layer.heads = 1;
        layer.d_key = weights_.config.d_attn;
        layer.weights = out.attention;
        capture->layers.push_back(std::move(layer));
    }
    return out.noise;
}

uint64_t NetworkAdapter::weights_checksum() const { return checksum_; }

std::shared_ptr<NetworkAdapter> load_network_adapter(const std::string& blob_path) {
    NetworkWeights w = load_network(blob_path);
    return std::make_shared<NetworkAdapter>(std::move(w), checksum_hex(file_checksum(blob_path)));
}

}  // namespace locinv
