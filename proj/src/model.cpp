#include "saesteer/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "saesteer/errors.hpp"
#include "saesteer/rng.hpp"
#include "saesteer/tensor_io.hpp"

namespace saesteer {

namespace {

constexpr float kInitStd = 0.08f;
constexpr float kRmsEps = 1e-6f;

void validate_config(const ModelConfig& c) {
    if (c.d_model <= 0 || c.n_layers <= 0 || c.n_heads <= 0 || c.vocab_size <= 0 || c.max_seq_len <= 0)
        throw config_error("model dimensions must be positive");
    if (c.d_model % c.n_heads != 0)
        throw config_error("d_model (" + std::to_string(c.d_model) + ") must be divisible by n_heads (" +
                           std::to_string(c.n_heads) + ")");
}

void fill_normal(Matrix& m, Rng& rng, float stddev) {
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c)
            m(r, c) = static_cast<float>(rng.normal()) * stddev;
}

// y = x / sqrt(mean(x^2) + eps), applied per row.
void rmsnorm_row(std::span<const float> x, std::span<float> y) {
    double ms = 0.0;
    for (float v : x) ms += static_cast<double>(v) * v;
    const float scale = 1.0f / std::sqrt(static_cast<float>(ms / static_cast<double>(x.size())) + kRmsEps);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * scale;
}

// y = W x for row-major W [out x in].
void matvec(const Matrix& w, std::span<const float> x, std::span<float> y) {
    for (int o = 0; o < w.rows(); ++o) {
        float acc = 0.0f;
        const float* row = w.data() + static_cast<std::size_t>(o) * w.cols();
        for (int i = 0; i < w.cols(); ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

} // namespace

ToyModel::ToyModel(const ModelConfig& config) : ToyModel(config, false) {
    Rng rng(static_cast<std::uint64_t>(config.seed));
    fill_normal(wte_, rng, kInitStd);
    fill_normal(wpe_, rng, kInitStd);
    for (auto& b : blocks_) {
        fill_normal(b.wq, rng, kInitStd);
        fill_normal(b.wk, rng, kInitStd);
        fill_normal(b.wv, rng, kInitStd);
        fill_normal(b.wo, rng, kInitStd);
        fill_normal(b.w1, rng, kInitStd);
        fill_normal(b.w2, rng, kInitStd);
    }
    fill_normal(lm_head_, rng, kInitStd);
}

ToyModel::ToyModel(const ModelConfig& config, bool /*zero_init*/) : config_(config) {
    validate_config(config);
    const int d = config.d_model;
    wte_ = Matrix(config.vocab_size, d);
    wpe_ = Matrix(config.max_seq_len, d);
    blocks_.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& b : blocks_) {
        b.wq = Matrix(d, d);
        b.wk = Matrix(d, d);
        b.wv = Matrix(d, d);
        b.wo = Matrix(d, d);
        b.w1 = Matrix(4 * d, d);
        b.w2 = Matrix(d, 4 * d);
    }
    lm_head_ = Matrix(config.vocab_size, d);
}

std::unique_ptr<ToyModel> build_toy_model(const ModelConfig& config) {
    return std::make_unique<ToyModel>(config);
}

Matrix ToyModel::forward(TokenSpan tokens, std::span<const ResidualHook> hooks) const {
    const int d = config_.d_model;
    const int n = static_cast<int>(tokens.size());
    if (n > config_.max_seq_len)
        throw std::out_of_range("sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                                std::to_string(config_.max_seq_len));
    for (int t : tokens)
        if (t < 0 || t >= config_.vocab_size)
            throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
    for (const auto& h : hooks)
        if (h.layer < 0 || h.layer >= config_.n_layers)
            throw std::out_of_range("hook layer " + std::to_string(h.layer) + " outside model depth");

    Matrix logits(n, config_.vocab_size);
    if (n == 0) return logits;

    // Residual stream, one row per position.
    Matrix x(n, d);
    for (int p = 0; p < n; ++p)
        for (int i = 0; i < d; ++i)
            x(p, i) = wte_(tokens[p], i) + wpe_(p, i);

    const int n_heads = config_.n_heads;
    const int head_dim = d / n_heads;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

    Matrix normed(n, d), q(n, d), k(n, d), v(n, d), mixed(n, d);
    std::vector<float> scores(static_cast<std::size_t>(n));
    std::vector<float> tmp(static_cast<std::size_t>(4 * d));
    std::vector<float> proj(static_cast<std::size_t>(d));

    for (int layer = 0; layer < config_.n_layers; ++layer) {
        const Block& b = blocks_[static_cast<std::size_t>(layer)];

        // attention sublayer
        for (int p = 0; p < n; ++p) rmsnorm_row(x.row(p), normed.row(p));
        for (int p = 0; p < n; ++p) {
            matvec(b.wq, normed.row(p), q.row(p));
            matvec(b.wk, normed.row(p), k.row(p));
            matvec(b.wv, normed.row(p), v.row(p));
        }
        for (int p = 0; p < n; ++p) {
            for (int h = 0; h < n_heads; ++h) {
                const int hs = h * head_dim;
                float max_score = -std::numeric_limits<float>::infinity();
                for (int t = 0; t <= p; ++t) {
                    float dot = 0.0f;
                    for (int j = 0; j < head_dim; ++j) dot += q(p, hs + j) * k(t, hs + j);
                    scores[static_cast<std::size_t>(t)] = dot * att_scale;
                    max_score = std::max(max_score, scores[static_cast<std::size_t>(t)]);
                }
                float denom = 0.0f;
                for (int t = 0; t <= p; ++t) {
                    scores[static_cast<std::size_t>(t)] = std::exp(scores[static_cast<std::size_t>(t)] - max_score);
                    denom += scores[static_cast<std::size_t>(t)];
                }
                for (int j = 0; j < head_dim; ++j) {
                    float acc = 0.0f;
                    for (int t = 0; t <= p; ++t) acc += scores[static_cast<std::size_t>(t)] * v(t, hs + j);
                    mixed(p, hs + j) = acc / denom;
                }
            }
        }
        for (int p = 0; p < n; ++p) {
            matvec(b.wo, mixed.row(p), proj);
            for (int i = 0; i < d; ++i) x(p, i) += proj[static_cast<std::size_t>(i)];
        }

        // mlp sublayer
        for (int p = 0; p < n; ++p) {
            rmsnorm_row(x.row(p), normed.row(p));
            matvec(b.w1, normed.row(p), tmp);
            for (float& h : tmp) h = h > 0.0f ? h : 0.0f;
            matvec(b.w2, tmp, proj);
            for (int i = 0; i < d; ++i) x(p, i) += proj[static_cast<std::size_t>(i)];
        }

        // hook point: residual stream after this block
        bool any = false;
        for (const auto& h : hooks) any = any || h.layer == layer;
        if (any) {
            ActivationBatch batch{x, layer, std::vector<int>(tokens.begin(), tokens.end())};
            for (const auto& h : hooks)
                if (h.layer == layer && h.transform) h.transform(batch);
            require_shape(batch.values, n, d, "hook output");
            x = std::move(batch.values);
        }
    }

    for (int p = 0; p < n; ++p) {
        rmsnorm_row(x.row(p), normed.row(p));
        matvec(lm_head_, normed.row(p), logits.row(p));
    }
    return logits;
}

std::vector<int> ToyModel::tokenize(std::string_view text) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start)
            out.push_back(static_cast<int>(fnv1a64(text.substr(start, i - start)) %
                                           static_cast<std::uint64_t>(config_.vocab_size)));
    }
    return out;
}

std::vector<std::string> ToyModel::tensor_names(const ModelConfig& config) {
    std::vector<std::string> names{"wte", "wpe"};
    for (int l = 0; l < config.n_layers; ++l)
        for (const char* part : {"wq", "wk", "wv", "wo", "w1", "w2"})
            names.push_back("layer" + std::to_string(l) + "_" + part);
    names.push_back("lm_head");
    return names;
}

const Matrix& ToyModel::tensor(std::string_view name) const {
    return const_cast<ToyModel*>(this)->tensor(name);
}

Matrix& ToyModel::tensor(std::string_view name) {
    if (name == "wte") return wte_;
    if (name == "wpe") return wpe_;
    if (name == "lm_head") return lm_head_;
    if (name.starts_with("layer")) {
        const auto sep = name.find('_');
        if (sep != std::string_view::npos) {
            const int layer = std::stoi(std::string(name.substr(5, sep - 5)));
            if (layer >= 0 && layer < config_.n_layers) {
                Block& b = blocks_[static_cast<std::size_t>(layer)];
                const auto part = name.substr(sep + 1);
                if (part == "wq") return b.wq;
                if (part == "wk") return b.wk;
                if (part == "wv") return b.wv;
                if (part == "wo") return b.wo;
                if (part == "w1") return b.w1;
                if (part == "w2") return b.w2;
            }
        }
    }
    throw std::invalid_argument("unknown tensor name: " + std::string(name));
}

bool ToyModel::same_weights(const ToyModel& other) const {
    for (const auto& name : tensor_names(config_))
        if (!(tensor(name) == other.tensor(name))) return false;
    return true;
}

ActivationBatch capture_activations(const Model& model, TokenSpan tokens, int layer) {
    if (layer < 0 || layer >= model.n_layers())
        throw std::out_of_range("capture layer " + std::to_string(layer) + " outside model depth");
    ActivationBatch captured;
    captured.layer = layer;
    captured.values = Matrix(0, model.d_model());
    captured.token_ids.assign(tokens.begin(), tokens.end());
    if (tokens.empty()) return captured;

    const ResidualHook hook{layer, [&](ActivationBatch& b) { captured.values = b.values; }};
    model.forward(tokens, {&hook, 1});
    for (int p = 0; p < captured.values.rows(); ++p)
        for (int i = 0; i < captured.values.cols(); ++i)
            if (!std::isfinite(captured.values(p, i)))
                throw std::runtime_error("non-finite activation at position " + std::to_string(p));
    return captured;
}

double log_softmax_at(std::span<const float> logits, int index) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (float v : logits) max_logit = std::max(max_logit, static_cast<double>(v));
    double denom = 0.0;
    for (float v : logits) denom += std::exp(static_cast<double>(v) - max_logit);
    return static_cast<double>(logits[static_cast<std::size_t>(index)]) - max_logit - std::log(denom);
}

double answer_loglikelihood(const Model& model, TokenSpan prompt, TokenSpan continuation,
                            std::span<const ResidualHook> hooks) {
    if (continuation.empty()) throw std::invalid_argument("continuation must be non-empty");
    if (prompt.empty()) throw std::invalid_argument("prompt must be non-empty");

    std::vector<int> full(prompt.begin(), prompt.end());
    full.insert(full.end(), continuation.begin(), continuation.end());
    const Matrix logits = model.forward(full, hooks);

    double total = 0.0;
    for (std::size_t i = 0; i < continuation.size(); ++i) {
        const int pos = static_cast<int>(prompt.size() + i) - 1;
        total += log_softmax_at(logits.row(pos), continuation[i]);
    }
    return total;
}

std::vector<int> greedy_decode(const Model& model, TokenSpan prompt, int count,
                               std::span<const ResidualHook> hooks) {
    if (prompt.empty()) throw std::invalid_argument("prompt must be non-empty");
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (int step = 0; step < count; ++step) {
        const Matrix logits = model.forward(seq, hooks);
        const auto row = logits.row(logits.rows() - 1);
        int best = 0;
        for (int t = 1; t < static_cast<int>(row.size()); ++t)
            if (row[static_cast<std::size_t>(t)] > row[static_cast<std::size_t>(best)]) best = t;
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

void save_model(const ToyModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const ModelConfig& c = model.config();
    nlohmann::json sidecar;
    sidecar["kind"] = "toy_transformer";
    sidecar["seed"] = c.seed;
    sidecar["config"] = {{"d_model", c.d_model},       {"n_layers", c.n_layers},
                         {"n_heads", c.n_heads},       {"vocab_size", c.vocab_size},
                         {"max_seq_len", c.max_seq_len}};
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& name : ToyModel::tensor_names(c)) {
        const Matrix& t = model.tensor(name);
        tensors[name] = {{"shape", {t.rows(), t.cols()}}, {"file", name + ".f32"}};
        write_tensor(dir / (name + ".f32"), t);
    }
    sidecar["tensors"] = tensors;

    std::ofstream out(dir / "model.json");
    if (!out) throw load_error("cannot write sidecar: " + (dir / "model.json").string());
    out << sidecar.dump(2) << "\n";
}

std::unique_ptr<ToyModel> load_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw load_error("missing sidecar: " + (dir / "model.json").string());
    nlohmann::json sidecar;
    try {
        in >> sidecar;
    } catch (const nlohmann::json::exception& e) {
        throw load_error("unreadable model sidecar: " + std::string(e.what()));
    }

    ModelConfig c;
    try {
        const auto& jc = sidecar.at("config");
        c.d_model = jc.at("d_model").get<int>();
        c.n_layers = jc.at("n_layers").get<int>();
        c.n_heads = jc.at("n_heads").get<int>();
        c.vocab_size = jc.at("vocab_size").get<int>();
        c.max_seq_len = jc.at("max_seq_len").get<int>();
        c.seed = sidecar.at("seed").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw load_error("model sidecar missing field: " + std::string(e.what()));
    }

    auto model = std::make_unique<ToyModel>(c, true);
    if (!sidecar.contains("tensors")) throw load_error("model sidecar missing field: tensors");
    const auto& tensors = sidecar.at("tensors");
    for (const auto& name : ToyModel::tensor_names(c)) {
        if (!tensors.contains(name)) throw load_error("model sidecar missing tensor: " + name);
        Matrix& dst = model->tensor(name);
        const auto shape = tensors.at(name).at("shape");
        if (shape.size() != 2 || shape[0].get<int>() != dst.rows() || shape[1].get<int>() != dst.cols())
            throw load_error("tensor " + name + " has unexpected shape in sidecar");
        const std::string file = tensors.at(name).at("file").get<std::string>();
        dst = read_tensor(dir / file, dst.rows(), dst.cols(), name);
    }
    return model;
}

} // namespace saesteer
