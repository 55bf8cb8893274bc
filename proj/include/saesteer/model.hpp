#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saesteer/matrix.hpp"

namespace saesteer {

using TokenSpan = std::span<const int>;

struct ModelConfig {
    int d_model = 16;
    int n_layers = 2;
    int n_heads = 4;
    int vocab_size = 64;
    int max_seq_len = 64; // learned positional embeddings need a fixed horizon
    std::int64_t seed = 0;
};

// Residual-stream vectors captured at one hook point: one row per token
// position, width d_model.
struct ActivationBatch {
    Matrix values;
    int layer = 0;
    std::vector<int> token_ids;
};

// In-place transform of the residual stream at one layer. Hooks run after
// the given block, in registration order. An identity transform leaves the
// forward output bit-identical.
struct ResidualHook {
    int layer = 0;
    std::function<void(ActivationBatch&)> transform;
};

// Adapter contract for hookable autoregressive models. External models plug
// in by implementing this interface; everything downstream (steering,
// feature selection, evaluation, attacks) works against it.
//
// forward() returns next-token logits for every position, shape
// [len(tokens) x vocab_size]. Hooks observe and may rewrite the residual
// stream after their block; all positions are exposed and callers decide
// which to read.
class Model {
public:
    virtual ~Model() = default;

    virtual int d_model() const = 0;
    virtual int n_layers() const = 0;
    virtual int vocab_size() const = 0;

    virtual Matrix forward(TokenSpan tokens, std::span<const ResidualHook> hooks) const = 0;

    // Deterministic text-to-token mapping. The toy tokenizer splits on
    // whitespace and maps each word to fnv1a64(word) % vocab_size; fidelity
    // to any real tokenizer is out of scope.
    virtual std::vector<int> tokenize(std::string_view text) const = 0;

    Matrix forward(TokenSpan tokens) const { return forward(tokens, {}); }
};

// Deterministic pre-norm decoder-only toy transformer with learned
// positional embeddings and RMS normalization (no learnable norm gains, no
// biases). Per block: x += attn(rmsnorm(x)); x += mlp(rmsnorm(x)); a hook
// point exposes the residual stream after each block. Logits are
// lm_head * rmsnorm(x) after the last block.
//
// All weights are float32, filled in a fixed documented order (wte, wpe,
// then per layer wq, wk, wv, wo, w1, w2, then lm_head) from a single Rng
// stream seeded with config.seed, each entry drawn as normal(0, 0.08).
class ToyModel final : public Model {
public:
    explicit ToyModel(const ModelConfig& config); // seeded init
    ToyModel(const ModelConfig& config, bool zero_init);

    int d_model() const override { return config_.d_model; }
    int n_layers() const override { return config_.n_layers; }
    int vocab_size() const override { return config_.vocab_size; }
    const ModelConfig& config() const { return config_; }

    using Model::forward;
    Matrix forward(TokenSpan tokens, std::span<const ResidualHook> hooks) const override;
    std::vector<int> tokenize(std::string_view text) const override;

    // Named access to every weight tensor, for serialization, fixtures and
    // the RMU trainer. Mutation is only safe before the model is shared
    // across threads.
    static std::vector<std::string> tensor_names(const ModelConfig& config);
    const Matrix& tensor(std::string_view name) const;
    Matrix& tensor(std::string_view name);

    bool same_weights(const ToyModel& other) const;

private:
    ModelConfig config_;
    Matrix wte_;                // [vocab x d_model]
    Matrix wpe_;                // [max_seq_len x d_model]
    struct Block {
        Matrix wq, wk, wv, wo;  // [d_model x d_model]
        Matrix w1;              // [4*d_model x d_model]
        Matrix w2;              // [d_model x 4*d_model]
    };
    std::vector<Block> blocks_;
    Matrix lm_head_;            // [vocab x d_model]
};

// Validates config and seeds the weights; invalid dimensions raise
// config_error. Identical (config, seed) produce bit-identical weights.
std::unique_ptr<ToyModel> build_toy_model(const ModelConfig& config);

// Residual-stream capture at `layer` (0-based block index). Returns one row
// per token; the empty token sequence yields a 0-row batch. Out-of-range
// layers raise std::out_of_range.
ActivationBatch capture_activations(const Model& model, TokenSpan tokens, int layer);

// Sum of log-probabilities of `continuation` tokens conditioned on `prompt`
// plus the preceding continuation tokens. Log-probs are accumulated in
// double from the float logits. Empty continuation or empty prompt raise
// std::invalid_argument (the first continuation token needs a conditioning
// position).
double answer_loglikelihood(const Model& model, TokenSpan prompt, TokenSpan continuation,
                            std::span<const ResidualHook> hooks = {});

// Greedy argmax decode of `count` tokens following `prompt` (ties resolve
// to the lowest token id).
std::vector<int> greedy_decode(const Model& model, TokenSpan prompt, int count,
                               std::span<const ResidualHook> hooks = {});

// Weight directory round-trip: raw little-endian float32 tensors plus a
// "model.json" sidecar carrying the config, seed and tensor shapes.
void save_model(const ToyModel& model, const std::filesystem::path& dir);
std::unique_ptr<ToyModel> load_model(const std::filesystem::path& dir);

// Numerically stable log-softmax lookup: log P(index) under softmax(row).
double log_softmax_at(std::span<const float> logits, int index);

} // namespace saesteer
