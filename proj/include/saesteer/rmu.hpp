#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "saesteer/features.hpp"
#include "saesteer/model.hpp"

namespace saesteer {

// Representation misdirection at toy scale: drive forget-input activations
// at target_layer toward a fixed random direction s*u while pinning
// retain-input activations to the frozen model,
//   L = mean_p ||h(x_f)_p - s*u||^2 + alpha * mean_p ||h(x_r)_p - h_frozen(x_r)_p||^2,
// optimized with plain SGD over a deterministic batch order (step i pairs
// forget[i % F] with retain[i % R]). All parameters up to and including
// block target_layer are updated (embeddings too); later blocks and the
// unembedding stay frozen.
struct RMUConfig {
    double steering_scale = 400.0; // s
    double retain_weight = 300.0;  // alpha
    int target_layer = 3;
    int steps = 0;
    double learning_rate = 1e-3;
    std::int64_t seed = 0;
};

struct RmuTraceStep {
    double total = 0.0;
    double forget_term = 0.0;  // unweighted mean squared distance to s*u
    double retain_term = 0.0;  // unweighted mean squared drift from frozen
};

struct RmuTrainResult {
    std::unique_ptr<ToyModel> model;
    std::vector<RmuTraceStep> trace;
};

// u is drawn uniformly on the unit sphere from stream (seed, "rmu_direction").
std::vector<double> rmu_random_unit_direction(std::int64_t seed, int d_model);

// steps = 0 returns a bit-identical copy with an empty trace. Empty corpora
// raise std::invalid_argument; an out-of-range target_layer raises
// std::out_of_range.
RmuTrainResult rmu_train(const ToyModel& model, const Corpus& forget_corpus, const Corpus& retain_corpus,
                         const RMUConfig& config);

struct RmuProbe {
    double forget_distance = 0.0; // mean Euclidean distance of activations to s*u
    double retain_drift = 0.0;    // mean Euclidean distance to the frozen activations
};

// Diagnostic distances at `layer` over every position of `corpus`.
RmuProbe rmu_probe(const Model& model, const Model& frozen, const Corpus& corpus, int layer, double s,
                   const std::vector<double>& u);

void write_loss_trace_csv(const std::vector<RmuTraceStep>& trace, const std::string& path);

namespace detail {

// Gradients for the trainable tensors, flattened row-major, aligned with
// the tensor name order. Exposed so tests can check the analytic gradients
// against finite differences.
struct RmuGradients {
    std::vector<std::pair<std::string, std::vector<double>>> by_tensor;
    std::vector<double>* find(const std::string& name);
};

std::vector<std::string> trainable_tensor_names(const ModelConfig& config, int target_layer);

// Double-precision loss (and optionally gradients) for one forget/retain
// sequence pair. frozen_retain holds the frozen model's activations for the
// retain sequence at target_layer.
double rmu_pair_loss(const ToyModel& model, TokenSpan forget_seq, TokenSpan retain_seq,
                     const std::vector<std::vector<double>>& frozen_retain,
                     const std::vector<double>& target, double retain_weight, int target_layer,
                     RmuGradients* grads, double* forget_term, double* retain_term);

// Frozen activations at target_layer computed with the same double-precision
// path the trainer differentiates.
std::vector<std::vector<double>> tape_activations(const ToyModel& model, TokenSpan tokens, int target_layer);

} // namespace detail

} // namespace saesteer
