#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "saesteer/matrix.hpp"
#include "saesteer/model.hpp"

namespace saesteer {

// SAE latent activations: one row per token position, width d_sae.
// Entrywise non-negative as produced by encode(); steering actions may
// write arbitrary (typically large negative) values, so post-steering
// batches are exempt from the non-negativity invariant.
struct LatentBatch {
    Matrix values;
};

// Sparse autoencoder parameters plus provenance. Encode is
// f_i = pre_i > threshold_i ? pre_i : 0 with pre = W_enc x + b_enc
// (plain rectification when all thresholds are zero, jump-style otherwise).
// Decode is x_hat = W_dec f + b_dec.
struct SparseAutoencoder {
    Matrix w_enc;                      // [d_sae x d_model]
    std::vector<float> b_enc;          // [d_sae]
    Matrix w_dec;                      // [d_model x d_sae]
    std::vector<float> b_dec;          // [d_model]
    std::vector<float> jump_threshold; // empty means all zeros (plain relu)

    // When set, b_dec is subtracted from the input before encoding, a
    // convention some externally trained SAEs use. Off by default.
    bool subtract_b_dec_on_encode = false;

    std::string release;
    std::string sae_id;
    int layer = 0;

    int d_model() const { return w_enc.cols(); }
    int d_sae() const { return w_enc.rows(); }
};

// Checks dimensional consistency, overcompleteness (d_sae >= d_model) and
// non-zero decoder columns; raises config_error / shape_error naming the
// offending block.
void validate_sae(const SparseAutoencoder& sae);

// f = rectify(W_enc x + b_enc) per position; width mismatch raises shape_error.
LatentBatch encode(const SparseAutoencoder& sae, const ActivationBatch& acts);

// x_hat = W_dec f + b_dec per position; width mismatch raises shape_error.
ActivationBatch decode(const SparseAutoencoder& sae, const LatentBatch& latents);

// SAE directory format: sidecar "sae.json" with keys release, sae_id,
// layer, d_model, d_sae, activation, shapes; parameter blocks as raw
// little-endian float32 files. Load errors name the offending field.
void save_sae(const SparseAutoencoder& sae, const std::filesystem::path& dir);
SparseAutoencoder load_sae(const std::filesystem::path& dir);

// Builds an SAE with planted ground-truth features: latent i of each
// (i, direction) pair fires on (and reconstructs) its direction, which is
// normalized internally; planted directions should be mutually orthogonal
// for clean round trips. Remaining rows/columns are random with norm
// noise_scale. Duplicate or out-of-range planted indices raise
// std::invalid_argument.
SparseAutoencoder make_toy_sae(std::int64_t seed, int d_model, int d_sae,
                               const std::vector<std::pair<int, std::vector<float>>>& planted,
                               int layer = 0, float noise_scale = 1e-3f);

} // namespace saesteer
