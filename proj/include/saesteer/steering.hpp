#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "saesteer/model.hpp"
#include "saesteer/sae.hpp"

namespace saesteer {

// The six hook actions of the steering format. add works on the residual
// stream; the clamp family works on SAE latents; print and debug are
// side-channel inspection actions.
enum class HookAction { add, clamp, clamp_cond, clamp_refusal, print, debug };

const char* to_string(HookAction action);
std::optional<HookAction> hook_action_from_string(std::string_view name);

struct SteeringRow {
    int latent_idx = 0;
    HookAction hook_action = HookAction::clamp;
    double steering_coefficient = 0.0;
    std::string sae_id;
    std::string sae_release;
    std::optional<double> clamp_value; // required by clamp_cond / clamp_refusal
    std::optional<int> refusal_id;     // required by clamp_refusal
    std::string description;           // auxiliary
    std::string url;                   // auxiliary
};

struct SteeringSpec {
    std::vector<SteeringRow> rows;

    // Refusal Clamp trigger granularity. The default evaluates the firing
    // condition per token position; the sequence-global alternative writes
    // the refusal latent at every position once any monitored latent fires
    // anywhere in the sequence. Engine-level option, not part of the CSV.
    bool refusal_sequence_global = false;
};

// Checks the v1 spec invariants: a single (sae_release, sae_id) pair across
// rows, clamp_value present for clamp_cond / clamp_refusal, refusal_id
// present for clamp_refusal, and all clamp_refusal rows sharing the same
// refusal_id, clamp_value and steering_coefficient. Violations raise
// specification_error.
void validate_spec(const SteeringSpec& spec);

// Optional side channels for print / debug actions. print writes the batch
// shape and summary statistics to `diagnostics`; debug invokes `handler`,
// which may edit the latents. With nothing registered both are pass-through.
// Handler failures are logged to diagnostics and never propagate.
struct InspectionHooks {
    std::ostream* diagnostics = nullptr;
    std::function<void(LatentBatch&)> debug_handler;
};

// add: x'_p = x_p + coefficient * W_dec[:, latent_idx] for every position.
ActivationBatch apply_add(const ActivationBatch& acts, const SparseAutoencoder& sae, const SteeringRow& row);

// clamp: positions where latents[p, latent_idx] > 0 are set to the
// coefficient; everything else is untouched.
LatentBatch apply_clamp(const LatentBatch& latents, const SteeringRow& row);

// The Clamp Prime primitive: same as clamp but the firing condition is
// latents[p, latent_idx] > clamp_value.
LatentBatch apply_clamp_cond(const LatentBatch& latents, const SteeringRow& row);

// The Refusal Clamp primitive: at every position where any row's monitored
// latent exceeds clamp_value, the shared refusal latent is set to the
// coefficient; monitored latents themselves stay unchanged. With
// sequence_global, one firing position triggers the write at every position.
LatentBatch apply_clamp_refusal(const LatentBatch& latents, const std::vector<SteeringRow>& rows,
                                bool sequence_global = false);

// print/debug side channel; returns the (possibly handler-edited) batch.
LatentBatch run_side_action(HookAction action, const LatentBatch& latents, const InspectionHooks* hooks);

// Builds the residual hook implementing `spec` at sae.layer: f = encode(x),
// rows apply in file order (clamp family edits latents, add edits the
// residual directly, print/debug run the side channel), then positions whose
// latents changed receive x' = x + decode(f') - decode(f). Positions with
// unchanged latents are left bit-identical, which makes empty and
// never-firing specs exact no-ops.
ResidualHook make_steering_hook(const SparseAutoencoder& sae, const SteeringSpec& spec,
                                const InspectionHooks* hooks = nullptr);

// Full steered forward pass; returns logits.
Matrix steer_forward(const Model& model, const SparseAutoencoder& sae, const SteeringSpec& spec,
                     TokenSpan tokens, const InspectionHooks* hooks = nullptr);

// A plain or steered scoring context; sae/spec null means the unmodified
// model. Immutable and cheap to copy, so independent contexts can evaluate
// in parallel against a shared model.
struct ModelContext {
    const Model* model = nullptr;
    const SparseAutoencoder* sae = nullptr;
    const SteeringSpec* spec = nullptr;
    const InspectionHooks* hooks = nullptr;

    bool steered() const { return sae != nullptr && spec != nullptr; }
    Matrix logits(TokenSpan tokens) const;
    double answer_loglikelihood(TokenSpan prompt, TokenSpan continuation) const;
    std::vector<int> greedy_decode(TokenSpan prompt, int count) const;
    std::vector<int> tokenize(std::string_view text) const { return model->tokenize(text); }
};

} // namespace saesteer
