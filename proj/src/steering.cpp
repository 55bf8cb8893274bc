#include "saesteer/steering.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "saesteer/errors.hpp"

namespace saesteer {

const char* to_string(HookAction action) {
    switch (action) {
    case HookAction::add: return "add";
    case HookAction::clamp: return "clamp";
    case HookAction::clamp_cond: return "clamp_cond";
    case HookAction::clamp_refusal: return "clamp_refusal";
    case HookAction::print: return "print";
    case HookAction::debug: return "debug";
    }
    return "unknown";
}

std::optional<HookAction> hook_action_from_string(std::string_view name) {
    if (name == "add") return HookAction::add;
    if (name == "clamp") return HookAction::clamp;
    if (name == "clamp_cond") return HookAction::clamp_cond;
    if (name == "clamp_refusal") return HookAction::clamp_refusal;
    if (name == "print") return HookAction::print;
    if (name == "debug") return HookAction::debug;
    return std::nullopt;
}

void validate_spec(const SteeringSpec& spec) {
    const SteeringRow* first = nullptr;
    const SteeringRow* first_refusal = nullptr;
    for (const auto& row : spec.rows) {
        if (!first) first = &row;
        if (row.sae_release != first->sae_release || row.sae_id != first->sae_id)
            throw specification_error("all rows must reference the same (sae_release, sae_id) pair");
        if (row.latent_idx < 0) throw specification_error("latent_idx must be non-negative");
        if ((row.hook_action == HookAction::clamp_cond || row.hook_action == HookAction::clamp_refusal) &&
            !row.clamp_value)
            throw specification_error(std::string(to_string(row.hook_action)) + " row requires clamp_value");
        if (row.hook_action == HookAction::clamp_refusal) {
            if (!row.refusal_id) throw specification_error("clamp_refusal row requires refusal_id");
            if (first_refusal) {
                if (*row.refusal_id != *first_refusal->refusal_id)
                    throw specification_error("clamp_refusal rows disagree on refusal_id");
                if (*row.clamp_value != *first_refusal->clamp_value)
                    throw specification_error("clamp_refusal rows disagree on clamp_value");
                if (row.steering_coefficient != first_refusal->steering_coefficient)
                    throw specification_error("clamp_refusal rows disagree on steering_coefficient");
            } else {
                first_refusal = &row;
            }
        }
    }
}

namespace {

void require_latent(const SteeringRow& row, int d_sae) {
    if (row.latent_idx < 0 || row.latent_idx >= d_sae)
        throw std::out_of_range("latent_idx " + std::to_string(row.latent_idx) + " out of range for d_sae " +
                                std::to_string(d_sae));
}

void require_action(const SteeringRow& row, HookAction want) {
    if (row.hook_action != want)
        throw specification_error(std::string("expected ") + to_string(want) + " row, got " +
                                  to_string(row.hook_action));
}

// Clamp family core: overwrite the target column with the coefficient at
// positions where the monitored column exceeds the threshold.
LatentBatch clamp_where(const LatentBatch& latents, int monitored, double threshold, int target,
                        double coefficient) {
    LatentBatch out = latents;
    for (int p = 0; p < out.values.rows(); ++p)
        if (static_cast<double>(out.values(p, monitored)) > threshold)
            out.values(p, target) = static_cast<float>(coefficient);
    return out;
}

} // namespace

ActivationBatch apply_add(const ActivationBatch& acts, const SparseAutoencoder& sae, const SteeringRow& row) {
    require_action(row, HookAction::add);
    require_latent(row, sae.d_sae());
    require_cols(acts.values, sae.d_model(), "apply_add input");

    ActivationBatch out = acts;
    if (row.steering_coefficient == 0.0) return out; // exact identity
    const float c = static_cast<float>(row.steering_coefficient);
    for (int p = 0; p < out.values.rows(); ++p)
        for (int i = 0; i < sae.d_model(); ++i)
            out.values(p, i) += c * sae.w_dec(i, row.latent_idx);
    return out;
}

LatentBatch apply_clamp(const LatentBatch& latents, const SteeringRow& row) {
    require_action(row, HookAction::clamp);
    require_latent(row, latents.values.cols());
    return clamp_where(latents, row.latent_idx, 0.0, row.latent_idx, row.steering_coefficient);
}

LatentBatch apply_clamp_cond(const LatentBatch& latents, const SteeringRow& row) {
    require_action(row, HookAction::clamp_cond);
    require_latent(row, latents.values.cols());
    if (!row.clamp_value) throw specification_error("clamp_cond row requires clamp_value");
    return clamp_where(latents, row.latent_idx, *row.clamp_value, row.latent_idx, row.steering_coefficient);
}

LatentBatch apply_clamp_refusal(const LatentBatch& latents, const std::vector<SteeringRow>& rows,
                                bool sequence_global) {
    if (rows.empty()) return latents;
    for (const auto& row : rows) {
        require_action(row, HookAction::clamp_refusal);
        require_latent(row, latents.values.cols());
        if (!row.clamp_value) throw specification_error("clamp_refusal row requires clamp_value");
        if (!row.refusal_id) throw specification_error("clamp_refusal row requires refusal_id");
        if (*row.refusal_id != *rows.front().refusal_id)
            throw specification_error("clamp_refusal rows disagree on refusal_id");
        if (*row.clamp_value != *rows.front().clamp_value)
            throw specification_error("clamp_refusal rows disagree on clamp_value");
        if (row.steering_coefficient != rows.front().steering_coefficient)
            throw specification_error("clamp_refusal rows disagree on steering_coefficient");
        if (*row.refusal_id < 0 || *row.refusal_id >= latents.values.cols())
            throw std::out_of_range("refusal_id " + std::to_string(*row.refusal_id) + " out of range");
    }

    LatentBatch out = latents;
    const int refusal = *rows.front().refusal_id;
    const double threshold = *rows.front().clamp_value;
    const float c = static_cast<float>(rows.front().steering_coefficient);
    std::vector<bool> fired(static_cast<std::size_t>(out.values.rows()), false);
    bool fired_anywhere = false;
    for (int p = 0; p < out.values.rows(); ++p) {
        for (const auto& row : rows)
            if (static_cast<double>(latents.values(p, row.latent_idx)) > threshold) fired[static_cast<std::size_t>(p)] = true;
        fired_anywhere = fired_anywhere || fired[static_cast<std::size_t>(p)];
    }
    for (int p = 0; p < out.values.rows(); ++p)
        if (sequence_global ? fired_anywhere : fired[static_cast<std::size_t>(p)]) out.values(p, refusal) = c;
    return out;
}

LatentBatch run_side_action(HookAction action, const LatentBatch& latents, const InspectionHooks* hooks) {
    if (action != HookAction::print && action != HookAction::debug)
        throw specification_error("side action must be print or debug");

    LatentBatch out = latents;
    if (action == HookAction::print) {
        if (hooks && hooks->diagnostics) {
            float lo = std::numeric_limits<float>::infinity();
            float hi = -std::numeric_limits<float>::infinity();
            double sum = 0.0;
            long long nonzero = 0;
            const std::size_t total = out.values.size();
            for (std::size_t i = 0; i < total; ++i) {
                const float v = out.values.data()[i];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
                sum += v;
                nonzero += v != 0.0f;
            }
            *hooks->diagnostics << "[steering] latents " << out.values.shape_str() << " min=" << (total ? lo : 0.0f)
                                << " max=" << (total ? hi : 0.0f)
                                << " mean=" << (total ? sum / static_cast<double>(total) : 0.0)
                                << " nonzero=" << nonzero << "\n";
        }
        return out;
    }

    if (hooks && hooks->debug_handler) {
        try {
            hooks->debug_handler(out);
        } catch (const std::exception& e) {
            if (hooks->diagnostics) *hooks->diagnostics << "[steering] debug handler failed: " << e.what() << "\n";
            return latents; // inspection failures never propagate
        }
    }
    return out;
}

ResidualHook make_steering_hook(const SparseAutoencoder& sae, const SteeringSpec& spec,
                                const InspectionHooks* hooks) {
    validate_spec(spec);

    ResidualHook hook;
    hook.layer = sae.layer;
    hook.transform = [&sae, spec, hooks](ActivationBatch& batch) {
        const LatentBatch original = encode(sae, batch);
        LatentBatch current = original;

        for (const auto& row : spec.rows) {
            switch (row.hook_action) {
            case HookAction::add:
                batch = apply_add(batch, sae, row);
                break;
            case HookAction::clamp:
                current = apply_clamp(current, row);
                break;
            case HookAction::clamp_cond:
                current = apply_clamp_cond(current, row);
                break;
            case HookAction::clamp_refusal:
                current = apply_clamp_refusal(current, {row}, spec.refusal_sequence_global);
                break;
            case HookAction::print:
            case HookAction::debug:
                current = run_side_action(row.hook_action, current, hooks);
                break;
            default:
                throw specification_error("unknown hook action");
            }
        }

        // Splice only positions whose latents changed; decode(f') - decode(f)
        // cancels exactly elsewhere, keeping untouched positions bit-identical.
        const int d_sae = sae.d_sae();
        std::vector<int> changed;
        for (int p = 0; p < current.values.rows(); ++p)
            if (std::memcmp(current.values.row(p).data(), original.values.row(p).data(),
                            static_cast<std::size_t>(d_sae) * sizeof(float)) != 0)
                changed.push_back(p);
        if (changed.empty()) return;

        LatentBatch before, after;
        before.values = Matrix(static_cast<int>(changed.size()), d_sae);
        after.values = Matrix(static_cast<int>(changed.size()), d_sae);
        for (std::size_t i = 0; i < changed.size(); ++i) {
            std::copy_n(original.values.row(changed[i]).data(), d_sae, before.values.row(static_cast<int>(i)).data());
            std::copy_n(current.values.row(changed[i]).data(), d_sae, after.values.row(static_cast<int>(i)).data());
        }
        const ActivationBatch dec_before = decode(sae, before);
        const ActivationBatch dec_after = decode(sae, after);
        for (std::size_t i = 0; i < changed.size(); ++i)
            for (int c = 0; c < batch.values.cols(); ++c)
                batch.values(changed[i], c) +=
                    dec_after.values(static_cast<int>(i), c) - dec_before.values(static_cast<int>(i), c);
    };
    return hook;
}

Matrix steer_forward(const Model& model, const SparseAutoencoder& sae, const SteeringSpec& spec,
                     TokenSpan tokens, const InspectionHooks* hooks) {
    if (sae.layer < 0 || sae.layer >= model.n_layers())
        throw std::out_of_range("sae layer " + std::to_string(sae.layer) + " outside model depth");
    const ResidualHook hook = make_steering_hook(sae, spec, hooks);
    return model.forward(tokens, {&hook, 1});
}

Matrix ModelContext::logits(TokenSpan tokens) const {
    if (!steered()) return model->forward(tokens);
    return steer_forward(*model, *sae, *spec, tokens, hooks);
}

double ModelContext::answer_loglikelihood(TokenSpan prompt, TokenSpan continuation) const {
    if (!steered()) return saesteer::answer_loglikelihood(*model, prompt, continuation);
    const ResidualHook hook = make_steering_hook(*sae, *spec, hooks);
    return saesteer::answer_loglikelihood(*model, prompt, continuation, {&hook, 1});
}

std::vector<int> ModelContext::greedy_decode(TokenSpan prompt, int count) const {
    if (!steered()) return saesteer::greedy_decode(*model, prompt, count);
    const ResidualHook hook = make_steering_hook(*sae, *spec, hooks);
    return saesteer::greedy_decode(*model, prompt, count, {&hook, 1});
}

} // namespace saesteer
