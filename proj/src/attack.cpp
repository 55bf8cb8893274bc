#include "saesteer/attack.hpp"

#include <algorithm>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "saesteer/errors.hpp"
#include "saesteer/parallel.hpp"
#include "saesteer/rng.hpp"

namespace saesteer {

double target_loss(const ModelContext& context, TokenSpan prompt, TokenSpan suffix, TokenSpan target) {
    if (target.empty()) throw std::invalid_argument("target must be non-empty");
    std::vector<int> conditioned(prompt.begin(), prompt.end());
    conditioned.insert(conditioned.end(), suffix.begin(), suffix.end());
    if (conditioned.empty()) throw std::invalid_argument("prompt plus suffix must be non-empty");
    return -context.answer_loglikelihood(conditioned, target);
}

AttackResult concurrent_greedy_search(const ModelContext& context, TokenSpan prompt, TokenSpan target,
                                      const AttackConfig& config, const std::string& question_id, int jobs) {
    if (config.tries_per_iteration < 1 || config.candidates_per_index < 1 || config.suffix_length < 1 ||
        config.iterations < 0)
        throw std::invalid_argument("attack config values must be positive");
    if (target.empty()) throw std::invalid_argument("target must be non-empty");

    const int vocab = context.model->vocab_size();
    Rng rng = stream_rng(static_cast<std::uint64_t>(config.seed), "greedy_suffix");

    AttackResult result;
    result.question_id = question_id;
    result.suffix.resize(static_cast<std::size_t>(config.suffix_length));
    for (int& t : result.suffix) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));

    result.initial_loss = target_loss(context, prompt, result.suffix, target);
    ++result.target_loss_evaluations;
    double current = result.initial_loss;

    struct Candidate {
        int position;
        int token;
        double loss;
    };

    const long long per_iter = static_cast<long long>(config.tries_per_iteration) * config.candidates_per_index;
    std::vector<Candidate> candidates(static_cast<std::size_t>(per_iter));

    for (int iter = 0; iter < config.iterations; ++iter) {
        if (current <= config.convergence_loss) break;

        // one deterministic draw pass, then (possibly parallel) scoring
        for (int b = 0; b < config.tries_per_iteration; ++b) {
            const int position = static_cast<int>(rng.below(static_cast<std::uint64_t>(config.suffix_length)));
            for (int k = 0; k < config.candidates_per_index; ++k) {
                const int token = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
                candidates[static_cast<std::size_t>(b) * config.candidates_per_index + k] = {position, token, 0.0};
            }
        }
        parallel_for(per_iter, jobs, [&](long long i) {
            Candidate& c = candidates[static_cast<std::size_t>(i)];
            std::vector<int> trial = result.suffix;
            trial[static_cast<std::size_t>(c.position)] = c.token;
            c.loss = target_loss(context, prompt, trial, target);
        });
        result.target_loss_evaluations += per_iter;

        const Candidate* best = &candidates[0];
        for (const auto& c : candidates) {
            if (c.loss < best->loss || (c.loss == best->loss && (c.position < best->position ||
                                                                 (c.position == best->position && c.token < best->token))))
                best = &c;
        }
        if (best->loss < current) {
            result.suffix[static_cast<std::size_t>(best->position)] = best->token;
            current = best->loss;
        }
        result.loss_trace.push_back(current);
    }

    result.final_loss = current;
    std::vector<int> conditioned(prompt.begin(), prompt.end());
    conditioned.insert(conditioned.end(), result.suffix.begin(), result.suffix.end());
    result.generated = context.greedy_decode(conditioned, static_cast<int>(target.size()));
    result.success = std::equal(result.generated.begin(), result.generated.end(), target.begin(), target.end());
    return result;
}

AttackComparison attack_report(const AttackResult& baseline, const AttackResult& steered,
                               const AttackResult& rmu) {
    if (baseline.question_id != steered.question_id || baseline.question_id != rmu.question_id)
        throw std::invalid_argument("attack results answer different questions");

    AttackComparison c;
    c.question_id = baseline.question_id;
    c.baseline_final_loss = baseline.final_loss;
    c.steered_final_loss = steered.final_loss;
    c.rmu_final_loss = rmu.final_loss;
    c.steered_delta = steered.final_loss - baseline.final_loss;
    c.rmu_delta = rmu.final_loss - baseline.final_loss;
    c.baseline_success = baseline.success;
    c.steered_success = steered.success;
    c.rmu_success = rmu.success;
    c.steering_held = baseline.success && !steered.success;
    c.rmu_held = baseline.success && !rmu.success;
    c.baseline_generated = baseline.generated;
    c.steered_generated = steered.generated;
    c.rmu_generated = rmu.generated;
    return c;
}

std::string attack_result_to_json(const AttackResult& result) {
    nlohmann::json j;
    j["suffix"] = result.suffix;
    j["loss_trace"] = result.loss_trace;
    j["initial_loss"] = result.initial_loss;
    j["final_loss"] = result.final_loss;
    j["success"] = result.success;
    j["target_loss_evaluations"] = result.target_loss_evaluations;
    j["generated"] = result.generated;
    j["question_id"] = result.question_id;
    return j.dump(2);
}

AttackResult attack_result_from_json(const std::string& text) {
    AttackResult result;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        result.suffix = j.at("suffix").get<std::vector<int>>();
        result.loss_trace = j.at("loss_trace").get<std::vector<double>>();
        result.initial_loss = j.at("initial_loss").get<double>();
        result.final_loss = j.at("final_loss").get<double>();
        result.success = j.at("success").get<bool>();
        result.target_loss_evaluations = j.at("target_loss_evaluations").get<long long>();
        result.generated = j.value("generated", std::vector<int>{});
        result.question_id = j.value("question_id", "");
    } catch (const nlohmann::json::exception& e) {
        throw format_error("malformed attack result: " + std::string(e.what()));
    }
    return result;
}

std::string attack_comparison_to_json(const AttackComparison& c) {
    nlohmann::json j;
    j["question_id"] = c.question_id;
    j["final_loss"] = {{"baseline", c.baseline_final_loss}, {"steered", c.steered_final_loss}, {"rmu", c.rmu_final_loss}};
    j["delta_vs_baseline"] = {{"steered", c.steered_delta}, {"rmu", c.rmu_delta}};
    j["success"] = {{"baseline", c.baseline_success}, {"steered", c.steered_success}, {"rmu", c.rmu_success}};
    j["steering_held"] = c.steering_held;
    j["rmu_held"] = c.rmu_held;
    j["generated"] = {{"baseline", c.baseline_generated}, {"steered", c.steered_generated}, {"rmu", c.rmu_generated}};
    return j.dump(2);
}

} // namespace saesteer
