#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saesteer/steering.hpp"

namespace saesteer {

struct AttackConfig {
    int tries_per_iteration = 32;  // b: candidate positions sampled per iteration
    int candidates_per_index = 64; // k: replacement tokens evaluated per position
    int iterations = 200;          // t
    int suffix_length = 32;
    std::int64_t seed = 0;
    // Early stop once the accepted loss reaches this value; 0 never triggers
    // for a proper NLL.
    double convergence_loss = 0.0;
};

struct AttackResult {
    std::vector<int> suffix;
    std::vector<double> loss_trace; // accepted loss after each iteration, length <= t
    double initial_loss = 0.0;
    double final_loss = 0.0;
    bool success = false;                  // greedy decode emits the target exactly
    long long target_loss_evaluations = 0; // always <= t*b*k + 1
    std::vector<int> generated;            // greedy continuation after the attack
    std::string question_id;
};

// Negative log-likelihood of `target` given prompt ++ suffix. Empty target
// raises std::invalid_argument.
double target_loss(const ModelContext& context, TokenSpan prompt, TokenSpan suffix, TokenSpan target);

// Token-level greedy coordinate search: the suffix starts from seeded random
// tokens; each iteration draws b positions (with replacement) and k uniform
// candidate tokens per position, scores every substitution by target_loss,
// and accepts the single best one iff it strictly lowers the loss (ties
// resolve to the lowest position, then lowest token id). Candidates within
// an iteration may be evaluated in parallel; results are identical to the
// serial run.
AttackResult concurrent_greedy_search(const ModelContext& context, TokenSpan prompt, TokenSpan target,
                                      const AttackConfig& config, const std::string& question_id = "",
                                      int jobs = 1);

struct AttackComparison {
    std::string question_id;
    double baseline_final_loss = 0.0;
    double steered_final_loss = 0.0;
    double rmu_final_loss = 0.0;
    double steered_delta = 0.0; // steered minus baseline
    double rmu_delta = 0.0;
    bool baseline_success = false;
    bool steered_success = false;
    bool rmu_success = false;
    bool steering_held = false; // attack cracked the baseline but not the steered model
    bool rmu_held = false;
    std::vector<int> baseline_generated;
    std::vector<int> steered_generated;
    std::vector<int> rmu_generated;
};

// Side-by-side record of one attack run against the plain, steered and RMU
// models; mismatched question ids raise std::invalid_argument.
AttackComparison attack_report(const AttackResult& baseline, const AttackResult& steered,
                               const AttackResult& rmu);

std::string attack_result_to_json(const AttackResult& result);
AttackResult attack_result_from_json(const std::string& text);
std::string attack_comparison_to_json(const AttackComparison& comparison);

} // namespace saesteer
