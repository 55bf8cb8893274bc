#pragma once

// Shared test utilities: seeded random instances and the independent
// brute-force oracles the derived expectations are frozen against. Oracles
// must stay loop-based and separate from the library implementations.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "saesteer/features.hpp"
#include "saesteer/rng.hpp"
#include "saesteer/sae.hpp"
#include "saesteer/steering.hpp"

namespace test_helpers {

using namespace saesteer;

inline LatentBatch random_latent_batch(Rng& rng, int positions, int d_sae, double zero_fraction = 0.5) {
    LatentBatch batch;
    batch.values = Matrix(positions, d_sae);
    for (int p = 0; p < positions; ++p)
        for (int j = 0; j < d_sae; ++j)
            batch.values(p, j) = rng.uniform() < zero_fraction ? 0.0f : static_cast<float>(rng.uniform() * 2.0);
    return batch;
}

// positionwise loop oracle for the plain clamp action
inline LatentBatch oracle_clamp(const LatentBatch& in, int latent, double coefficient) {
    LatentBatch out = in;
    for (int p = 0; p < out.values.rows(); ++p) {
        const float v = out.values(p, latent);
        if (v > 0.0f) out.values(p, latent) = static_cast<float>(coefficient);
    }
    return out;
}

inline LatentBatch oracle_clamp_cond(const LatentBatch& in, int latent, double threshold, double coefficient) {
    LatentBatch out = in;
    for (int p = 0; p < out.values.rows(); ++p)
        if (static_cast<double>(out.values(p, latent)) > threshold)
            out.values(p, latent) = static_cast<float>(coefficient);
    return out;
}

inline LatentBatch oracle_clamp_refusal(const LatentBatch& in, const std::vector<int>& monitored,
                                        double threshold, int refusal, double coefficient) {
    LatentBatch out = in;
    for (int p = 0; p < out.values.rows(); ++p) {
        bool fired = false;
        for (int latent : monitored)
            if (static_cast<double>(in.values(p, latent)) > threshold) fired = true;
        if (fired) out.values(p, refusal) = static_cast<float>(coefficient);
    }
    return out;
}

// exhaustive filter-then-sort selection oracle
inline std::vector<int> oracle_select(const FeatureFrequencyTable& forget, const FeatureFrequencyTable& retain,
                                      double retain_threshold, int top_k) {
    std::vector<int> candidates;
    for (const auto& [latent, f] : forget.freq)
        if (f > 0.0 && retain.at(latent) < retain_threshold) candidates.push_back(latent);
    std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        if (forget.at(a) != forget.at(b)) return forget.at(a) > forget.at(b);
        return a < b;
    });
    if (static_cast<int>(candidates.size()) > top_k) candidates.resize(static_cast<std::size_t>(top_k));
    return candidates;
}

// Definition-based Kruskal-Wallis H: mid-rank of each sample computed by
// counting, tie correction applied; no shared code with the implementation.
inline double oracle_kruskal_h(const std::vector<std::vector<double>>& groups) {
    std::vector<double> all;
    for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
    const double n = static_cast<double>(all.size());

    const auto midrank = [&](double v) {
        double smaller = 0.0, equal = 0.0;
        for (double other : all) {
            if (other < v) smaller += 1.0;
            if (other == v) equal += 1.0;
        }
        return smaller + (equal + 1.0) / 2.0;
    };

    double h = 0.0;
    for (const auto& g : groups) {
        double rank_sum = 0.0;
        for (double v : g) rank_sum += midrank(v);
        h += rank_sum * rank_sum / static_cast<double>(g.size());
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

    // tie correction: group the distinct values by counting
    double correction = 0.0;
    std::vector<double> seen;
    for (double v : all) {
        if (std::find(seen.begin(), seen.end(), v) != seen.end()) continue;
        seen.push_back(v);
        double t = 0.0;
        for (double other : all)
            if (other == v) t += 1.0;
        correction += t * t * t - t;
    }
    const double denom = 1.0 - correction / (n * n * n - n);
    if (denom <= 0.0) return 0.0;
    return h / denom;
}

inline SteeringRow clamp_row(int latent, double coefficient, const std::string& release = "r",
                             const std::string& id = "i") {
    SteeringRow row;
    row.latent_idx = latent;
    row.hook_action = HookAction::clamp;
    row.steering_coefficient = coefficient;
    row.sae_release = release;
    row.sae_id = id;
    return row;
}

inline SteeringRow clamp_cond_row(int latent, double threshold, double coefficient,
                                  const std::string& release = "r", const std::string& id = "i") {
    SteeringRow row = clamp_row(latent, coefficient, release, id);
    row.hook_action = HookAction::clamp_cond;
    row.clamp_value = threshold;
    return row;
}

inline SteeringRow refusal_row(int latent, int refusal, double threshold, double coefficient,
                               const std::string& release = "r", const std::string& id = "i") {
    SteeringRow row = clamp_row(latent, coefficient, release, id);
    row.hook_action = HookAction::clamp_refusal;
    row.clamp_value = threshold;
    row.refusal_id = refusal;
    return row;
}

} // namespace test_helpers
