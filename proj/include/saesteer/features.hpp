#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "saesteer/model.hpp"
#include "saesteer/sae.hpp"

namespace saesteer {

// Normalized per-latent activation frequency over one corpus: for latent i,
// freq[i] = (token positions with activation > activity_threshold) / total
// token positions. Only nonzero frequencies are stored; absent indices mean
// frequency zero.
struct FeatureFrequencyTable {
    std::map<int, double> freq;
    std::string corpus_id;
    long long token_count = 0;
    double activity_threshold = 0.0;

    double at(int latent_idx) const {
        const auto it = freq.find(latent_idx);
        return it == freq.end() ? 0.0 : it->second;
    }
};

struct SelectionConfig {
    double retain_threshold = 0.0001;
    int top_k = 1;
    double activity_threshold = 0.0;
};

// One token sequence per corpus entry.
using Corpus = std::vector<std::vector<int>>;

// Frequency denominator: per_token counts firing token positions over all
// positions (the default reading of "dictionaries over tokens");
// per_document counts documents with at least one firing position over all
// documents, and reports the document count as token_count.
enum class FrequencyMode { per_token, per_document };

// Counts, over every token position of every sequence, how often each latent
// exceeds activity_threshold at the SAE's hook layer. An empty corpus (no
// positions at all) raises std::invalid_argument.
FeatureFrequencyTable activation_frequencies(const Model& model, const SparseAutoencoder& sae,
                                             const Corpus& corpus, double activity_threshold,
                                             const std::string& corpus_id,
                                             FrequencyMode mode = FrequencyMode::per_token);

// Candidates are latents with nonzero forget frequency whose retain
// frequency is strictly below retain_threshold; the result is the top_k of
// those by descending forget frequency, ties broken by ascending latent
// index (shorter than top_k when candidates are scarce). Tables must share
// an activity_threshold; top_k < 1 raises std::invalid_argument.
std::vector<int> select_features(const FeatureFrequencyTable& freq_forget,
                                 const FeatureFrequencyTable& freq_retain, const SelectionConfig& config);

// Per-latent probability of being nonzero over the corpus, plus the
// fraction of latents that are exactly zero at least once.
struct ZeroActivationStats {
    std::vector<double> nonzero_prob; // one entry per latent
    long long token_count = 0;
    double fraction_ever_zero = 0.0;
};

ZeroActivationStats zero_activation_stats(const Model& model, const SparseAutoencoder& sae,
                                          const Corpus& corpus);

// JSON persistence: {corpus_id, token_count, activity_threshold, freq}.
std::string frequency_table_to_json(const FeatureFrequencyTable& table);
FeatureFrequencyTable frequency_table_from_json(const std::string& text);
void save_frequency_table(const FeatureFrequencyTable& table, const std::filesystem::path& path);
FeatureFrequencyTable load_frequency_table(const std::filesystem::path& path);

// Reads a plain-text corpus (one document per line, blank lines skipped)
// through the model's tokenizer.
Corpus load_text_corpus(const Model& model, const std::filesystem::path& path);

} // namespace saesteer
