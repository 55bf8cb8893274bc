#include "saesteer/features.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "saesteer/errors.hpp"

namespace saesteer {

FeatureFrequencyTable activation_frequencies(const Model& model, const SparseAutoencoder& sae,
                                             const Corpus& corpus, double activity_threshold,
                                             const std::string& corpus_id, FrequencyMode mode) {
    long long total = 0;
    std::vector<long long> counts(static_cast<std::size_t>(sae.d_sae()), 0);
    std::vector<bool> fired_in_document(static_cast<std::size_t>(sae.d_sae()));
    for (const auto& tokens : corpus) {
        if (tokens.empty()) continue;
        const ActivationBatch acts = capture_activations(model, tokens, sae.layer);
        const LatentBatch latents = encode(sae, acts);
        std::fill(fired_in_document.begin(), fired_in_document.end(), false);
        for (int p = 0; p < latents.values.rows(); ++p)
            for (int j = 0; j < latents.values.cols(); ++j)
                if (static_cast<double>(latents.values(p, j)) > activity_threshold) {
                    if (mode == FrequencyMode::per_token) ++counts[static_cast<std::size_t>(j)];
                    else fired_in_document[static_cast<std::size_t>(j)] = true;
                }
        if (mode == FrequencyMode::per_document) {
            for (int j = 0; j < sae.d_sae(); ++j)
                if (fired_in_document[static_cast<std::size_t>(j)]) ++counts[static_cast<std::size_t>(j)];
            ++total;
        } else {
            total += latents.values.rows();
        }
    }
    if (total == 0) throw std::invalid_argument("corpus has no token positions");

    FeatureFrequencyTable table;
    table.corpus_id = corpus_id;
    table.token_count = total;
    table.activity_threshold = activity_threshold;
    for (int j = 0; j < sae.d_sae(); ++j)
        if (counts[static_cast<std::size_t>(j)] > 0)
            table.freq[j] = static_cast<double>(counts[static_cast<std::size_t>(j)]) / static_cast<double>(total);
    return table;
}

std::vector<int> select_features(const FeatureFrequencyTable& freq_forget,
                                 const FeatureFrequencyTable& freq_retain, const SelectionConfig& config) {
    if (config.top_k < 1) throw std::invalid_argument("top_k must be >= 1");
    if (config.retain_threshold < 0.0) throw std::invalid_argument("retain_threshold must be >= 0");
    if (freq_forget.activity_threshold != freq_retain.activity_threshold)
        throw std::invalid_argument("frequency tables were computed with different activity thresholds");

    std::vector<std::pair<double, int>> candidates; // (forget frequency, latent)
    for (const auto& [latent, f] : freq_forget.freq) {
        if (f <= 0.0) continue;
        if (freq_retain.at(latent) < config.retain_threshold) candidates.emplace_back(f, latent);
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    if (static_cast<int>(candidates.size()) > config.top_k) candidates.resize(static_cast<std::size_t>(config.top_k));

    std::vector<int> selected;
    selected.reserve(candidates.size());
    for (const auto& [f, latent] : candidates) selected.push_back(latent);
    return selected;
}

ZeroActivationStats zero_activation_stats(const Model& model, const SparseAutoencoder& sae,
                                          const Corpus& corpus) {
    ZeroActivationStats stats;
    std::vector<long long> nonzero(static_cast<std::size_t>(sae.d_sae()), 0);
    long long total = 0;
    for (const auto& tokens : corpus) {
        if (tokens.empty()) continue;
        const ActivationBatch acts = capture_activations(model, tokens, sae.layer);
        const LatentBatch latents = encode(sae, acts);
        for (int p = 0; p < latents.values.rows(); ++p)
            for (int j = 0; j < latents.values.cols(); ++j)
                if (latents.values(p, j) != 0.0f) ++nonzero[static_cast<std::size_t>(j)];
        total += latents.values.rows();
    }
    if (total == 0) throw std::invalid_argument("corpus has no token positions");

    stats.token_count = total;
    stats.nonzero_prob.resize(static_cast<std::size_t>(sae.d_sae()));
    long long ever_zero = 0;
    for (int j = 0; j < sae.d_sae(); ++j) {
        stats.nonzero_prob[static_cast<std::size_t>(j)] =
            static_cast<double>(nonzero[static_cast<std::size_t>(j)]) / static_cast<double>(total);
        if (nonzero[static_cast<std::size_t>(j)] < total) ++ever_zero;
    }
    stats.fraction_ever_zero = static_cast<double>(ever_zero) / static_cast<double>(sae.d_sae());
    return stats;
}

std::string frequency_table_to_json(const FeatureFrequencyTable& table) {
    nlohmann::json j;
    j["corpus_id"] = table.corpus_id;
    j["token_count"] = table.token_count;
    j["activity_threshold"] = table.activity_threshold;
    nlohmann::json freq = nlohmann::json::object();
    for (const auto& [latent, f] : table.freq) freq[std::to_string(latent)] = f;
    j["freq"] = freq;
    return j.dump(2);
}

FeatureFrequencyTable frequency_table_from_json(const std::string& text) {
    FeatureFrequencyTable table;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        table.corpus_id = j.at("corpus_id").get<std::string>();
        table.token_count = j.at("token_count").get<long long>();
        table.activity_threshold = j.at("activity_threshold").get<double>();
        for (const auto& [key, value] : j.at("freq").items()) {
            const double f = value.get<double>();
            if (f < 0.0 || f > 1.0) throw format_error("frequency out of [0,1] for latent " + key);
            if (f > 0.0) table.freq[std::stoi(key)] = f;
        }
    } catch (const nlohmann::json::exception& e) {
        throw format_error("malformed frequency table: " + std::string(e.what()));
    }
    if (table.token_count <= 0) throw format_error("frequency table token_count must be positive");
    return table;
}

void save_frequency_table(const FeatureFrequencyTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw format_error("cannot write frequency table: " + path.string());
    out << frequency_table_to_json(table) << "\n";
}

FeatureFrequencyTable load_frequency_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open frequency table: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return frequency_table_from_json(buf.str());
}

Corpus load_text_corpus(const Model& model, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open corpus: " + path.string());
    Corpus corpus;
    std::string line;
    while (std::getline(in, line)) {
        const auto tokens = model.tokenize(line);
        if (!tokens.empty()) corpus.push_back(tokens);
    }
    return corpus;
}

} // namespace saesteer
