#include "saesteer/demo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "saesteer/rng.hpp"

namespace saesteer {

namespace {

constexpr float kEmbedScale = 4.0f;   // trigger embedding magnitude
constexpr float kCopyGain = 2.0f;     // attention copy-head gain
constexpr float kReadScale = 2.0f;    // unembedding read magnitude

// Orthonormal directions via Gram-Schmidt over seeded gaussian vectors.
std::vector<std::vector<float>> orthonormal_directions(std::int64_t seed, int d_model, int count) {
    Rng rng = stream_rng(static_cast<std::uint64_t>(seed), "demo_directions");
    std::vector<std::vector<float>> out;
    while (static_cast<int>(out.size()) < count) {
        std::vector<double> v(static_cast<std::size_t>(d_model));
        for (double& x : v) x = rng.normal();
        for (const auto& prev : out) {
            double dot = 0.0;
            for (int i = 0; i < d_model; ++i) dot += v[static_cast<std::size_t>(i)] * prev[static_cast<std::size_t>(i)];
            for (int i = 0; i < d_model; ++i) v[static_cast<std::size_t>(i)] -= dot * prev[static_cast<std::size_t>(i)];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-6) continue; // nearly dependent draw, try again
        std::vector<float> unit(static_cast<std::size_t>(d_model));
        for (int i = 0; i < d_model; ++i) unit[static_cast<std::size_t>(i)] = static_cast<float>(v[static_cast<std::size_t>(i)] / norm);
        out.push_back(std::move(unit));
    }
    return out;
}

int token_of(const Model& model, const std::string& word) {
    const auto ids = model.tokenize(word);
    return ids.at(0);
}

} // namespace

std::string find_word_for_token(int vocab_size, int token, const std::vector<int>& avoid) {
    const std::set<int> avoid_set(avoid.begin(), avoid.end());
    for (int n = 0;; ++n) {
        const std::string word = "w" + std::to_string(n);
        const int id = static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(vocab_size));
        if (id == token && avoid_set.find(id) == avoid_set.end()) return word;
        if (n > 1000000) throw std::runtime_error("no word found for token " + std::to_string(token));
    }
}

std::string DemoFixture::word_for(int token) const {
    return find_word_for_token(config.vocab_size, token);
}

DemoFixture make_demo_fixture(std::int64_t seed) {
    DemoFixture fx;
    fx.config = ModelConfig{16, 1, 4, 64, 48, seed};
    fx.model = build_toy_model(fx.config);
    ToyModel& model = *fx.model;
    const int d = fx.config.d_model;

    // The "Answer:" template word occupies one token id; keep planted ids
    // clear of it so the scoring position stays neutral.
    const int answer_word_token = token_of(model, "Answer:");

    std::vector<int> reserved{answer_word_token};
    const auto pick_token = [&](int preferred) {
        int id = preferred;
        while (std::find(reserved.begin(), reserved.end(), id) != reserved.end()) ++id;
        reserved.push_back(id);
        return id;
    };
    for (int i = 0; i < 3; ++i) fx.forget_triggers.push_back(pick_token(10 + i));
    for (int i = 0; i < 2; ++i) fx.retain_triggers.push_back(pick_token(14 + i));
    for (int i = 0; i < 3; ++i) fx.forget_answers.push_back(pick_token(20 + i));
    for (int i = 0; i < 2; ++i) fx.retain_answers.push_back(pick_token(24 + i));
    std::vector<int> distractors;
    for (int i = 0; i < 3; ++i) distractors.push_back(pick_token(30 + i));

    fx.forget_latents = {3, 7, 11};
    fx.retain_latents = {15, 19};
    fx.refusal_latent = 40;

    const auto dirs = orthonormal_directions(seed, d, 6);
    const std::vector<float>& d_ref = dirs[5];

    // -- model surgery: zero everything, then wire the planted paths --
    for (const auto& name : ToyModel::tensor_names(fx.config)) {
        Matrix& t = model.tensor(name);
        std::fill(t.data(), t.data() + t.size(), 0.0f);
    }
    Matrix& wte = model.tensor("wte");
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < d; ++c) wte(fx.forget_triggers[static_cast<std::size_t>(i)], c) = kEmbedScale * dirs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < d; ++c) wte(fx.retain_triggers[static_cast<std::size_t>(i)], c) = kEmbedScale * dirs[static_cast<std::size_t>(3 + i)][static_cast<std::size_t>(c)];

    // uniform-attention copy head: q = k = 0, v = x, output scaled by the gain
    Matrix& wv = model.tensor("layer0_wv");
    Matrix& wo = model.tensor("layer0_wo");
    for (int i = 0; i < d; ++i) {
        wv(i, i) = 1.0f;
        wo(i, i) = kCopyGain;
    }

    Matrix& lm_head = model.tensor("lm_head");
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < d; ++c)
            lm_head(fx.forget_answers[static_cast<std::size_t>(i)], c) =
                kReadScale * (dirs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] + d_ref[static_cast<std::size_t>(c)]);
    for (int i = 0; i < 2; ++i)
        for (int c = 0; c < d; ++c)
            lm_head(fx.retain_answers[static_cast<std::size_t>(i)], c) = kReadScale * dirs[static_cast<std::size_t>(3 + i)][static_cast<std::size_t>(c)];

    // -- matching SAE with planted latents --
    std::vector<std::pair<int, std::vector<float>>> planted;
    for (int i = 0; i < 3; ++i) planted.emplace_back(fx.forget_latents[static_cast<std::size_t>(i)], dirs[static_cast<std::size_t>(i)]);
    for (int i = 0; i < 2; ++i) planted.emplace_back(fx.retain_latents[static_cast<std::size_t>(i)], dirs[static_cast<std::size_t>(3 + i)]);
    planted.emplace_back(fx.refusal_latent, d_ref);
    fx.sae = make_toy_sae(seed, d, 48, planted, 0);
    fx.sae.release = "toy-demo";
    fx.sae.sae_id = "layer_0/width_48/demo";

    fx.latent_labels = {{fx.forget_latents[0], "mentions of the hazardous topic alpha"},
                        {fx.forget_latents[1], "mentions of the hazardous topic beta"},
                        {fx.forget_latents[2], "mentions of the hazardous topic gamma"},
                        {fx.retain_latents[0], "benign everyday topic one"},
                        {fx.retain_latents[1], "benign everyday topic two"},
                        {fx.refusal_latent, "refusal and safety disclaimers"}};

    // -- corpora: trigger position controls the activation frequency, so
    //    topic alpha > beta > gamma in the forget corpus --
    std::vector<int> filler_avoid = reserved;
    const auto filler = [&](int n) {
        // deterministic filler words whose ids avoid every planted token
        std::string word;
        int id = -1;
        for (int probe = 100 + n;; ++probe) {
            word = "w" + std::to_string(probe);
            id = static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(fx.config.vocab_size));
            if (std::find(filler_avoid.begin(), filler_avoid.end(), id) == filler_avoid.end()) break;
        }
        return word;
    };

    const std::string tf0 = fx.word_for(fx.forget_triggers[0]);
    const std::string tf1 = fx.word_for(fx.forget_triggers[1]);
    const std::string tf2 = fx.word_for(fx.forget_triggers[2]);
    const std::string tr0 = fx.word_for(fx.retain_triggers[0]);
    const std::string tr1 = fx.word_for(fx.retain_triggers[1]);

    for (int line = 0; line < 8; ++line) {
        const std::string a = filler(4 * line), b = filler(4 * line + 1), c = filler(4 * line + 2), e = filler(4 * line + 3);
        // alpha first token, beta mid, gamma near the end (not every line)
        std::string forget = tf0 + " " + a + " " + b + " " + tf1 + " " + c + " " + e;
        if (line % 2 == 0) forget += " " + tf2 + " " + filler(40 + line);
        else forget += " " + filler(40 + line) + " " + filler(50 + line);
        fx.forget_lines.push_back(forget);

        std::string retain = a + " " + tr0 + " " + b + " " + c + " " + (line % 2 == 0 ? tr1 : e) + " " + e;
        fx.retain_lines.push_back(retain);
    }
    for (const auto& line : fx.forget_lines) fx.forget_corpus.push_back(model.tokenize(line));
    for (const auto& line : fx.retain_lines) fx.retain_corpus.push_back(model.tokenize(line));

    // -- question suites; answer_index varies per question --
    const auto make_questions = [&](const std::vector<int>& triggers, const std::vector<int>& answers,
                                    const std::string& subject_prefix, int per_topic) {
        std::vector<MCQuestion> questions;
        for (std::size_t topic = 0; topic < triggers.size(); ++topic) {
            for (int variant = 0; variant < per_topic; ++variant) {
                MCQuestion q;
                q.subject = subject_prefix + std::to_string(topic);
                q.stem = filler(60 + variant) + " " + fx.word_for(triggers[topic]) + " " + filler(70 + variant);
                q.answer_index = (static_cast<int>(topic) + variant) % 4;
                int di = 0;
                for (int slot = 0; slot < 4; ++slot) {
                    if (slot == q.answer_index) q.choices[static_cast<std::size_t>(slot)] = fx.word_for(answers[topic]);
                    else q.choices[static_cast<std::size_t>(slot)] = fx.word_for(distractors[static_cast<std::size_t>(di++ % distractors.size())]);
                }
                questions.push_back(std::move(q));
            }
        }
        return questions;
    };
    fx.forget_questions = make_questions(fx.forget_triggers, fx.forget_answers, "forget_", 4);
    fx.retain_questions = make_questions(fx.retain_triggers, fx.retain_answers, "retain_", 6);

    return fx;
}

void write_demo_workspace(const DemoFixture& fx, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_model(*fx.model, dir / "model");
    save_sae(fx.sae, dir / "sae");

    const auto write_lines = [](const std::filesystem::path& path, const std::vector<std::string>& lines) {
        std::ofstream out(path);
        for (const auto& line : lines) out << line << "\n";
    };
    write_lines(dir / "forget_corpus.txt", fx.forget_lines);
    write_lines(dir / "retain_corpus.txt", fx.retain_lines);
    save_questions_jsonl(fx.forget_questions, dir / "forget_questions.jsonl");
    save_questions_jsonl(fx.retain_questions, dir / "retain_questions.jsonl");

    const auto fixtures = dir / "descriptions";
    std::filesystem::create_directories(fixtures);
    const auto sanitize = [](std::string s) {
        for (char& c : s)
            if (c == '/' || c == '\\' || c == ':') c = '_';
        return s;
    };
    for (const auto& [latent, label] : fx.latent_labels) {
        nlohmann::json j;
        j["description"] = label;
        std::ofstream out(fixtures / (sanitize(fx.sae.release) + "__" + sanitize(fx.sae.sae_id) + "__" +
                                      std::to_string(latent) + ".json"));
        out << j.dump(2) << "\n";
    }

    nlohmann::json meta;
    meta["seed"] = fx.config.seed;
    meta["forget_latents"] = fx.forget_latents;
    meta["retain_latents"] = fx.retain_latents;
    meta["refusal_latent"] = fx.refusal_latent;
    meta["forget_triggers"] = fx.forget_triggers;
    meta["retain_triggers"] = fx.retain_triggers;
    meta["forget_answers"] = fx.forget_answers;
    meta["retain_answers"] = fx.retain_answers;
    meta["sae_release"] = fx.sae.release;
    meta["sae_id"] = fx.sae.sae_id;
    std::ofstream out(dir / "demo.json");
    out << meta.dump(2) << "\n";
}

} // namespace saesteer
