#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "saesteer/eval.hpp"
#include "saesteer/features.hpp"
#include "saesteer/model.hpp"
#include "saesteer/sae.hpp"

namespace saesteer {

// A fully constructed desk-scale unlearning scenario: a toy model whose
// answers are driven by planted residual directions, an SAE with matching
// planted latents, forget/retain corpora whose trigger words light those
// latents up, matching question suites, and a designated refusal latent
// wired so that clamping it suppresses the forget answers.
//
// Knowledge wiring: trigger-token embeddings carry the topic direction, one
// uniform-attention identity head copies it to every later position, and
// each answer token's unembedding row reads its topic direction (forget
// answers additionally read the refusal direction, so a negative refusal
// write drives them down). Everything else is zeroed, which keeps the
// geometry exact up to float rounding.
struct DemoFixture {
    ModelConfig config;
    std::unique_ptr<ToyModel> model;
    SparseAutoencoder sae;

    Corpus forget_corpus;
    Corpus retain_corpus;
    std::vector<std::string> forget_lines;
    std::vector<std::string> retain_lines;

    std::vector<MCQuestion> forget_questions;
    std::vector<MCQuestion> retain_questions;

    std::vector<int> forget_latents; // in the order selection should produce
    std::vector<int> retain_latents;
    int refusal_latent = 0;
    std::map<int, std::string> latent_labels;

    std::vector<int> forget_triggers; // token ids, aligned with forget_latents
    std::vector<int> retain_triggers;
    std::vector<int> forget_answers;
    std::vector<int> retain_answers;

    // A word the toy tokenizer maps to this token id.
    std::string word_for(int token) const;
};

DemoFixture make_demo_fixture(std::int64_t seed);

// Writes the fixture as a runnable workspace: model/, sae/, corpora,
// question suites, description fixtures and a demo.json with the latent ids
// and suggested command lines.
void write_demo_workspace(const DemoFixture& fixture, const std::filesystem::path& dir);

// Deterministic word search: the lexically first candidate "w<N>" whose
// tokenizer hash lands on `token`, skipping words in `avoid`.
std::string find_word_for_token(int vocab_size, int token, const std::vector<int>& avoid = {});

} // namespace saesteer
