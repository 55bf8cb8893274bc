#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "helpers.hpp"
#include "saesteer/demo.hpp"
#include "saesteer/errors.hpp"
#include "saesteer/steering.hpp"

using namespace saesteer;
using namespace test_helpers;

namespace {

LatentBatch column_batch(const std::vector<float>& column, int latent, int d_sae) {
    LatentBatch batch;
    batch.values = Matrix(static_cast<int>(column.size()), d_sae, 0.0f);
    for (int p = 0; p < batch.values.rows(); ++p) batch.values(p, latent) = column[static_cast<std::size_t>(p)];
    return batch;
}

bool same_values(const LatentBatch& a, const LatentBatch& b) { return a.values == b.values; }

} // namespace

TEST_SUITE("steering") {

TEST_CASE("apply_add") {
    const SparseAutoencoder sae = make_toy_sae(3, 8, 16, {}, 0, 1.0f);
    ActivationBatch acts;
    acts.values = Matrix(2, 8);
    Rng rng(5);
    for (int p = 0; p < 2; ++p)
        for (int i = 0; i < 8; ++i) acts.values(p, i) = static_cast<float>(rng.normal());

    SUBCASE("coefficient zero is an exact identity") {
        SteeringRow row = clamp_row(4, 0.0);
        row.hook_action = HookAction::add;
        const ActivationBatch out = apply_add(acts, sae, row);
        CHECK(out.values == acts.values);
    }

    SUBCASE("adds the scaled decoder column everywhere, matching a loop oracle") {
        SteeringRow row = clamp_row(4, 2.0);
        row.hook_action = HookAction::add;
        const ActivationBatch out = apply_add(acts, sae, row);
        for (int p = 0; p < 2; ++p)
            for (int i = 0; i < 8; ++i)
                CHECK(out.values(p, i) == doctest::Approx(acts.values(p, i) + 2.0f * sae.w_dec(i, 4)));
    }

    SUBCASE("out-of-range latent") {
        SteeringRow row = clamp_row(16, 1.0);
        row.hook_action = HookAction::add;
        CHECK_THROWS_AS(apply_add(acts, sae, row), std::out_of_range);
    }

    SUBCASE("wrong action") { CHECK_THROWS_AS(apply_add(acts, sae, clamp_row(1, 1.0)), specification_error); }
}

TEST_CASE("apply_clamp sets firing positions to the coefficient") {
    // the documented three-position example: [0, 1.2, 0] at c = -300
    const LatentBatch batch = column_batch({0.0f, 1.2f, 0.0f}, 2, 8);
    const LatentBatch out = apply_clamp(batch, clamp_row(2, -300.0));
    CHECK(out.values(0, 2) == 0.0f);
    CHECK(out.values(1, 2) == -300.0f);
    CHECK(out.values(2, 2) == 0.0f);

    SUBCASE("an all-zero column never fires") {
        const LatentBatch silent = column_batch({0.0f, 0.0f, 0.0f}, 5, 8);
        CHECK(same_values(apply_clamp(silent, clamp_row(5, -300.0)), silent));
    }

    SUBCASE("matches the positionwise oracle exactly on random batches") {
        Rng rng(17);
        for (int trial = 0; trial < 50; ++trial) {
            const LatentBatch random = random_latent_batch(rng, 4, 12);
            const int latent = static_cast<int>(rng.below(12));
            const double c = -300.0 + rng.uniform();
            CHECK(same_values(apply_clamp(random, clamp_row(latent, c)), oracle_clamp(random, latent, c)));
        }
    }
}

TEST_CASE("apply_clamp_cond compares against clamp_value") {
    // the documented example: [0.04, 0.06] at t = 0.05, c = -500
    const LatentBatch batch = column_batch({0.04f, 0.06f}, 1, 4);
    const LatentBatch out = apply_clamp_cond(batch, clamp_cond_row(1, 0.05, -500.0));
    CHECK(out.values(0, 1) == 0.04f);
    CHECK(out.values(1, 1) == -500.0f);

    SUBCASE("threshold above every entry leaves the batch bit-identical") {
        CHECK(same_values(apply_clamp_cond(batch, clamp_cond_row(1, 10.0, -500.0)), batch));
    }

    SUBCASE("clamp_value zero reduces to apply_clamp") {
        Rng rng(23);
        for (int trial = 0; trial < 50; ++trial) {
            const LatentBatch random = random_latent_batch(rng, 3, 10);
            const int latent = static_cast<int>(rng.below(10));
            CHECK(same_values(apply_clamp_cond(random, clamp_cond_row(latent, 0.0, -7.0)),
                              apply_clamp(random, clamp_row(latent, -7.0))));
        }
    }

    SUBCASE("missing clamp_value") {
        SteeringRow row = clamp_row(1, -500.0);
        row.hook_action = HookAction::clamp_cond;
        CHECK_THROWS_AS(apply_clamp_cond(batch, row), specification_error);
    }

    SUBCASE("raising clamp_value never adds modified positions") {
        Rng rng(29);
        for (int trial = 0; trial < 50; ++trial) {
            const LatentBatch random = random_latent_batch(rng, 6, 8, 0.3);
            const int latent = static_cast<int>(rng.below(8));
            const double lo = rng.uniform(), hi = lo + rng.uniform();
            const LatentBatch out_lo = apply_clamp_cond(random, clamp_cond_row(latent, lo, -9.0));
            const LatentBatch out_hi = apply_clamp_cond(random, clamp_cond_row(latent, hi, -9.0));
            for (int p = 0; p < 6; ++p)
                if (out_hi.values(p, latent) == -9.0f) CHECK(out_lo.values(p, latent) == -9.0f);
        }
    }
}

TEST_CASE("apply_clamp_refusal writes the refusal latent") {
    LatentBatch batch;
    batch.values = Matrix(3, 32, 0.0f);
    batch.values(1, 4) = 0.06f; // monitored latent just over the threshold

    SUBCASE("a firing monitored latent sets the refusal latent, nothing else") {
        const LatentBatch out = apply_clamp_refusal(batch, {refusal_row(4, 30, 0.05, -500.0)});
        CHECK(out.values(1, 30) == -500.0f);
        CHECK(out.values(1, 4) == 0.06f); // monitored value itself is untouched
        CHECK(out.values(0, 30) == 0.0f);
        CHECK(out.values(2, 30) == 0.0f);
    }

    SUBCASE("nothing over the threshold leaves the batch unchanged") {
        const LatentBatch out = apply_clamp_refusal(batch, {refusal_row(4, 30, 0.07, -500.0)});
        CHECK(same_values(out, batch));
    }

    SUBCASE("two monitored latents firing at one position write the refusal latent once") {
        LatentBatch both = batch;
        both.values(1, 9) = 0.5f;
        const LatentBatch out =
            apply_clamp_refusal(both, {refusal_row(4, 30, 0.05, -500.0), refusal_row(9, 30, 0.05, -500.0)});
        CHECK(out.values(1, 30) == -500.0f);
        const LatentBatch again =
            apply_clamp_refusal(out, {refusal_row(4, 30, 0.05, -500.0), refusal_row(9, 30, 0.05, -500.0)});
        CHECK(same_values(again, out)); // idempotent
    }

    SUBCASE("inconsistent rows are specification errors") {
        CHECK_THROWS_AS(apply_clamp_refusal(batch, {refusal_row(4, 30, 0.05, -500.0), refusal_row(9, 31, 0.05, -500.0)}),
                        specification_error);
        CHECK_THROWS_AS(apply_clamp_refusal(batch, {refusal_row(4, 30, 0.05, -500.0), refusal_row(9, 30, 0.02, -500.0)}),
                        specification_error);
        CHECK_THROWS_AS(apply_clamp_refusal(batch, {refusal_row(4, 30, 0.05, -500.0), refusal_row(9, 30, 0.05, -400.0)}),
                        specification_error);
    }

    SUBCASE("matches the loop oracle on random batches") {
        Rng rng(31);
        for (int trial = 0; trial < 50; ++trial) {
            const LatentBatch random = random_latent_batch(rng, 5, 16, 0.4);
            const std::vector<int> monitored{1, 6, 11};
            std::vector<SteeringRow> rows;
            for (int m : monitored) rows.push_back(refusal_row(m, 15, 0.5, -500.0));
            CHECK(same_values(apply_clamp_refusal(random, rows),
                              oracle_clamp_refusal(random, monitored, 0.5, 15, -500.0)));
        }
    }

    SUBCASE("sequence-global mode writes every position once anything fires") {
        const LatentBatch out = apply_clamp_refusal(batch, {refusal_row(4, 30, 0.05, -500.0)}, true);
        for (int p = 0; p < 3; ++p) CHECK(out.values(p, 30) == -500.0f);
        // and with nothing firing it stays a no-op
        const LatentBatch silent = apply_clamp_refusal(batch, {refusal_row(4, 30, 1.0, -500.0)}, true);
        CHECK(same_values(silent, batch));
    }
}

TEST_CASE("clamp family touches only the targeted columns") {
    Rng rng(37);
    for (int trial = 0; trial < 30; ++trial) {
        const LatentBatch random = random_latent_batch(rng, 4, 10);
        const int latent = static_cast<int>(rng.below(10));
        const LatentBatch clamped = apply_clamp(random, clamp_row(latent, -3.0));
        for (int p = 0; p < 4; ++p)
            for (int j = 0; j < 10; ++j)
                if (j != latent) CHECK(clamped.values(p, j) == random.values(p, j));
    }
}

TEST_CASE("clamp rows on disjoint latents commute") {
    Rng rng(41);
    for (int trial = 0; trial < 30; ++trial) {
        const LatentBatch random = random_latent_batch(rng, 4, 10);
        const SteeringRow a = clamp_row(2, -5.0);
        const SteeringRow b = clamp_cond_row(7, 0.3, -9.0);
        const LatentBatch ab = apply_clamp_cond(apply_clamp(random, a), b);
        const LatentBatch ba = apply_clamp(apply_clamp_cond(random, b), a);
        CHECK(same_values(ab, ba));
    }
}

TEST_CASE("steer_forward") {
    const DemoFixture fx = make_demo_fixture(7);
    const std::string stem = "please explain " + fx.word_for(fx.forget_triggers[0]) + " now";
    const std::vector<int> prompt = fx.model->tokenize(stem + "\nAnswer:");
    const std::vector<int> answer{fx.forget_answers[0]};

    SUBCASE("empty spec logits are bit-identical to the plain forward") {
        const SteeringSpec empty;
        CHECK(fx.model->forward(prompt) == steer_forward(*fx.model, fx.sae, empty, prompt));
    }

    SUBCASE("clamping the planted topic latent strictly lowers the answer log-likelihood") {
        const double baseline = answer_loglikelihood(*fx.model, prompt, answer);
        SteeringSpec spec;
        spec.rows.push_back(clamp_cond_row(fx.forget_latents[0], 0.05, -300.0, fx.sae.release, fx.sae.sae_id));
        const ModelContext steered{fx.model.get(), &fx.sae, &spec, nullptr};
        const double clamped = steered.answer_loglikelihood(prompt, answer);
        CHECK(clamped < baseline);
        CHECK(baseline - clamped > 1.0);
    }

    SUBCASE("add action with coefficient zero leaves logits bit-identical") {
        SteeringSpec spec;
        SteeringRow row = clamp_row(fx.forget_latents[0], 0.0, fx.sae.release, fx.sae.sae_id);
        row.hook_action = HookAction::add;
        spec.rows.push_back(row);
        CHECK(fx.model->forward(prompt) == steer_forward(*fx.model, fx.sae, spec, prompt));
    }

    SUBCASE("sae layer outside the model depth") {
        SparseAutoencoder deep = fx.sae;
        deep.layer = 5;
        const SteeringSpec empty;
        CHECK_THROWS_AS(steer_forward(*fx.model, deep, empty, prompt), std::out_of_range);
    }

    SUBCASE("mixed provenance rows fail validation") {
        SteeringSpec spec;
        spec.rows.push_back(clamp_row(1, -1.0, "release-a", "id"));
        spec.rows.push_back(clamp_row(2, -1.0, "release-b", "id"));
        CHECK_THROWS_AS(steer_forward(*fx.model, fx.sae, spec, prompt), specification_error);
    }
}

TEST_CASE("side actions") {
    LatentBatch batch;
    batch.values = Matrix(2, 16, 0.0f);
    batch.values(0, 3) = 1.5f;

    SUBCASE("print reports shape and statistics without touching the batch") {
        std::ostringstream diag;
        InspectionHooks hooks{&diag, nullptr};
        const LatentBatch out = run_side_action(HookAction::print, batch, &hooks);
        CHECK(same_values(out, batch));
        const std::string line = diag.str();
        CHECK(line.find("2") != std::string::npos);
        CHECK(line.find("16") != std::string::npos);
        CHECK(line.find("nonzero=1") != std::string::npos);
    }

    SUBCASE("debug with no handler is the identity") {
        const LatentBatch out = run_side_action(HookAction::debug, batch, nullptr);
        CHECK(same_values(out, batch));
    }

    SUBCASE("debug handler may edit the latents") {
        InspectionHooks hooks;
        hooks.debug_handler = [](LatentBatch& b) {
            for (int p = 0; p < b.values.rows(); ++p) b.values(p, 3) = 0.0f;
        };
        const LatentBatch out = run_side_action(HookAction::debug, batch, &hooks);
        CHECK(out.values(0, 3) == 0.0f);
    }

    SUBCASE("a throwing handler is logged and never fatal") {
        std::ostringstream diag;
        InspectionHooks hooks{&diag, [](LatentBatch&) { throw std::runtime_error("inspector exploded"); }};
        const LatentBatch out = run_side_action(HookAction::debug, batch, &hooks);
        CHECK(same_values(out, batch));
        CHECK(diag.str().find("inspector exploded") != std::string::npos);
    }

    SUBCASE("print and debug rows inside a spec pass through the forward") {
        const DemoFixture fx = make_demo_fixture(7);
        const std::vector<int> prompt = fx.model->tokenize("anything at all");
        SteeringSpec spec;
        SteeringRow row = clamp_row(0, 0.0, fx.sae.release, fx.sae.sae_id);
        row.hook_action = HookAction::print;
        spec.rows.push_back(row);
        row.hook_action = HookAction::debug;
        spec.rows.push_back(row);
        std::ostringstream diag;
        InspectionHooks hooks{&diag, nullptr};
        const Matrix steered = steer_forward(*fx.model, fx.sae, spec, prompt, &hooks);
        CHECK(steered == fx.model->forward(prompt));
        CHECK(!diag.str().empty());
    }
}

} // TEST_SUITE
