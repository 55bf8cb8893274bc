// saesteer: command-line front end for the SAE steering / unlearning toolkit.
//
// Exit codes: 0 success, 2 input error, 3 empty-result advisory, 4 internal failure.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "saesteer/attack.hpp"
#include "saesteer/demo.hpp"
#include "saesteer/descriptions.hpp"
#include "saesteer/errors.hpp"
#include "saesteer/eval.hpp"
#include "saesteer/features.hpp"
#include "saesteer/rmu.hpp"
#include "saesteer/steering_csv.hpp"
#include "saesteer/version.hpp"

namespace fs = std::filesystem;
using namespace saesteer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitEmpty = 3;
constexpr int kExitInternal = 4;

struct EmptyResult : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GlobalOpts {
    std::int64_t seed = 0;
    int jobs = 1;
    std::string output_dir = ".";
    bool offline = false;
};

fs::path out_path(const GlobalOpts& g, const std::string& name) {
    fs::create_directories(g.output_dir);
    return fs::path(g.output_dir) / name;
}

void require_readable(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw format_error(std::string(what) + " not found: " + path);
}

// "name=1,2,3;other=0.5,0.9" -> ordered grid
SweepGrid parse_grid(const std::string& text) {
    SweepGrid grid;
    std::istringstream axes(text);
    std::string axis;
    while (std::getline(axes, axis, ';')) {
        if (axis.empty()) continue;
        const auto eq = axis.find('=');
        if (eq == std::string::npos) throw format_error("grid axis missing '=': " + axis);
        std::vector<double> values;
        std::istringstream vals(axis.substr(eq + 1));
        std::string v;
        while (std::getline(vals, v, ','))
            if (!v.empty()) values.push_back(std::stod(v));
        if (values.empty()) throw format_error("grid axis has no values: " + axis);
        grid.emplace_back(axis.substr(0, eq), values);
    }
    if (grid.empty()) throw format_error("empty sweep grid");
    return grid;
}

std::string canonical_words(const Model& model, const std::vector<int>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += " ";
        out += find_word_for_token(model.vocab_size(), tokens[i]);
    }
    return out;
}

void print_report_table(std::ostream& os, const std::vector<EvalReport>& reports) {
    os << std::left << std::setw(24) << "config" << std::right << std::setw(12) << "acc_forget" << std::setw(12)
       << "acc_retain" << std::setw(14) << "ret_forget" << std::setw(14) << "ret_retain" << std::setw(12)
       << "alignment" << "\n";
    for (const auto& r : reports) {
        os << std::left << std::setw(24) << (r.config_id.empty() ? "(unnamed)" : r.config_id) << std::right
           << std::fixed << std::setprecision(4) << std::setw(12) << r.acc_forget << std::setw(12) << r.acc_retain
           << std::setw(14) << r.retention_forget << std::setw(14) << r.retention_retain << std::setw(12)
           << r.alignment << "\n";
    }
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("cannot write file: " + path.string());
    out << text;
}

// ----- command implementations -----

int cmd_init_demo(const GlobalOpts& g) {
    const DemoFixture fx = make_demo_fixture(g.seed);
    write_demo_workspace(fx, g.output_dir);
    std::cout << "demo workspace written to " << g.output_dir << "\n"
              << "  model/  sae/  forget_corpus.txt  retain_corpus.txt\n"
              << "  forget_questions.jsonl  retain_questions.jsonl  descriptions/\n"
              << "forget latents: ";
    for (int l : fx.forget_latents) std::cout << l << " ";
    std::cout << " refusal latent: " << fx.refusal_latent << "\n";
    return kExitOk;
}

int cmd_frequencies(const GlobalOpts& g, const std::string& model_dir, const std::string& sae_dir,
                    const std::string& forget_path, const std::string& retain_path, double activity_threshold) {
    require_readable(forget_path, "forget corpus");
    require_readable(retain_path, "retain corpus");
    const auto model = load_model(model_dir);
    const SparseAutoencoder sae = load_sae(sae_dir);

    const Corpus forget = load_text_corpus(*model, forget_path);
    const Corpus retain = load_text_corpus(*model, retain_path);
    const auto forget_table = activation_frequencies(*model, sae, forget, activity_threshold, forget_path);
    const auto retain_table = activation_frequencies(*model, sae, retain, activity_threshold, retain_path);

    save_frequency_table(forget_table, out_path(g, "forget_frequencies.json"));
    save_frequency_table(retain_table, out_path(g, "retain_frequencies.json"));
    std::cout << "forget: " << forget_table.freq.size() << " active latents over " << forget_table.token_count
              << " tokens\nretain: " << retain_table.freq.size() << " active latents over "
              << retain_table.token_count << " tokens\n";
    return kExitOk;
}

int cmd_select(const GlobalOpts& g, const std::string& forget_freq_path, const std::string& retain_freq_path,
               int top_k, double retain_threshold, const std::string& action_name, double coefficient,
               double clamp_value, int refusal_id, bool has_clamp_value, bool has_refusal_id,
               const std::string& sae_dir, std::string sae_release, std::string sae_id,
               const std::string& descriptions_dir, const std::string& cache_path, const std::string& endpoint,
               const std::string& out_file) {
    const auto action = hook_action_from_string(action_name);
    if (!action) throw format_error("unknown action: " + action_name);
    if (*action == HookAction::clamp_cond && !has_clamp_value)
        throw validation_error("clamp_cond requires --clamp-value");
    if (*action == HookAction::clamp_refusal && (!has_refusal_id || !has_clamp_value))
        throw validation_error("clamp_refusal requires --refusal-id and --clamp-value");

    const FeatureFrequencyTable forget = load_frequency_table(forget_freq_path);
    const FeatureFrequencyTable retain = load_frequency_table(retain_freq_path);
    SelectionConfig config;
    config.top_k = top_k;
    config.retain_threshold = retain_threshold;
    config.activity_threshold = forget.activity_threshold;
    const std::vector<int> selected = select_features(forget, retain, config);
    if (selected.empty())
        throw EmptyResult("no latents pass the retain threshold " + std::to_string(retain_threshold) +
                          "; raise the threshold or check the frequency tables");

    SparseAutoencoder sae;
    bool have_sae = false;
    if (!sae_dir.empty()) {
        sae = load_sae(sae_dir);
        have_sae = true;
        if (sae_release.empty()) sae_release = sae.release;
        if (sae_id.empty()) sae_id = sae.sae_id;
    }

    std::vector<SteeringRow> rows;
    for (int latent : selected) {
        SteeringRow row;
        row.latent_idx = latent;
        row.hook_action = *action;
        row.steering_coefficient = coefficient;
        row.sae_release = sae_release;
        row.sae_id = sae_id;
        if (has_clamp_value) row.clamp_value = clamp_value;
        if (*action == HookAction::clamp_refusal) row.refusal_id = refusal_id;
        rows.push_back(std::move(row));
    }

    if (!descriptions_dir.empty() || !cache_path.empty() || !endpoint.empty()) {
        DescriptionClientConfig dc;
        dc.fixture_dir = descriptions_dir;
        dc.cache_path = cache_path;
        dc.endpoint = endpoint;
        dc.offline = g.offline;
        DescriptionClient client(dc);
        try {
            const auto described = client.fetch(sae_release, sae_id, selected);
            for (std::size_t i = 0; i < rows.size(); ++i) rows[i].description = described[i].description;
        } catch (const fetch_error& e) {
            std::cerr << "warning: descriptions unavailable, emitting without them (" << e.what() << ")\n";
        }
    }

    SteeringDocument doc = make_document(std::move(rows));
    if (have_sae) {
        const ValidationReport report = validate_against_sae(doc, sae);
        for (const auto& finding : report.findings)
            std::cerr << "warning: row " << finding.row << " " << finding.kind << ": " << finding.message << "\n";
    }
    save_steering_csv(doc, out_file);
    std::cout << "wrote " << doc.rows.size() << " steering rows to " << out_file << "\n";
    return kExitOk;
}

int cmd_eval(const GlobalOpts& g, bool metrics_only, double acc_forget, double acc_retain, double baseline_forget,
             double baseline_retain, const std::string& model_dir, const std::string& sae_dir,
             const std::string& spec_path, const std::string& forget_questions_path,
             const std::string& retain_questions_path, const std::string& config_id, const std::string& out_file,
             const std::string& resolved_config) {
    EvalReport report;
    if (metrics_only) {
        report = metrics_from_accuracies(acc_forget, acc_retain, baseline_forget, baseline_retain, config_id);
    } else {
        const auto model = load_model(model_dir);
        const SparseAutoencoder sae = load_sae(sae_dir);
        SteeringSpec spec; // empty spec means an unmodified model
        if (!spec_path.empty()) {
            const SteeringDocument doc = load_steering_csv(spec_path);
            const ValidationReport validation = validate_against_sae(doc, sae);
            if (!validation.ok()) {
                for (const auto& finding : validation.findings)
                    std::cerr << "error: row " << finding.row << " " << finding.kind << ": " << finding.message << "\n";
                throw validation_error("steering csv does not match the loaded SAE");
            }
            spec = doc.spec();
        }
        const auto forget_suite = load_questions_jsonl(forget_questions_path);
        const auto retain_suite = load_questions_jsonl(retain_questions_path);
        const ModelContext baseline{model.get(), nullptr, nullptr, nullptr};
        const ModelContext steered{model.get(), &sae, &spec, nullptr};
        report = evaluate_configuration(baseline, steered, forget_suite, retain_suite, config_id, g.jobs);
    }
    report.resolved_config = resolved_config;

    write_text(out_file.empty() ? out_path(g, "eval_report.json") : fs::path(out_file),
               eval_report_to_json(report) + "\n");
    print_report_table(std::cout, {report});
    return kExitOk;
}

int cmd_sweep(const GlobalOpts& g, const std::string& model_dir, const std::string& sae_dir,
              const std::string& forget_freq_path, const std::string& retain_freq_path,
              const std::string& forget_questions_path, const std::string& retain_questions_path,
              const std::string& grid_text, const std::string& action_name, double fixed_coefficient,
              double fixed_clamp_value, bool has_fixed_clamp_value, int fixed_refusal_id,
              bool has_fixed_refusal_id) {
    const auto model = load_model(model_dir);
    const SparseAutoencoder sae = load_sae(sae_dir);
    const FeatureFrequencyTable forget_freq = load_frequency_table(forget_freq_path);
    const FeatureFrequencyTable retain_freq = load_frequency_table(retain_freq_path);
    const auto forget_suite = load_questions_jsonl(forget_questions_path);
    const auto retain_suite = load_questions_jsonl(retain_questions_path);
    const SweepGrid grid = parse_grid(grid_text);
    const auto base_action = hook_action_from_string(action_name);
    if (!base_action) throw format_error("unknown action: " + action_name);
    const auto grid_has = [&](const char* axis) {
        return std::any_of(grid.begin(), grid.end(), [&](const auto& a) { return a.first == axis; });
    };
    if ((*base_action == HookAction::clamp_cond || *base_action == HookAction::clamp_refusal) &&
        !grid_has("clamp_value") && !has_fixed_clamp_value)
        throw validation_error(action_name + " sweep needs a clamp_value axis or --clamp-value");
    if (*base_action == HookAction::clamp_refusal && !grid_has("refusal_id") && !has_fixed_refusal_id)
        throw validation_error("clamp_refusal sweep needs a refusal_id axis or --refusal-id");

    const ModelContext baseline{model.get(), nullptr, nullptr, nullptr};
    const MCResult base_forget = mc_accuracy(baseline, forget_suite, g.jobs);
    const MCResult base_retain = mc_accuracy(baseline, retain_suite, g.jobs);

    const SweepPipeline pipeline = [&](const std::map<std::string, double>& hp) {
        SelectionConfig sel;
        sel.top_k = hp.count("top_k") ? static_cast<int>(hp.at("top_k")) : 5;
        sel.retain_threshold = hp.count("retain_threshold") ? hp.at("retain_threshold") : 0.0001;
        sel.activity_threshold = forget_freq.activity_threshold;
        const std::vector<int> selected = select_features(forget_freq, retain_freq, sel);
        if (selected.empty()) throw std::runtime_error("empty selection for this cell");

        SteeringSpec spec;
        for (int latent : selected) {
            SteeringRow row;
            row.latent_idx = latent;
            row.hook_action = *base_action;
            row.steering_coefficient = hp.count("coefficient") ? hp.at("coefficient") : fixed_coefficient;
            row.sae_release = sae.release;
            row.sae_id = sae.sae_id;
            if (hp.count("clamp_value")) row.clamp_value = hp.at("clamp_value");
            else if (has_fixed_clamp_value) row.clamp_value = fixed_clamp_value;
            if (*base_action == HookAction::clamp_refusal) {
                if (hp.count("refusal_id")) row.refusal_id = static_cast<int>(hp.at("refusal_id"));
                else if (has_fixed_refusal_id) row.refusal_id = fixed_refusal_id;
                else throw std::runtime_error("clamp_refusal sweep needs a refusal_id axis or --refusal-id");
            }
            spec.rows.push_back(std::move(row));
        }
        const ModelContext steered{model.get(), &sae, &spec, nullptr};
        return evaluate_configuration(baseline, steered, forget_suite, retain_suite, "sweep_cell", 1);
    };

    SweepConfig config;
    config.baseline_acc_forget = base_forget.accuracy;
    config.baseline_acc_retain = base_retain.accuracy;
    config.jobs = g.jobs;
    const SweepResult result = run_sweep(grid, pipeline, config);

    write_sweep_csv(result.points, grid, out_path(g, "sweep.csv"));
    write_isolines_csv(result.isolines, out_path(g, "isolines.csv"));
    write_text(out_path(g, "sweep_points.json"), sweep_points_to_json(result.points) + "\n");

    int failed = 0;
    for (const auto& p : result.points) failed += p.failed;
    std::cout << result.points.size() << " cells (" << failed << " failed) -> sweep.csv, isolines.csv, sweep_points.json\n";
    if (failed == static_cast<int>(result.points.size())) throw std::runtime_error("every sweep cell failed");
    return kExitOk;
}

int cmd_pareto(const GlobalOpts& g, const std::string& points_path, const std::string& out_file) {
    const auto points = sweep_points_from_json(slurp(points_path));
    const auto frontier = pareto_frontier(points);
    const std::string json = sweep_points_to_json(frontier) + "\n";
    write_text(out_file.empty() ? out_path(g, "pareto_frontier.json") : fs::path(out_file), json);
    std::cout << "frontier: " << frontier.size() << " of " << points.size() << " points\n";
    for (const auto& p : frontier)
        std::cout << "  acc_retain=" << p.report.acc_retain << " acc_forget=" << p.report.acc_forget
                  << " alignment=" << p.report.alignment << "\n";
    return kExitOk;
}

int cmd_attack(const GlobalOpts& g, const std::string& model_dir, const std::string& sae_dir,
               const std::string& spec_path, const std::string& prompt_text, const std::string& target_text,
               AttackConfig config, const std::string& out_file) {
    const auto model = load_model(model_dir);
    SparseAutoencoder sae;
    SteeringSpec spec;
    const bool steered = !spec_path.empty();
    if (steered) {
        if (sae_dir.empty()) throw validation_error("--spec requires --sae");
        sae = load_sae(sae_dir);
        spec = load_steering_csv(spec_path).spec();
    }
    config.seed = g.seed;

    const std::vector<int> prompt = model->tokenize(prompt_text);
    const std::vector<int> target = model->tokenize(target_text);
    if (prompt.empty() || target.empty()) throw validation_error("prompt and target must tokenize to something");

    const ModelContext context{model.get(), steered ? &sae : nullptr, steered ? &spec : nullptr, nullptr};
    const AttackResult result = concurrent_greedy_search(context, prompt, target, config, prompt_text, g.jobs);

    write_text(out_file.empty() ? out_path(g, "attack_result.json") : fs::path(out_file),
               attack_result_to_json(result) + "\n");
    std::cout << "initial loss " << result.initial_loss << " -> final loss " << result.final_loss << " ("
              << result.target_loss_evaluations << " evaluations)\n"
              << "success: " << (result.success ? "yes" : "no") << "\n"
              << "generated: " << canonical_words(*model, result.generated) << "\n";
    return kExitOk;
}

int cmd_rmu_train(const GlobalOpts& g, const std::string& model_dir, const std::string& forget_path,
                  const std::string& retain_path, RMUConfig config) {
    require_readable(forget_path, "forget corpus");
    require_readable(retain_path, "retain corpus");
    const auto model = load_model(model_dir);
    const Corpus forget = load_text_corpus(*model, forget_path);
    const Corpus retain = load_text_corpus(*model, retain_path);
    config.seed = g.seed;

    RmuTrainResult result = rmu_train(*model, forget, retain, config);
    save_model(*result.model, out_path(g, "rmu_model"));
    write_loss_trace_csv(result.trace, out_path(g, "rmu_loss_trace.csv").string());

    const auto u = rmu_random_unit_direction(config.seed, model->config().d_model);
    const RmuProbe before = rmu_probe(*model, *model, forget, config.target_layer, config.steering_scale, u);
    const RmuProbe after_f = rmu_probe(*result.model, *model, forget, config.target_layer, config.steering_scale, u);
    const RmuProbe after_r = rmu_probe(*result.model, *model, retain, config.target_layer, config.steering_scale, u);
    std::cout << "forget distance to s*u: " << before.forget_distance << " -> " << after_f.forget_distance << "\n"
              << "retain drift from frozen: " << after_r.retain_drift << "\n"
              << "model written to " << out_path(g, "rmu_model") << "\n";
    return kExitOk;
}

int cmd_steer_generate(const GlobalOpts& g, const std::string& model_dir, const std::string& sae_dir,
                       const std::string& spec_path, const std::string& prompt_text, int max_tokens) {
    (void)g;
    const auto model = load_model(model_dir);
    const SparseAutoencoder sae = load_sae(sae_dir);
    const SteeringSpec spec = load_steering_csv(spec_path).spec();
    const std::vector<int> prompt = model->tokenize(prompt_text);
    if (prompt.empty()) throw validation_error("prompt must tokenize to something");

    const ModelContext plain{model.get(), nullptr, nullptr, nullptr};
    const ModelContext steered{model.get(), &sae, &spec, nullptr};
    const auto base = plain.greedy_decode(prompt, max_tokens);
    const auto mod = steered.greedy_decode(prompt, max_tokens);
    std::cout << "baseline: " << canonical_words(*model, base) << "\n"
              << "steered:  " << canonical_words(*model, mod) << "\n";
    return kExitOk;
}

int cmd_report(const GlobalOpts& g, const std::vector<std::string>& inputs, const std::string& out_file) {
    (void)g;
    std::vector<EvalReport> reports;
    for (const auto& path : inputs) reports.push_back(eval_report_from_json(slurp(path)));
    std::ostringstream table;
    print_report_table(table, reports);
    std::cout << table.str();
    if (!out_file.empty()) write_text(out_file, table.str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAE-based conditional unlearning toolkit"};
    app.set_version_flag("--version", SAESTEER_VERSION);
    app.fallthrough();
    app.set_config("--config", "", "flat key-value config file with [subcommand] sections");

    GlobalOpts g;
    app.add_option("--seed", g.seed, "seed for all stochastic behavior");
    app.add_option("--jobs", g.jobs, "worker threads for parallel scoring");
    app.add_option("--output-dir", g.output_dir, "directory for generated artifacts");
    app.add_flag("--offline", g.offline, "never touch the network");

    std::function<int()> run;

    // init-demo
    {
        auto* cmd = app.add_subcommand("init-demo", "write a runnable desk-scale demo workspace");
        cmd->callback([&] { run = [&] { return cmd_init_demo(g); }; });
    }

    // frequencies
    {
        auto* cmd = app.add_subcommand("frequencies", "compute per-latent activation frequencies");
        auto model_dir = std::make_shared<std::string>();
        auto sae_dir = std::make_shared<std::string>();
        auto forget = std::make_shared<std::string>();
        auto retain = std::make_shared<std::string>();
        auto threshold = std::make_shared<double>(0.0);
        cmd->add_option("--model", *model_dir, "model weights directory")->required();
        cmd->add_option("--sae", *sae_dir, "sae weights directory")->required();
        cmd->add_option("--forget", *forget, "forget corpus (text, one document per line)")->required();
        cmd->add_option("--retain", *retain, "retain corpus")->required();
        cmd->add_option("--activity-threshold", *threshold, "activation counts as firing above this value");
        cmd->callback([&, model_dir, sae_dir, forget, retain, threshold] {
            run = [&, model_dir, sae_dir, forget, retain, threshold] {
                return cmd_frequencies(g, *model_dir, *sae_dir, *forget, *retain, *threshold);
            };
        });
    }

    // select
    {
        auto* cmd = app.add_subcommand("select", "select harmful latents and emit a Steering CSV");
        struct Opts {
            std::string forget_freq, retain_freq, action = "clamp", sae_dir, sae_release, sae_id;
            std::string descriptions_dir, cache_path, endpoint, out = "steering.csv";
            int top_k = 5, refusal_id = 0;
            double retain_threshold = 0.0001, coefficient = -300.0, clamp_value = 0.0;
        };
        auto o = std::make_shared<Opts>();
        cmd->add_option("--forget-freq", o->forget_freq, "forget frequency table JSON")->required();
        cmd->add_option("--retain-freq", o->retain_freq, "retain frequency table JSON")->required();
        cmd->add_option("--top-k", o->top_k, "number of latents to select");
        cmd->add_option("--retain-threshold", o->retain_threshold, "max retain frequency for candidates");
        cmd->add_option("--action", o->action, "clamp | clamp_cond | clamp_refusal | add");
        cmd->add_option("--coefficient", o->coefficient, "steering coefficient");
        auto* cv = cmd->add_option("--clamp-value", o->clamp_value, "firing threshold for clamp_cond/clamp_refusal");
        auto* rid = cmd->add_option("--refusal-id", o->refusal_id, "refusal latent for clamp_refusal");
        cmd->add_option("--sae", o->sae_dir, "sae directory for provenance + validation");
        cmd->add_option("--sae-release", o->sae_release, "provenance release string (overrides --sae)");
        cmd->add_option("--sae-id", o->sae_id, "provenance sae_id string (overrides --sae)");
        cmd->add_option("--descriptions-dir", o->descriptions_dir, "offline description fixtures");
        cmd->add_option("--descriptions-cache", o->cache_path, "description cache JSON");
        cmd->add_option("--descriptions-endpoint", o->endpoint, "description endpoint template");
        cmd->add_option("--out", o->out, "output Steering CSV path");
        cmd->callback([&, o, cv, rid] {
            run = [&, o, cv, rid] {
                return cmd_select(g, o->forget_freq, o->retain_freq, o->top_k, o->retain_threshold, o->action,
                                  o->coefficient, o->clamp_value, o->refusal_id, cv->count() > 0, rid->count() > 0,
                                  o->sae_dir, o->sae_release, o->sae_id, o->descriptions_dir, o->cache_path,
                                  o->endpoint, o->out);
            };
        });
    }

    // eval
    {
        auto* cmd = app.add_subcommand("eval", "score suites and compute retention / alignment");
        struct Opts {
            bool metrics_only = false;
            double acc_forget = 0, acc_retain = 0, baseline_forget = 0, baseline_retain = 0;
            std::string model_dir, sae_dir, spec, forget_questions, retain_questions, config_id, out;
        };
        auto o = std::make_shared<Opts>();
        cmd->add_flag("--metrics-only", o->metrics_only, "compute metrics from externally measured accuracies");
        cmd->add_option("--acc-forget", o->acc_forget, "measured forget-suite accuracy (metrics-only)");
        cmd->add_option("--acc-retain", o->acc_retain, "measured retain-suite accuracy (metrics-only)");
        cmd->add_option("--baseline-forget", o->baseline_forget, "unmodified forget-suite accuracy");
        cmd->add_option("--baseline-retain", o->baseline_retain, "unmodified retain-suite accuracy");
        cmd->add_option("--model", o->model_dir, "model weights directory");
        cmd->add_option("--sae", o->sae_dir, "sae weights directory");
        cmd->add_option("--spec", o->spec, "Steering CSV (omit for the unmodified model)");
        cmd->add_option("--forget-questions", o->forget_questions, "forget suite JSONL");
        cmd->add_option("--retain-questions", o->retain_questions, "retain suite JSONL");
        cmd->add_option("--config-id", o->config_id, "label for the report");
        cmd->add_option("--out", o->out, "report JSON path");
        cmd->callback([&, o, argc, argv] {
            std::string resolved;
            for (int i = 0; i < argc; ++i) resolved += std::string(i ? " " : "") + argv[i];
            run = [&, o, resolved] {
                if (!o->metrics_only && (o->model_dir.empty() || o->sae_dir.empty() || o->forget_questions.empty() ||
                                         o->retain_questions.empty()))
                    throw validation_error("eval needs --model, --sae, --forget-questions and --retain-questions "
                                           "(or --metrics-only)");
                return cmd_eval(g, o->metrics_only, o->acc_forget, o->acc_retain, o->baseline_forget,
                                o->baseline_retain, o->model_dir, o->sae_dir, o->spec, o->forget_questions,
                                o->retain_questions, o->config_id, o->out, resolved);
            };
        });
    }

    // sweep
    {
        auto* cmd = app.add_subcommand("sweep", "hyperparameter sweep with alignment isolines");
        struct Opts {
            std::string model_dir, sae_dir, forget_freq, retain_freq, forget_questions, retain_questions;
            std::string grid, action = "clamp_cond";
            double coefficient = -300.0, clamp_value = 0.0;
            int refusal_id = 0;
        };
        auto o = std::make_shared<Opts>();
        cmd->add_option("--model", o->model_dir)->required();
        cmd->add_option("--sae", o->sae_dir)->required();
        cmd->add_option("--forget-freq", o->forget_freq)->required();
        cmd->add_option("--retain-freq", o->retain_freq)->required();
        cmd->add_option("--forget-questions", o->forget_questions)->required();
        cmd->add_option("--retain-questions", o->retain_questions)->required();
        cmd->add_option("--grid", o->grid, "axes like \"coefficient=-100,-300;clamp_value=0.02,0.05;top_k=3,5\"")
            ->required();
        cmd->add_option("--action", o->action, "steering action for every cell");
        cmd->add_option("--coefficient", o->coefficient, "coefficient when the grid has no coefficient axis");
        auto* cv = cmd->add_option("--clamp-value", o->clamp_value, "clamp_value when the grid has no such axis");
        auto* rid = cmd->add_option("--refusal-id", o->refusal_id, "refusal latent when the grid has no such axis");
        cmd->callback([&, o, cv, rid] {
            run = [&, o, cv, rid] {
                return cmd_sweep(g, o->model_dir, o->sae_dir, o->forget_freq, o->retain_freq, o->forget_questions,
                                 o->retain_questions, o->grid, o->action, o->coefficient, o->clamp_value,
                                 cv->count() > 0, o->refusal_id, rid->count() > 0);
            };
        });
    }

    // pareto
    {
        auto* cmd = app.add_subcommand("pareto", "non-dominated frontier of sweep points");
        auto points = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--points", *points, "sweep_points.json")->required();
        cmd->add_option("--out", *out, "frontier JSON path");
        cmd->callback([&, points, out] { run = [&, points, out] { return cmd_pareto(g, *points, *out); }; });
    }

    // attack
    {
        auto* cmd = app.add_subcommand("attack", "greedy adversarial suffix search");
        struct Opts {
            std::string model_dir, sae_dir, spec, prompt, target, out;
            AttackConfig config;
        };
        auto o = std::make_shared<Opts>();
        cmd->add_option("--model", o->model_dir)->required();
        cmd->add_option("--sae", o->sae_dir, "sae directory (needed with --spec)");
        cmd->add_option("--spec", o->spec, "Steering CSV to attack the steered model");
        cmd->add_option("--prompt", o->prompt, "question text")->required();
        cmd->add_option("--target", o->target, "target answer text")->required();
        cmd->add_option("-b,--tries", o->config.tries_per_iteration, "candidate positions per iteration");
        cmd->add_option("-k,--candidates", o->config.candidates_per_index, "candidate tokens per position");
        cmd->add_option("-t,--iterations", o->config.iterations, "iterations");
        cmd->add_option("--suffix-length", o->config.suffix_length, "suffix length in tokens");
        cmd->add_option("--out", o->out, "attack result JSON path");
        cmd->callback([&, o] {
            run = [&, o] {
                return cmd_attack(g, o->model_dir, o->sae_dir, o->spec, o->prompt, o->target, o->config, o->out);
            };
        });
    }

    // rmu-train
    {
        auto* cmd = app.add_subcommand("rmu-train", "train the RMU unlearning baseline");
        struct Opts {
            std::string model_dir, forget, retain;
            RMUConfig config;
        };
        auto o = std::make_shared<Opts>();
        o->config.steps = 200;
        o->config.learning_rate = 1e-3;
        cmd->add_option("--model", o->model_dir)->required();
        cmd->add_option("--forget", o->forget, "forget corpus")->required();
        cmd->add_option("--retain", o->retain, "retain corpus")->required();
        cmd->add_option("--s,--steering-scale", o->config.steering_scale, "target activation scale s");
        cmd->add_option("--alpha,--retain-weight", o->config.retain_weight, "retain loss weight");
        cmd->add_option("--layer", o->config.target_layer, "target layer");
        cmd->add_option("--steps", o->config.steps, "SGD steps");
        cmd->add_option("--lr", o->config.learning_rate, "learning rate");
        cmd->callback([&, o] {
            run = [&, o] { return cmd_rmu_train(g, o->model_dir, o->forget, o->retain, o->config); };
        });
    }

    // steer-generate
    {
        auto* cmd = app.add_subcommand("steer-generate", "compare greedy continuations with and without steering");
        struct Opts {
            std::string model_dir, sae_dir, spec, prompt;
            int max_tokens = 8;
        };
        auto o = std::make_shared<Opts>();
        cmd->add_option("--model", o->model_dir)->required();
        cmd->add_option("--sae", o->sae_dir)->required();
        cmd->add_option("--spec", o->spec)->required();
        cmd->add_option("--prompt", o->prompt)->required();
        cmd->add_option("--max-tokens", o->max_tokens);
        cmd->callback([&, o] {
            run = [&, o] { return cmd_steer_generate(g, o->model_dir, o->sae_dir, o->spec, o->prompt, o->max_tokens); };
        });
    }

    // report
    {
        auto* cmd = app.add_subcommand("report", "format eval reports as a comparison table");
        auto inputs = std::make_shared<std::vector<std::string>>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--inputs", *inputs, "eval report JSON files")->required()->expected(-1);
        cmd->add_option("--out", *out, "write the table here too");
        cmd->callback([&, inputs, out] { run = [&, inputs, out] { return cmd_report(g, *inputs, *out); }; });
    }

    app.require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitInput;
    }

    try {
        return run ? run() : kExitInput;
    } catch (const EmptyResult& e) {
        std::cerr << "advisory: " << e.what() << "\n";
        return kExitEmpty;
    } catch (const format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const load_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const fetch_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
