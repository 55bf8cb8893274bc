#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "saesteer/steering.hpp"

namespace saesteer {

struct MCQuestion {
    std::string stem;
    std::array<std::string, 4> choices;
    int answer_index = 0;
    std::string subject;
};

// JSON-lines reader for {"stem", "choices", "answer_index", "subject"};
// malformed records raise format_error naming the line.
std::vector<MCQuestion> load_questions_jsonl(const std::filesystem::path& path);
void save_questions_jsonl(const std::vector<MCQuestion>& questions, const std::filesystem::path& path);

// Each choice is scored as answer_loglikelihood of the choice text after the
// fixed prompt template "<stem>\nAnswer:"; raw (non-length-normalized)
// log-likelihood, argmax prediction, ties to the lowest choice index.
inline constexpr const char* kAnswerTemplateSuffix = "\nAnswer:";

struct QuestionScore {
    std::array<double, 4> loglik{};
    int predicted = 0;
    bool correct = false;
};

struct MCResult {
    double accuracy = 0.0;
    std::vector<QuestionScore> per_question;
};

// Multiple-choice accuracy; questions with anything but 4 non-empty choices
// or an answer_index outside [0,3] raise validation_error. `jobs` > 1 scores
// questions in parallel; results are identical to the serial run.
MCResult mc_accuracy(const ModelContext& context, const std::vector<MCQuestion>& questions, int jobs = 1);

// Eq. 1: chance-adjusted, capped retention ratio.
double retention(double acc_modified, double acc_original, double epsilon = 1e-9, double chance = 0.25);

// Eq. 2: alignment = r_good * (1 - r_bad).
double alignment(double r_good, double r_bad);

// Weighted mean over (accuracy, question_count) pairs; empty input or
// non-positive counts raise std::invalid_argument.
double weighted_accuracy(const std::vector<std::pair<double, long long>>& per_subject);

struct EvalReport {
    double acc_forget = 0.0;
    double acc_retain = 0.0;
    double acc_forget_baseline = 0.0;
    double acc_retain_baseline = 0.0;
    double retention_forget = 0.0;
    double retention_retain = 0.0;
    double alignment = 0.0;
    std::string config_id;
    std::map<std::string, std::pair<double, long long>> per_subject; // subject -> (accuracy, count)
    std::string toolkit_version;
    std::string resolved_config; // full provenance blob
};

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

// Scores both suites under `steered` against the plain baseline and fills
// the Eq. 1 / Eq. 2 metrics. Retain accuracy is the count-weighted mean over
// the retain suite's subjects.
EvalReport evaluate_configuration(const ModelContext& baseline, const ModelContext& steered,
                                  const std::vector<MCQuestion>& forget_suite,
                                  const std::vector<MCQuestion>& retain_suite,
                                  const std::string& config_id, int jobs = 1);

// Metric-only mode: Table-style arithmetic from externally measured
// accuracies, no model involved.
EvalReport metrics_from_accuracies(double acc_forget, double acc_retain, double baseline_forget,
                                   double baseline_retain, const std::string& config_id);

struct SweepPoint {
    std::map<std::string, double> hyperparameters;
    EvalReport report;
    bool failed = false;
    std::string error;
};

// Non-dominated subset maximizing acc_retain and minimizing acc_forget,
// duplicates collapsed, sorted by acc_retain descending.
std::vector<SweepPoint> pareto_frontier(const std::vector<SweepPoint>& points);

// Kruskal-Wallis H with mid-rank tie correction; p from the chi-square upper
// tail with (groups - 1) degrees of freedom. Fewer than two groups or an
// empty group raise std::invalid_argument; all-identical samples yield
// H = 0, p = 1.
struct KruskalWallisResult {
    double h = 0.0;
    double p = 1.0;
};
KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

// Regularized upper incomplete gamma Q(k/2, x/2): P(chi2_k > x).
double chi_square_upper_tail(double x, int dof);

// Ordered hyperparameter grid; cells enumerate in row-major order.
using SweepGrid = std::vector<std::pair<std::string, std::vector<double>>>;
using SweepPipeline = std::function<EvalReport(const std::map<std::string, double>&)>;

struct IsolineSample {
    double level = 0.0;
    double acc_retain = 0.0;
    double acc_forget = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    std::vector<IsolineSample> isolines;
};

struct SweepConfig {
    double baseline_acc_retain = 0.0; // needed to place alignment isolines
    double baseline_acc_forget = 0.0;
    std::vector<double> isoline_levels = {0.5, 0.6, 0.7, 0.8, 0.9};
    int isoline_samples = 101;
    int jobs = 1;
};

// Runs the pipeline over every grid cell (in parallel when jobs > 1; output
// order always matches the serial enumeration). A cell whose pipeline throws
// is marked failed and the sweep continues. Isolines sample the curves of
// constant alignment in (acc_retain, acc_forget) space.
SweepResult run_sweep(const SweepGrid& grid, const SweepPipeline& pipeline, const SweepConfig& config);

// Plot-ready artifacts.
void write_sweep_csv(const std::vector<SweepPoint>& points, const SweepGrid& grid,
                     const std::filesystem::path& path);
void write_isolines_csv(const std::vector<IsolineSample>& isolines, const std::filesystem::path& path);
std::string sweep_points_to_json(const std::vector<SweepPoint>& points);
std::vector<SweepPoint> sweep_points_from_json(const std::string& text);

} // namespace saesteer
