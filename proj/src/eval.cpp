#include "saesteer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "saesteer/errors.hpp"
#include "saesteer/parallel.hpp"
#include "saesteer/version.hpp"

namespace saesteer {

std::vector<MCQuestion> load_questions_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open question file: " + path.string());
    std::vector<MCQuestion> questions;
    std::string line;
    long long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            MCQuestion q;
            q.stem = j.at("stem").get<std::string>();
            const auto& choices = j.at("choices");
            if (!choices.is_array() || choices.size() != 4)
                throw format_error("question must have exactly 4 choices", line_number);
            for (std::size_t i = 0; i < 4; ++i) q.choices[i] = choices[i].get<std::string>();
            q.answer_index = j.at("answer_index").get<int>();
            if (q.answer_index < 0 || q.answer_index > 3)
                throw format_error("answer_index out of [0,3]", line_number);
            q.subject = j.value("subject", "");
            questions.push_back(std::move(q));
        } catch (const nlohmann::json::exception& e) {
            throw format_error("malformed question: " + std::string(e.what()), line_number);
        }
    }
    return questions;
}

void save_questions_jsonl(const std::vector<MCQuestion>& questions, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw format_error("cannot write question file: " + path.string());
    for (const auto& q : questions) {
        nlohmann::json j;
        j["stem"] = q.stem;
        j["choices"] = q.choices;
        j["answer_index"] = q.answer_index;
        j["subject"] = q.subject;
        out << j.dump() << "\n";
    }
}

MCResult mc_accuracy(const ModelContext& context, const std::vector<MCQuestion>& questions, int jobs) {
    if (questions.empty()) throw std::invalid_argument("question list must be non-empty");
    for (const auto& q : questions) {
        for (const auto& c : q.choices)
            if (c.empty()) throw validation_error("question has an empty choice: " + q.stem);
        if (q.answer_index < 0 || q.answer_index > 3)
            throw validation_error("question has answer_index outside [0,3]: " + q.stem);
    }

    MCResult result;
    result.per_question.resize(questions.size());
    parallel_for(static_cast<long long>(questions.size()), jobs, [&](long long qi) {
        const MCQuestion& q = questions[static_cast<std::size_t>(qi)];
        const std::vector<int> prompt = context.tokenize(q.stem + kAnswerTemplateSuffix);
        QuestionScore score;
        for (int c = 0; c < 4; ++c) {
            const std::vector<int> continuation = context.tokenize(q.choices[static_cast<std::size_t>(c)]);
            if (prompt.empty() || continuation.empty())
                throw validation_error("question text tokenizes to nothing: " + q.stem);
            score.loglik[static_cast<std::size_t>(c)] = context.answer_loglikelihood(prompt, continuation);
        }
        score.predicted = 0;
        for (int c = 1; c < 4; ++c)
            if (score.loglik[static_cast<std::size_t>(c)] > score.loglik[static_cast<std::size_t>(score.predicted)])
                score.predicted = c; // strict >, so ties keep the lowest index
        score.correct = score.predicted == q.answer_index;
        result.per_question[static_cast<std::size_t>(qi)] = score;
    });

    long long correct = 0;
    for (const auto& s : result.per_question) correct += s.correct;
    result.accuracy = static_cast<double>(correct) / static_cast<double>(questions.size());
    return result;
}

double retention(double acc_modified, double acc_original, double epsilon, double chance) {
    if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
    const double num = std::max(epsilon, acc_modified - chance);
    const double den = std::max(epsilon, acc_original - chance);
    return std::min(1.0, num / den);
}

double alignment(double r_good, double r_bad) { return r_good * (1.0 - r_bad); }

double weighted_accuracy(const std::vector<std::pair<double, long long>>& per_subject) {
    if (per_subject.empty()) throw std::invalid_argument("per-subject list must be non-empty");
    double weighted = 0.0;
    long long total = 0;
    for (const auto& [acc, count] : per_subject) {
        if (count <= 0) throw std::invalid_argument("question counts must be positive");
        weighted += acc * static_cast<double>(count);
        total += count;
    }
    return weighted / static_cast<double>(total);
}

namespace {

// Per-subject accuracy breakdown from one scored suite.
std::map<std::string, std::pair<double, long long>> subject_breakdown(const std::vector<MCQuestion>& questions,
                                                                      const MCResult& result) {
    std::map<std::string, std::pair<long long, long long>> tally; // subject -> (correct, total)
    for (std::size_t i = 0; i < questions.size(); ++i) {
        auto& [correct, total] = tally[questions[i].subject];
        correct += result.per_question[i].correct;
        ++total;
    }
    std::map<std::string, std::pair<double, long long>> out;
    for (const auto& [subject, counts] : tally)
        out[subject] = {static_cast<double>(counts.first) / static_cast<double>(counts.second), counts.second};
    return out;
}

double suite_weighted_accuracy(const std::map<std::string, std::pair<double, long long>>& per_subject) {
    std::vector<std::pair<double, long long>> flat;
    flat.reserve(per_subject.size());
    for (const auto& [subject, entry] : per_subject) flat.push_back(entry);
    return weighted_accuracy(flat);
}

} // namespace

EvalReport evaluate_configuration(const ModelContext& baseline, const ModelContext& steered,
                                  const std::vector<MCQuestion>& forget_suite,
                                  const std::vector<MCQuestion>& retain_suite,
                                  const std::string& config_id, int jobs) {
    const MCResult base_forget = mc_accuracy(baseline, forget_suite, jobs);
    const MCResult base_retain = mc_accuracy(baseline, retain_suite, jobs);
    const MCResult mod_forget = mc_accuracy(steered, forget_suite, jobs);
    const MCResult mod_retain = mc_accuracy(steered, retain_suite, jobs);

    EvalReport report;
    report.config_id = config_id;
    report.toolkit_version = version();
    report.acc_forget_baseline = base_forget.accuracy;
    report.acc_forget = mod_forget.accuracy;
    report.per_subject = subject_breakdown(forget_suite, mod_forget);
    const auto retain_subjects = subject_breakdown(retain_suite, mod_retain);
    const auto retain_subjects_base = subject_breakdown(retain_suite, base_retain);
    for (const auto& [subject, entry] : retain_subjects) report.per_subject[subject] = entry;
    report.acc_retain = suite_weighted_accuracy(retain_subjects);
    report.acc_retain_baseline = suite_weighted_accuracy(retain_subjects_base);
    report.retention_forget = retention(report.acc_forget, report.acc_forget_baseline);
    report.retention_retain = retention(report.acc_retain, report.acc_retain_baseline);
    report.alignment = alignment(report.retention_retain, report.retention_forget);
    return report;
}

EvalReport metrics_from_accuracies(double acc_forget, double acc_retain, double baseline_forget,
                                   double baseline_retain, const std::string& config_id) {
    EvalReport report;
    report.config_id = config_id;
    report.toolkit_version = version();
    report.acc_forget = acc_forget;
    report.acc_retain = acc_retain;
    report.acc_forget_baseline = baseline_forget;
    report.acc_retain_baseline = baseline_retain;
    report.retention_forget = retention(acc_forget, baseline_forget);
    report.retention_retain = retention(acc_retain, baseline_retain);
    report.alignment = alignment(report.retention_retain, report.retention_forget);
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["acc_forget"] = report.acc_forget;
    j["acc_retain"] = report.acc_retain;
    j["acc_forget_baseline"] = report.acc_forget_baseline;
    j["acc_retain_baseline"] = report.acc_retain_baseline;
    j["retention_forget"] = report.retention_forget;
    j["retention_retain"] = report.retention_retain;
    j["alignment"] = report.alignment;
    j["config_id"] = report.config_id;
    j["toolkit_version"] = report.toolkit_version;
    if (!report.resolved_config.empty()) j["resolved_config"] = report.resolved_config;
    nlohmann::json subjects = nlohmann::json::object();
    for (const auto& [subject, entry] : report.per_subject)
        subjects[subject] = {{"accuracy", entry.first}, {"question_count", entry.second}};
    j["per_subject"] = subjects;
    return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
    EvalReport report;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        report.acc_forget = j.at("acc_forget").get<double>();
        report.acc_retain = j.at("acc_retain").get<double>();
        report.acc_forget_baseline = j.value("acc_forget_baseline", 0.0);
        report.acc_retain_baseline = j.value("acc_retain_baseline", 0.0);
        report.retention_forget = j.at("retention_forget").get<double>();
        report.retention_retain = j.at("retention_retain").get<double>();
        report.alignment = j.at("alignment").get<double>();
        report.config_id = j.value("config_id", "");
        report.toolkit_version = j.value("toolkit_version", "");
        report.resolved_config = j.value("resolved_config", "");
        if (j.contains("per_subject"))
            for (const auto& [subject, entry] : j.at("per_subject").items())
                report.per_subject[subject] = {entry.at("accuracy").get<double>(),
                                               entry.at("question_count").get<long long>()};
    } catch (const nlohmann::json::exception& e) {
        throw format_error("malformed eval report: " + std::string(e.what()));
    }
    return report;
}

std::vector<SweepPoint> pareto_frontier(const std::vector<SweepPoint>& points) {
    std::vector<SweepPoint> frontier;
    for (const auto& candidate : points) {
        if (candidate.failed) continue;
        bool dominated = false;
        for (const auto& other : points) {
            if (other.failed) continue;
            const bool as_good = other.report.acc_retain >= candidate.report.acc_retain &&
                                 other.report.acc_forget <= candidate.report.acc_forget;
            const bool strictly_better = other.report.acc_retain > candidate.report.acc_retain ||
                                         other.report.acc_forget < candidate.report.acc_forget;
            if (as_good && strictly_better) {
                dominated = true;
                break;
            }
        }
        if (dominated) continue;
        const bool duplicate = std::any_of(frontier.begin(), frontier.end(), [&](const SweepPoint& kept) {
            return kept.report.acc_retain == candidate.report.acc_retain &&
                   kept.report.acc_forget == candidate.report.acc_forget;
        });
        if (!duplicate) frontier.push_back(candidate);
    }
    std::stable_sort(frontier.begin(), frontier.end(), [](const SweepPoint& a, const SweepPoint& b) {
        return a.report.acc_retain > b.report.acc_retain;
    });
    return frontier;
}

namespace {

// Regularized lower incomplete gamma P(a, x) by series expansion.
double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 500; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction.
double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

} // namespace

double chi_square_upper_tail(double x, int dof) {
    if (dof < 1) throw std::invalid_argument("degrees of freedom must be >= 1");
    if (x <= 0.0) return 1.0;
    const double a = static_cast<double>(dof) / 2.0;
    const double half = x / 2.0;
    if (half < a + 1.0) return 1.0 - gamma_p_series(a, half);
    return gamma_q_cf(a, half);
}

KruskalWallisResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
    if (groups.size() < 2) throw std::invalid_argument("kruskal-wallis needs at least two groups");
    for (const auto& g : groups)
        if (g.empty()) throw std::invalid_argument("kruskal-wallis groups must be non-empty");

    struct Sample {
        double value;
        std::size_t group;
    };
    std::vector<Sample> samples;
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (double v : groups[g]) samples.push_back({v, g});
    const std::size_t n = samples.size();
    std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.value < b.value; });

    // mid-ranks with tie bookkeeping
    std::vector<double> rank_sum(groups.size(), 0.0);
    double tie_correction = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && samples[j].value == samples[i].value) ++j;
        const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        const double t = static_cast<double>(j - i);
        tie_correction += t * t * t - t;
        for (std::size_t k = i; k < j; ++k) rank_sum[samples[k].group] += mid_rank;
        i = j;
    }

    const double nd = static_cast<double>(n);
    double h = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g)
        h += rank_sum[g] * rank_sum[g] / static_cast<double>(groups[g].size());
    h = 12.0 / (nd * (nd + 1.0)) * h - 3.0 * (nd + 1.0);

    const double denom = 1.0 - tie_correction / (nd * nd * nd - nd);
    KruskalWallisResult result;
    if (denom <= 0.0) return result; // every value identical: H = 0, p = 1
    result.h = h / denom;
    result.p = chi_square_upper_tail(result.h, static_cast<int>(groups.size()) - 1);
    return result;
}

SweepResult run_sweep(const SweepGrid& grid, const SweepPipeline& pipeline, const SweepConfig& config) {
    // cell enumeration: row-major over the ordered axes
    long long cells = 1;
    for (const auto& [name, values] : grid) {
        if (values.empty()) throw std::invalid_argument("sweep axis '" + name + "' has no values");
        cells *= static_cast<long long>(values.size());
    }

    SweepResult result;
    result.points.resize(static_cast<std::size_t>(cells));
    parallel_for(cells, config.jobs, [&](long long cell) {
        SweepPoint point;
        long long remainder = cell;
        for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
            const auto& [name, values] = *it;
            point.hyperparameters[name] = values[static_cast<std::size_t>(remainder % static_cast<long long>(values.size()))];
            remainder /= static_cast<long long>(values.size());
        }
        try {
            point.report = pipeline(point.hyperparameters);
        } catch (const std::exception& e) {
            point.failed = true;
            point.error = e.what();
        }
        result.points[static_cast<std::size_t>(cell)] = std::move(point);
    });

    // Isolines of constant alignment in (acc_retain, acc_forget) space:
    // for a given retain accuracy, alignment = A pins the forget accuracy at
    // chance + (1 - A / R_good) * (baseline_forget - chance).
    const double chance = 0.25;
    for (double level : config.isoline_levels) {
        for (int s = 0; s < config.isoline_samples; ++s) {
            const double acc_retain = chance + (1.0 - chance) * static_cast<double>(s) /
                                                   static_cast<double>(config.isoline_samples - 1);
            const double r_good = retention(acc_retain, config.baseline_acc_retain);
            if (r_good <= 0.0 || level > r_good) continue; // no solvable forget accuracy here
            const double r_bad = 1.0 - level / r_good;
            const double acc_forget = chance + r_bad * (config.baseline_acc_forget - chance);
            result.isolines.push_back({level, acc_retain, acc_forget});
        }
    }
    return result;
}

void write_sweep_csv(const std::vector<SweepPoint>& points, const SweepGrid& grid,
                     const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw format_error("cannot write sweep csv: " + path.string());
    for (const auto& [name, values] : grid) out << name << ",";
    out << "acc_forget,acc_retain,retention_forget,retention_retain,alignment,failed\n";
    for (const auto& point : points) {
        for (const auto& [name, values] : grid) {
            const auto it = point.hyperparameters.find(name);
            out << (it == point.hyperparameters.end() ? 0.0 : it->second) << ",";
        }
        out << point.report.acc_forget << "," << point.report.acc_retain << "," << point.report.retention_forget
            << "," << point.report.retention_retain << "," << point.report.alignment << ","
            << (point.failed ? 1 : 0) << "\n";
    }
}

void write_isolines_csv(const std::vector<IsolineSample>& isolines, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw format_error("cannot write isolines csv: " + path.string());
    out << "level,acc_retain,acc_forget\n";
    for (const auto& s : isolines) out << s.level << "," << s.acc_retain << "," << s.acc_forget << "\n";
}

std::string sweep_points_to_json(const std::vector<SweepPoint>& points) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& point : points) {
        nlohmann::json j;
        j["hyperparameters"] = point.hyperparameters;
        j["report"] = nlohmann::json::parse(eval_report_to_json(point.report));
        j["failed"] = point.failed;
        if (point.failed) j["error"] = point.error;
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

std::vector<SweepPoint> sweep_points_from_json(const std::string& text) {
    std::vector<SweepPoint> points;
    try {
        const nlohmann::json arr = nlohmann::json::parse(text);
        for (const auto& j : arr) {
            SweepPoint point;
            if (j.contains("hyperparameters"))
                for (const auto& [name, value] : j.at("hyperparameters").items())
                    point.hyperparameters[name] = value.get<double>();
            point.report = eval_report_from_json(j.at("report").dump());
            point.failed = j.value("failed", false);
            point.error = j.value("error", "");
            points.push_back(std::move(point));
        }
    } catch (const nlohmann::json::exception& e) {
        throw format_error("malformed sweep points: " + std::string(e.what()));
    }
    return points;
}

} // namespace saesteer
