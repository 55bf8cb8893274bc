#include "saesteer/rmu.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "saesteer/errors.hpp"
#include "saesteer/rng.hpp"

namespace saesteer {

namespace {

constexpr double kRmsEps = 1e-6; // matches the inference path

using Vec = std::vector<double>;
using Mat = std::vector<Vec>; // [rows][cols]

Mat zeros(std::size_t rows, std::size_t cols) { return Mat(rows, Vec(cols, 0.0)); }

// Training-side forward tape through blocks 0..target_layer, double
// precision over the float weights. Mirrors ToyModel::forward exactly.
struct Tape {
    std::vector<int> tokens;
    std::vector<Mat> x_in;    // residual entering block l
    std::vector<Mat> a;       // rmsnorm(x_in)
    std::vector<Mat> q, k, v;
    std::vector<std::vector<Mat>> att; // [layer][head][p][t], weights over t <= p
    std::vector<Mat> mixed;   // pre-Wo attention output
    std::vector<Mat> x_mid;   // after attention residual add
    std::vector<Mat> m;       // rmsnorm(x_mid)
    std::vector<Mat> hrelu;   // relu(W1 m)
    Mat x_out;                // residual after block target_layer
};

void rmsnorm_rows(const Mat& x, Mat& y) {
    const std::size_t d = x.empty() ? 0 : x[0].size();
    for (std::size_t p = 0; p < x.size(); ++p) {
        double ms = 0.0;
        for (double v : x[p]) ms += v * v;
        const double scale = 1.0 / std::sqrt(ms / static_cast<double>(d) + kRmsEps);
        for (std::size_t i = 0; i < d; ++i) y[p][i] = x[p][i] * scale;
    }
}

// dL/dx for y = x / sqrt(mean(x^2) + eps) given dL/dy, using the cached y.
void rmsnorm_backward_row(const Vec& x, const Vec& y, const Vec& gy, Vec& gx) {
    const std::size_t d = x.size();
    double ms = 0.0;
    for (double v : x) ms += v * v;
    const double scale = 1.0 / std::sqrt(ms / static_cast<double>(d) + kRmsEps);
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += gy[i] * y[i];
    for (std::size_t i = 0; i < d; ++i) gx[i] += scale * (gy[i] - y[i] * dot / static_cast<double>(d));
}

void matvec_rows(const Matrix& w, const Mat& x, Mat& y) {
    for (std::size_t p = 0; p < x.size(); ++p)
        for (int o = 0; o < w.rows(); ++o) {
            double acc = 0.0;
            const float* row = w.data() + static_cast<std::size_t>(o) * w.cols();
            for (int i = 0; i < w.cols(); ++i) acc += static_cast<double>(row[i]) * x[p][static_cast<std::size_t>(i)];
            y[p][static_cast<std::size_t>(o)] = acc;
        }
}

// grads for y = W x: gW += gy x^T, gx += W^T gy (accumulating)
void matvec_backward_rows(const Matrix& w, const Mat& x, const Mat& gy, Vec* gw, Mat* gx) {
    for (std::size_t p = 0; p < x.size(); ++p) {
        for (int o = 0; o < w.rows(); ++o) {
            const double g = gy[p][static_cast<std::size_t>(o)];
            if (g == 0.0) continue;
            const float* row = w.data() + static_cast<std::size_t>(o) * w.cols();
            if (gw)
                for (int i = 0; i < w.cols(); ++i)
                    (*gw)[static_cast<std::size_t>(o) * w.cols() + i] += g * x[p][static_cast<std::size_t>(i)];
            if (gx)
                for (int i = 0; i < w.cols(); ++i)
                    (*gx)[p][static_cast<std::size_t>(i)] += g * static_cast<double>(row[i]);
        }
    }
}

Tape tape_forward(const ToyModel& model, TokenSpan tokens, int target_layer) {
    const ModelConfig& cfg = model.config();
    const std::size_t n = tokens.size();
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const int n_heads = cfg.n_heads;
    const int head_dim = cfg.d_model / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const int depth = target_layer + 1;

    Tape tape;
    tape.tokens.assign(tokens.begin(), tokens.end());
    tape.x_in.assign(static_cast<std::size_t>(depth), zeros(n, d));
    tape.a.assign(static_cast<std::size_t>(depth), zeros(n, d));
    tape.q.assign(static_cast<std::size_t>(depth), zeros(n, d));
    tape.k.assign(static_cast<std::size_t>(depth), zeros(n, d));
    tape.v.assign(static_cast<std::size_t>(depth), zeros(n, d));
    tape.att.assign(static_cast<std::size_t>(depth), std::vector<Mat>(static_cast<std::size_t>(n_heads), zeros(n, n)));
    tape.mixed.assign(static_cast<std::size_t>(depth), zeros(n, d));
    tape.x_mid.assign(static_cast<std::size_t>(depth), zeros(n, d));
    tape.m.assign(static_cast<std::size_t>(depth), zeros(n, d));
    tape.hrelu.assign(static_cast<std::size_t>(depth), zeros(n, 4 * d));

    const Matrix& wte = model.tensor("wte");
    const Matrix& wpe = model.tensor("wpe");
    Mat x = zeros(n, d);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < d; ++i)
            x[p][i] = static_cast<double>(wte(tokens[p], static_cast<int>(i))) +
                      static_cast<double>(wpe(static_cast<int>(p), static_cast<int>(i)));

    for (int layer = 0; layer < depth; ++layer) {
        const std::string prefix = "layer" + std::to_string(layer) + "_";
        const std::size_t l = static_cast<std::size_t>(layer);
        tape.x_in[l] = x;
        rmsnorm_rows(x, tape.a[l]);
        matvec_rows(model.tensor(prefix + "wq"), tape.a[l], tape.q[l]);
        matvec_rows(model.tensor(prefix + "wk"), tape.a[l], tape.k[l]);
        matvec_rows(model.tensor(prefix + "wv"), tape.a[l], tape.v[l]);

        for (std::size_t p = 0; p < n; ++p) {
            for (int h = 0; h < n_heads; ++h) {
                const std::size_t hs = static_cast<std::size_t>(h * head_dim);
                double max_score = -1e300;
                Vec scores(p + 1);
                for (std::size_t t = 0; t <= p; ++t) {
                    double dot = 0.0;
                    for (int j = 0; j < head_dim; ++j) dot += tape.q[l][p][hs + j] * tape.k[l][t][hs + j];
                    scores[t] = dot * att_scale;
                    max_score = std::max(max_score, scores[t]);
                }
                double denom = 0.0;
                for (std::size_t t = 0; t <= p; ++t) {
                    scores[t] = std::exp(scores[t] - max_score);
                    denom += scores[t];
                }
                for (std::size_t t = 0; t <= p; ++t) tape.att[l][static_cast<std::size_t>(h)][p][t] = scores[t] / denom;
                for (int j = 0; j < head_dim; ++j) {
                    double acc = 0.0;
                    for (std::size_t t = 0; t <= p; ++t)
                        acc += tape.att[l][static_cast<std::size_t>(h)][p][t] * tape.v[l][t][hs + j];
                    tape.mixed[l][p][hs + j] = acc;
                }
            }
        }
        Mat proj = zeros(n, d);
        matvec_rows(model.tensor(prefix + "wo"), tape.mixed[l], proj);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t i = 0; i < d; ++i) tape.x_mid[l][p][i] = x[p][i] + proj[p][i];

        rmsnorm_rows(tape.x_mid[l], tape.m[l]);
        Mat h1 = zeros(n, 4 * d);
        matvec_rows(model.tensor(prefix + "w1"), tape.m[l], h1);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t i = 0; i < 4 * d; ++i) tape.hrelu[l][p][i] = h1[p][i] > 0.0 ? h1[p][i] : 0.0;
        Mat mlp = zeros(n, d);
        matvec_rows(model.tensor(prefix + "w2"), tape.hrelu[l], mlp);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t i = 0; i < d; ++i) x[p][i] = tape.x_mid[l][p][i] + mlp[p][i];
    }
    tape.x_out = x;
    return tape;
}

// Backpropagates dL/dx_out through the tape, accumulating tensor gradients.
void tape_backward(const ToyModel& model, const Tape& tape, Mat g, detail::RmuGradients& grads) {
    const ModelConfig& cfg = model.config();
    const std::size_t n = tape.tokens.size();
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const int n_heads = cfg.n_heads;
    const int head_dim = cfg.d_model / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const int depth = static_cast<int>(tape.x_in.size());

    for (int layer = depth - 1; layer >= 0; --layer) {
        const std::string prefix = "layer" + std::to_string(layer) + "_";
        const std::size_t l = static_cast<std::size_t>(layer);

        // x_out = x_mid + W2 relu(W1 rmsnorm(x_mid))
        Mat g_hrelu = zeros(n, 4 * d);
        matvec_backward_rows(model.tensor(prefix + "w2"), tape.hrelu[l], g, grads.find(prefix + "w2"), &g_hrelu);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t i = 0; i < 4 * d; ++i)
                if (tape.hrelu[l][p][i] <= 0.0) g_hrelu[p][i] = 0.0;
        Mat g_m = zeros(n, d);
        matvec_backward_rows(model.tensor(prefix + "w1"), tape.m[l], g_hrelu, grads.find(prefix + "w1"), &g_m);
        Mat g_xmid = g; // residual branch
        for (std::size_t p = 0; p < n; ++p)
            rmsnorm_backward_row(tape.x_mid[l][p], tape.m[l][p], g_m[p], g_xmid[p]);

        // x_mid = x_in + Wo mixed
        Mat g_mixed = zeros(n, d);
        matvec_backward_rows(model.tensor(prefix + "wo"), tape.mixed[l], g_xmid, grads.find(prefix + "wo"), &g_mixed);

        Mat g_q = zeros(n, d), g_k = zeros(n, d), g_v = zeros(n, d);
        for (std::size_t p = 0; p < n; ++p) {
            for (int h = 0; h < n_heads; ++h) {
                const std::size_t hs = static_cast<std::size_t>(h * head_dim);
                const Mat& w = tape.att[l][static_cast<std::size_t>(h)];
                Vec g_w(p + 1, 0.0);
                for (std::size_t t = 0; t <= p; ++t) {
                    double acc = 0.0;
                    for (int j = 0; j < head_dim; ++j) {
                        acc += g_mixed[p][hs + j] * tape.v[l][t][hs + j];
                        g_v[t][hs + j] += w[p][t] * g_mixed[p][hs + j];
                    }
                    g_w[t] = acc;
                }
                double dot = 0.0;
                for (std::size_t t = 0; t <= p; ++t) dot += w[p][t] * g_w[t];
                for (std::size_t t = 0; t <= p; ++t) {
                    const double g_score = w[p][t] * (g_w[t] - dot) * att_scale;
                    for (int j = 0; j < head_dim; ++j) {
                        g_q[p][hs + j] += g_score * tape.k[l][t][hs + j];
                        g_k[t][hs + j] += g_score * tape.q[l][p][hs + j];
                    }
                }
            }
        }

        Mat g_a = zeros(n, d);
        matvec_backward_rows(model.tensor(prefix + "wq"), tape.a[l], g_q, grads.find(prefix + "wq"), &g_a);
        matvec_backward_rows(model.tensor(prefix + "wk"), tape.a[l], g_k, grads.find(prefix + "wk"), &g_a);
        matvec_backward_rows(model.tensor(prefix + "wv"), tape.a[l], g_v, grads.find(prefix + "wv"), &g_a);

        Mat g_xin = std::move(g_xmid); // residual branch
        for (std::size_t p = 0; p < n; ++p)
            rmsnorm_backward_row(tape.x_in[l][p], tape.a[l][p], g_a[p], g_xin[p]);
        g = std::move(g_xin);
    }

    Vec* g_wte = grads.find("wte");
    Vec* g_wpe = grads.find("wpe");
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < d; ++i) {
            if (g_wte) (*g_wte)[static_cast<std::size_t>(tape.tokens[p]) * d + i] += g[p][i];
            if (g_wpe) (*g_wpe)[p * d + i] += g[p][i];
        }
}

} // namespace

namespace detail {

std::vector<double>* RmuGradients::find(const std::string& name) {
    for (auto& [tensor, grad] : by_tensor)
        if (tensor == name) return &grad;
    return nullptr;
}

std::vector<std::string> trainable_tensor_names(const ModelConfig& config, int target_layer) {
    std::vector<std::string> names{"wte", "wpe"};
    for (int l = 0; l <= target_layer && l < config.n_layers; ++l)
        for (const char* part : {"wq", "wk", "wv", "wo", "w1", "w2"})
            names.push_back("layer" + std::to_string(l) + "_" + part);
    return names;
}

std::vector<std::vector<double>> tape_activations(const ToyModel& model, TokenSpan tokens, int target_layer) {
    return tape_forward(model, tokens, target_layer).x_out;
}

double rmu_pair_loss(const ToyModel& model, TokenSpan forget_seq, TokenSpan retain_seq,
                     const std::vector<std::vector<double>>& frozen_retain,
                     const std::vector<double>& target, double retain_weight, int target_layer,
                     RmuGradients* grads, double* forget_term, double* retain_term) {
    const std::size_t d = static_cast<std::size_t>(model.config().d_model);

    const Tape tape_f = tape_forward(model, forget_seq, target_layer);
    double loss_f = 0.0;
    Mat g_f = zeros(forget_seq.size(), d);
    for (std::size_t p = 0; p < forget_seq.size(); ++p)
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = tape_f.x_out[p][i] - target[i];
            loss_f += diff * diff;
            g_f[p][i] = 2.0 * diff / static_cast<double>(forget_seq.size());
        }
    loss_f /= static_cast<double>(forget_seq.size());

    const Tape tape_r = tape_forward(model, retain_seq, target_layer);
    double loss_r = 0.0;
    Mat g_r = zeros(retain_seq.size(), d);
    for (std::size_t p = 0; p < retain_seq.size(); ++p)
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = tape_r.x_out[p][i] - frozen_retain[p][i];
            loss_r += diff * diff;
            g_r[p][i] = 2.0 * retain_weight * diff / static_cast<double>(retain_seq.size());
        }
    loss_r /= static_cast<double>(retain_seq.size());

    if (grads) {
        tape_backward(model, tape_f, std::move(g_f), *grads);
        tape_backward(model, tape_r, std::move(g_r), *grads);
    }
    if (forget_term) *forget_term = loss_f;
    if (retain_term) *retain_term = loss_r;
    return loss_f + retain_weight * loss_r;
}

} // namespace detail

std::vector<double> rmu_random_unit_direction(std::int64_t seed, int d_model) {
    Rng rng = stream_rng(static_cast<std::uint64_t>(seed), "rmu_direction");
    std::vector<double> u(static_cast<std::size_t>(d_model));
    double norm = 0.0;
    for (double& v : u) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : u) v /= norm;
    return u;
}

RmuTrainResult rmu_train(const ToyModel& model, const Corpus& forget_corpus, const Corpus& retain_corpus,
                         const RMUConfig& config) {
    if (config.target_layer < 0 || config.target_layer >= model.config().n_layers)
        throw std::out_of_range("target_layer outside model depth");
    if (config.steering_scale <= 0.0) throw std::invalid_argument("steering_scale must be positive");
    if (config.retain_weight < 0.0) throw std::invalid_argument("retain_weight must be non-negative");
    if (config.steps < 0) throw std::invalid_argument("steps must be non-negative");
    const auto non_empty = [](const Corpus& c) {
        return std::any_of(c.begin(), c.end(), [](const auto& seq) { return !seq.empty(); });
    };
    if (!non_empty(forget_corpus) || !non_empty(retain_corpus))
        throw std::invalid_argument("forget and retain corpora must be non-empty");

    Corpus forget, retain;
    for (const auto& seq : forget_corpus)
        if (!seq.empty()) forget.push_back(seq);
    for (const auto& seq : retain_corpus)
        if (!seq.empty()) retain.push_back(seq);

    RmuTrainResult result;
    result.model = std::make_unique<ToyModel>(model);
    if (config.steps == 0) return result;

    const int d = model.config().d_model;
    const std::vector<double> u = rmu_random_unit_direction(config.seed, d);
    std::vector<double> target(u);
    for (double& v : target) v *= config.steering_scale;

    // frozen activations per retain sequence, computed once
    std::vector<std::vector<std::vector<double>>> frozen(retain.size());
    for (std::size_t i = 0; i < retain.size(); ++i)
        frozen[i] = detail::tape_activations(model, retain[i], config.target_layer);

    const auto names = detail::trainable_tensor_names(model.config(), config.target_layer);
    for (int step = 0; step < config.steps; ++step) {
        const std::size_t fi = static_cast<std::size_t>(step) % forget.size();
        const std::size_t ri = static_cast<std::size_t>(step) % retain.size();

        detail::RmuGradients grads;
        for (const auto& name : names)
            grads.by_tensor.emplace_back(name, std::vector<double>(result.model->tensor(name).size(), 0.0));

        RmuTraceStep trace;
        trace.total = detail::rmu_pair_loss(*result.model, forget[fi], retain[ri], frozen[ri], target,
                                            config.retain_weight, config.target_layer, &grads,
                                            &trace.forget_term, &trace.retain_term);
        result.trace.push_back(trace);

        for (auto& [name, grad] : grads.by_tensor) {
            Matrix& tensor = result.model->tensor(name);
            for (std::size_t i = 0; i < grad.size(); ++i)
                tensor.data()[i] = static_cast<float>(static_cast<double>(tensor.data()[i]) -
                                                      config.learning_rate * grad[i]);
        }
    }
    return result;
}

RmuProbe rmu_probe(const Model& model, const Model& frozen, const Corpus& corpus, int layer, double s,
                   const std::vector<double>& u) {
    if (layer < 0 || layer >= model.n_layers()) throw std::out_of_range("probe layer outside model depth");
    RmuProbe probe;
    long long positions = 0;
    for (const auto& tokens : corpus) {
        if (tokens.empty()) continue;
        const ActivationBatch acts = capture_activations(model, tokens, layer);
        const ActivationBatch base = capture_activations(frozen, tokens, layer);
        for (int p = 0; p < acts.values.rows(); ++p) {
            double dist = 0.0, drift = 0.0;
            for (int i = 0; i < acts.values.cols(); ++i) {
                const double to_target = static_cast<double>(acts.values(p, i)) - s * u[static_cast<std::size_t>(i)];
                const double to_frozen = static_cast<double>(acts.values(p, i)) - static_cast<double>(base.values(p, i));
                dist += to_target * to_target;
                drift += to_frozen * to_frozen;
            }
            probe.forget_distance += std::sqrt(dist);
            probe.retain_drift += std::sqrt(drift);
            ++positions;
        }
    }
    if (positions == 0) throw std::invalid_argument("probe corpus has no token positions");
    probe.forget_distance /= static_cast<double>(positions);
    probe.retain_drift /= static_cast<double>(positions);
    return probe;
}

void write_loss_trace_csv(const std::vector<RmuTraceStep>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw format_error("cannot write loss trace: " + path);
    out << "step,total,forget_term,retain_term\n";
    for (std::size_t i = 0; i < trace.size(); ++i)
        out << i << "," << trace[i].total << "," << trace[i].forget_term << "," << trace[i].retain_term << "\n";
}

} // namespace saesteer
