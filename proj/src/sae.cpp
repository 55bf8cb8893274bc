#include "saesteer/sae.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "saesteer/errors.hpp"
#include "saesteer/rng.hpp"
#include "saesteer/tensor_io.hpp"

namespace saesteer {

void validate_sae(const SparseAutoencoder& sae) {
    const int d_model = sae.w_enc.cols();
    const int d_sae = sae.w_enc.rows();
    if (d_model <= 0 || d_sae <= 0) throw config_error("sae W_enc has empty shape");
    if (d_sae < d_model)
        throw config_error("sae must be overcomplete: d_sae " + std::to_string(d_sae) + " < d_model " +
                           std::to_string(d_model));
    if (sae.w_dec.rows() != d_model || sae.w_dec.cols() != d_sae)
        throw shape_error("sae W_dec: expected " + std::to_string(d_model) + "x" + std::to_string(d_sae) +
                          ", got " + sae.w_dec.shape_str());
    if (static_cast<int>(sae.b_enc.size()) != d_sae)
        throw shape_error("sae b_enc: expected length " + std::to_string(d_sae));
    if (static_cast<int>(sae.b_dec.size()) != d_model)
        throw shape_error("sae b_dec: expected length " + std::to_string(d_model));
    if (!sae.jump_threshold.empty() && static_cast<int>(sae.jump_threshold.size()) != d_sae)
        throw shape_error("sae jump_threshold: expected length " + std::to_string(d_sae));
    for (int j = 0; j < d_sae; ++j) {
        bool nonzero = false;
        for (int i = 0; i < d_model && !nonzero; ++i) nonzero = sae.w_dec(i, j) != 0.0f;
        if (!nonzero) throw config_error("sae W_dec column " + std::to_string(j) + " is all zero");
    }
}

LatentBatch encode(const SparseAutoencoder& sae, const ActivationBatch& acts) {
    require_cols(acts.values, sae.d_model(), "encode input");
    const int n = acts.values.rows();
    const int d_sae = sae.d_sae();
    const int d_model = sae.d_model();

    LatentBatch out;
    out.values = Matrix(n, d_sae);
    std::vector<float> x(static_cast<std::size_t>(d_model));
    for (int p = 0; p < n; ++p) {
        const auto row = acts.values.row(p);
        for (int i = 0; i < d_model; ++i)
            x[static_cast<std::size_t>(i)] =
                sae.subtract_b_dec_on_encode ? row[static_cast<std::size_t>(i)] - sae.b_dec[static_cast<std::size_t>(i)]
                                             : row[static_cast<std::size_t>(i)];
        for (int j = 0; j < d_sae; ++j) {
            float pre = sae.b_enc[static_cast<std::size_t>(j)];
            const float* w = sae.w_enc.data() + static_cast<std::size_t>(j) * d_model;
            for (int i = 0; i < d_model; ++i) pre += w[i] * x[static_cast<std::size_t>(i)];
            const float threshold = sae.jump_threshold.empty() ? 0.0f : sae.jump_threshold[static_cast<std::size_t>(j)];
            out.values(p, j) = pre > threshold ? pre : 0.0f;
        }
    }
    return out;
}

ActivationBatch decode(const SparseAutoencoder& sae, const LatentBatch& latents) {
    require_cols(latents.values, sae.d_sae(), "decode input");
    const int n = latents.values.rows();
    const int d_model = sae.d_model();
    const int d_sae = sae.d_sae();

    ActivationBatch out;
    out.layer = sae.layer;
    out.values = Matrix(n, d_model);
    for (int p = 0; p < n; ++p) {
        const auto f = latents.values.row(p);
        for (int i = 0; i < d_model; ++i) {
            float acc = sae.b_dec[static_cast<std::size_t>(i)];
            const float* w = sae.w_dec.data() + static_cast<std::size_t>(i) * d_sae;
            for (int j = 0; j < d_sae; ++j) acc += w[j] * f[static_cast<std::size_t>(j)];
            out.values(p, i) = acc;
        }
    }
    return out;
}

void save_sae(const SparseAutoencoder& sae, const std::filesystem::path& dir) {
    validate_sae(sae);
    std::filesystem::create_directories(dir);
    const int d_model = sae.d_model();
    const int d_sae = sae.d_sae();

    nlohmann::json sidecar;
    sidecar["release"] = sae.release;
    sidecar["sae_id"] = sae.sae_id;
    sidecar["layer"] = sae.layer;
    sidecar["d_model"] = d_model;
    sidecar["d_sae"] = d_sae;
    sidecar["activation"] = sae.jump_threshold.empty() ? "relu" : "jumprelu";
    sidecar["subtract_b_dec_on_encode"] = sae.subtract_b_dec_on_encode;
    sidecar["shapes"] = {{"W_enc", {d_sae, d_model}},
                         {"b_enc", {1, d_sae}},
                         {"W_dec", {d_model, d_sae}},
                         {"b_dec", {1, d_model}}};

    write_tensor(dir / "W_enc.f32", sae.w_enc);
    write_tensor(dir / "W_dec.f32", sae.w_dec);
    Matrix b_enc(1, d_sae), b_dec(1, d_model);
    for (int j = 0; j < d_sae; ++j) b_enc(0, j) = sae.b_enc[static_cast<std::size_t>(j)];
    for (int i = 0; i < d_model; ++i) b_dec(0, i) = sae.b_dec[static_cast<std::size_t>(i)];
    write_tensor(dir / "b_enc.f32", b_enc);
    write_tensor(dir / "b_dec.f32", b_dec);
    if (!sae.jump_threshold.empty()) {
        sidecar["shapes"]["threshold"] = {1, d_sae};
        Matrix th(1, d_sae);
        for (int j = 0; j < d_sae; ++j) th(0, j) = sae.jump_threshold[static_cast<std::size_t>(j)];
        write_tensor(dir / "threshold.f32", th);
    }

    std::ofstream out(dir / "sae.json");
    if (!out) throw load_error("cannot write sidecar: " + (dir / "sae.json").string());
    out << sidecar.dump(2) << "\n";
}

SparseAutoencoder load_sae(const std::filesystem::path& dir) {
    std::ifstream in(dir / "sae.json");
    if (!in) throw load_error("missing sidecar: " + (dir / "sae.json").string());
    nlohmann::json sidecar;
    try {
        in >> sidecar;
    } catch (const nlohmann::json::exception& e) {
        throw load_error("unreadable sae sidecar: " + std::string(e.what()));
    }

    SparseAutoencoder sae;
    int d_model = 0, d_sae = 0;
    const auto get = [&](const char* key) -> const nlohmann::json& {
        if (!sidecar.contains(key)) throw load_error(std::string("sae sidecar missing field: ") + key);
        return sidecar.at(key);
    };
    try {
        sae.release = get("release").get<std::string>();
        sae.sae_id = get("sae_id").get<std::string>();
        sae.layer = get("layer").get<int>();
        d_model = get("d_model").get<int>();
        d_sae = get("d_sae").get<int>();
        if (sidecar.contains("subtract_b_dec_on_encode"))
            sae.subtract_b_dec_on_encode = sidecar.at("subtract_b_dec_on_encode").get<bool>();
    } catch (const load_error&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw load_error("sae sidecar field has wrong type: " + std::string(e.what()));
    }

    const auto& shapes = get("shapes");
    const auto shape_of = [&](const char* block, int want_rows, int want_cols) {
        if (!shapes.contains(block)) throw load_error(std::string("sae sidecar missing shape for ") + block);
        const auto s = shapes.at(block);
        if (s.size() != 2 || s[0].get<int>() != want_rows || s[1].get<int>() != want_cols)
            throw load_error(std::string("sae block ") + block + " has shape [" + s.dump() + "], expected [" +
                             std::to_string(want_rows) + "," + std::to_string(want_cols) + "]");
    };
    shape_of("W_enc", d_sae, d_model);
    shape_of("W_dec", d_model, d_sae);
    shape_of("b_enc", 1, d_sae);
    shape_of("b_dec", 1, d_model);

    sae.w_enc = read_tensor(dir / "W_enc.f32", d_sae, d_model, "W_enc");
    sae.w_dec = read_tensor(dir / "W_dec.f32", d_model, d_sae, "W_dec");
    const Matrix b_enc = read_tensor(dir / "b_enc.f32", 1, d_sae, "b_enc");
    const Matrix b_dec = read_tensor(dir / "b_dec.f32", 1, d_model, "b_dec");
    sae.b_enc.assign(b_enc.data(), b_enc.data() + d_sae);
    sae.b_dec.assign(b_dec.data(), b_dec.data() + d_model);
    if (sidecar.at("activation").get<std::string>() == "jumprelu") {
        shape_of("threshold", 1, d_sae);
        const Matrix th = read_tensor(dir / "threshold.f32", 1, d_sae, "threshold");
        sae.jump_threshold.assign(th.data(), th.data() + d_sae);
    }

    validate_sae(sae);
    return sae;
}

SparseAutoencoder make_toy_sae(std::int64_t seed, int d_model, int d_sae,
                               const std::vector<std::pair<int, std::vector<float>>>& planted,
                               int layer, float noise_scale) {
    if (d_model <= 0 || d_sae < d_model) throw std::invalid_argument("toy sae needs 0 < d_model <= d_sae");
    std::set<int> seen;
    for (const auto& [idx, dir] : planted) {
        if (idx < 0 || idx >= d_sae) throw std::invalid_argument("planted index " + std::to_string(idx) + " out of range");
        if (!seen.insert(idx).second) throw std::invalid_argument("duplicate planted index " + std::to_string(idx));
        if (static_cast<int>(dir.size()) != d_model)
            throw std::invalid_argument("planted direction for latent " + std::to_string(idx) + " has wrong width");
    }

    SparseAutoencoder sae;
    sae.release = "toy";
    sae.sae_id = "toy_seed" + std::to_string(seed);
    sae.layer = layer;
    sae.w_enc = Matrix(d_sae, d_model);
    sae.w_dec = Matrix(d_model, d_sae);
    sae.b_enc.assign(static_cast<std::size_t>(d_sae), 0.0f);
    sae.b_dec.assign(static_cast<std::size_t>(d_model), 0.0f);

    Rng rng = stream_rng(static_cast<std::uint64_t>(seed), "toy_sae");
    for (int j = 0; j < d_sae; ++j)
        for (int i = 0; i < d_model; ++i) {
            const float v = static_cast<float>(rng.normal()) * noise_scale / std::sqrt(static_cast<float>(d_model));
            sae.w_enc(j, i) = v;
        }
    for (int i = 0; i < d_model; ++i)
        for (int j = 0; j < d_sae; ++j)
            sae.w_dec(i, j) = static_cast<float>(rng.normal()) * noise_scale / std::sqrt(static_cast<float>(d_model));

    for (const auto& [idx, dir] : planted) {
        double norm = 0.0;
        for (float v : dir) norm += static_cast<double>(v) * v;
        norm = std::sqrt(norm);
        if (norm == 0.0) throw std::invalid_argument("planted direction for latent " + std::to_string(idx) + " is zero");
        for (int i = 0; i < d_model; ++i) {
            const float unit = static_cast<float>(dir[static_cast<std::size_t>(i)] / norm);
            sae.w_enc(idx, i) = unit;
            sae.w_dec(i, idx) = unit;
        }
    }

    validate_sae(sae);
    return sae;
}

} // namespace saesteer
