#include "saesteer/descriptions.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "saesteer/errors.hpp"

namespace saesteer {

namespace {

std::string cache_key(const std::string& release, const std::string& sae_id, int idx) {
    return release + "|" + sae_id + "|" + std::to_string(idx);
}

std::string sanitize(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (c == '/' || c == '\\' || c == ':') c = '_';
    return out;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string substitute(std::string tmpl, const std::string& key, const std::string& value) {
    const std::string needle = "{" + key + "}";
    for (auto pos = tmpl.find(needle); pos != std::string::npos; pos = tmpl.find(needle))
        tmpl.replace(pos, needle.size(), value);
    return tmpl;
}

// Splits "http://host:port/path" into (scheme://host:port, /path).
std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw fetch_error("endpoint is not a URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

// Accepts {"description": "..."} or the Neuronpedia shape
// {"explanations": [{"description": "..."}]}.
std::string description_from_payload(const std::string& body, int idx) {
    nlohmann::json payload;
    try {
        payload = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw decode_error("latent " + std::to_string(idx) + ": payload is not JSON: " + e.what());
    }
    if (payload.contains("description") && payload.at("description").is_string())
        return payload.at("description").get<std::string>();
    if (payload.contains("explanations") && payload.at("explanations").is_array() &&
        !payload.at("explanations").empty()) {
        const auto& first = payload.at("explanations").at(0);
        if (first.contains("description") && first.at("description").is_string())
            return first.at("description").get<std::string>();
    }
    throw decode_error("latent " + std::to_string(idx) + ": payload has no description field");
}

} // namespace

DescriptionClient::DescriptionClient(DescriptionClientConfig config) : config_(std::move(config)) {
    load_cache();
}

void DescriptionClient::load_cache() {
    if (config_.cache_path.empty()) return;
    std::ifstream in(config_.cache_path);
    if (!in) return; // cold cache is not an error
    nlohmann::json j;
    try {
        in >> j;
        for (const auto& [key, value] : j.items()) {
            LatentDescription d;
            d.latent_idx = value.at("latent_idx").get<int>();
            d.description = value.at("description").get<std::string>();
            d.source = value.at("source").get<std::string>();
            d.fetched_at = value.at("fetched_at").get<std::string>();
            cache_[key] = std::move(d);
        }
    } catch (const nlohmann::json::exception& e) {
        throw decode_error("corrupt description cache " + config_.cache_path + ": " + e.what());
    }
}

void DescriptionClient::save_cache() {
    if (config_.cache_path.empty() || !cache_dirty_) return;
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, d] : cache_)
        j[key] = {{"latent_idx", d.latent_idx},
                  {"description", d.description},
                  {"source", d.source},
                  {"fetched_at", d.fetched_at}};
    const std::filesystem::path path(config_.cache_path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(config_.cache_path);
    if (!out) throw fetch_error("cannot write description cache: " + config_.cache_path);
    out << j.dump(2) << "\n";
    cache_dirty_ = false;
}

std::vector<LatentDescription> DescriptionClient::fetch(const std::string& release, const std::string& sae_id,
                                                        const std::vector<int>& indices) {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<LatentDescription> out;
    std::vector<int> missing;

    for (int idx : indices) {
        const std::string key = cache_key(release, sae_id, idx);
        const auto hit = cache_.find(key);
        if (hit != cache_.end()) {
            out.push_back(hit->second);
            continue;
        }

        // offline fixtures
        if (!config_.fixture_dir.empty()) {
            const auto path = std::filesystem::path(config_.fixture_dir) /
                              (sanitize(release) + "__" + sanitize(sae_id) + "__" + std::to_string(idx) + ".json");
            std::ifstream in(path);
            if (in) {
                std::ostringstream buf;
                buf << in.rdbuf();
                LatentDescription d;
                d.latent_idx = idx;
                d.description = description_from_payload(buf.str(), idx);
                d.source = "fixture";
                d.fetched_at = utc_now();
                cache_[key] = d;
                cache_dirty_ = true;
                out.push_back(std::move(d));
                continue;
            }
        }

        // network
        if (!config_.offline && !config_.endpoint.empty()) {
            std::string url = substitute(config_.endpoint, "release", release);
            url = substitute(url, "sae_id", sae_id);
            url = substitute(url, "latent_idx", std::to_string(idx));
            const auto [base, path] = split_url(url);
            httplib::Client client(base);
            client.set_connection_timeout(5, 0);
            client.set_read_timeout(10, 0);
            ++network_requests_;
            const auto res = client.Get(path);
            if (res && res->status == 200) {
                LatentDescription d;
                d.latent_idx = idx;
                d.description = description_from_payload(res->body, idx);
                d.source = base;
                d.fetched_at = utc_now();
                cache_[key] = d;
                cache_dirty_ = true;
                out.push_back(std::move(d));
                continue;
            }
        }

        missing.push_back(idx);
    }

    save_cache();

    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size(); ++i) {
            if (i) list += ", ";
            list += std::to_string(missing[i]);
        }
        throw fetch_error("no description available for latent indices: " + list);
    }
    return out;
}

} // namespace saesteer
