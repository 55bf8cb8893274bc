#pragma once

#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace saesteer {

struct LatentDescription {
    int latent_idx = 0;
    std::string description;
    std::string source;     // "cache", "fixture" or the remote host
    std::string fetched_at; // ISO-8601 UTC
};

struct DescriptionClientConfig {
    // JSON cache file, keyed by release|sae_id|latent_idx. Empty disables
    // on-disk caching (an in-memory cache still applies).
    std::string cache_path;
    // Directory of offline fixtures, one JSON file per latent named
    // <release>__<sae_id>__<idx>.json with '/' in names replaced by '_'.
    std::string fixture_dir;
    // Endpoint template with {release}, {sae_id} and {latent_idx}
    // placeholders, e.g. "http://host:port/api/feature/{release}/{sae_id}/{latent_idx}".
    std::string endpoint;
    // Never touch the network, even with an endpoint configured.
    bool offline = false;
};

// Latent label lookup in the order cache -> fixtures -> HTTP endpoint.
// Successful lookups are written back to the cache (single writer, guarded).
// Misses that exhaust every source raise fetch_error listing the missing
// indices; malformed remote payloads raise decode_error.
class DescriptionClient {
public:
    explicit DescriptionClient(DescriptionClientConfig config);

    std::vector<LatentDescription> fetch(const std::string& release, const std::string& sae_id,
                                         const std::vector<int>& indices);

    // Number of HTTP requests issued so far; cache hits do not count.
    int network_requests() const { return network_requests_; }

private:
    DescriptionClientConfig config_;
    std::map<std::string, LatentDescription> cache_;
    std::mutex mutex_;
    int network_requests_ = 0;
    bool cache_dirty_ = false;

    void load_cache();
    void save_cache();
};

} // namespace saesteer
