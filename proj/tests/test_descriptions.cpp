#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "saesteer/descriptions.hpp"
#include "saesteer/errors.hpp"

using namespace saesteer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_fixture(const fs::path& dir, const std::string& release, const std::string& sae_id, int idx,
                   const std::string& description) {
    auto sanitize = [](std::string s) {
        for (char& c : s)
            if (c == '/' || c == '\\' || c == ':') c = '_';
        return s;
    };
    nlohmann::json j;
    j["description"] = description;
    std::ofstream out(dir / (sanitize(release) + "__" + sanitize(sae_id) + "__" + std::to_string(idx) + ".json"));
    out << j.dump();
}

} // namespace

TEST_SUITE("descriptions") {

TEST_CASE("offline fixtures resolve and populate the cache") {
    TempDir tmp("saesteer_desc_fixture");
    write_fixture(tmp.path, "gemma-scope-2b-pt-res-canonical", "layer_7/width_16k/canonical", 11766,
                  "mentions of the coronavirus pandemic and related medical terms");

    DescriptionClientConfig config;
    config.fixture_dir = tmp.path.string();
    config.cache_path = (tmp.path / "cache.json").string();
    config.offline = true;

    {
        DescriptionClient client(config);
        const auto out = client.fetch("gemma-scope-2b-pt-res-canonical", "layer_7/width_16k/canonical", {11766});
        REQUIRE(out.size() == 1);
        CHECK(out[0].description == "mentions of the coronavirus pandemic and related medical terms");
        CHECK(out[0].source == "fixture");
        CHECK(out[0].latent_idx == 11766);
        CHECK(client.network_requests() == 0);
    }

    SUBCASE("cache hits survive fixture removal and never touch the network") {
        fs::remove(tmp.path / "gemma-scope-2b-pt-res-canonical__layer_7_width_16k_canonical__11766.json");
        DescriptionClient client(config);
        const auto out = client.fetch("gemma-scope-2b-pt-res-canonical", "layer_7/width_16k/canonical", {11766});
        REQUIRE(out.size() == 1);
        CHECK(out[0].description == "mentions of the coronavirus pandemic and related medical terms");
        CHECK(client.network_requests() == 0);
    }
}

TEST_CASE("cold cache offline misses list the indices") {
    TempDir tmp("saesteer_desc_cold");
    DescriptionClientConfig config;
    config.offline = true;
    config.cache_path = (tmp.path / "cache.json").string();
    DescriptionClient client(config);
    try {
        client.fetch("rel", "id", {4788, 9186});
        FAIL("expected fetch_error");
    } catch (const fetch_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("4788") != std::string::npos);
        CHECK(msg.find("9186") != std::string::npos);
    }
}

TEST_CASE("http endpoint fetching with caching") {
    TempDir tmp("saesteer_desc_http");

    httplib::Server server;
    std::atomic<int> hits{0};
    server.Get(R"(/api/feature/(.+)/(\d+))", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        const std::string idx = req.matches[2];
        if (idx == "500") {
            res.status = 404;
            return;
        }
        nlohmann::json j;
        if (idx == "13381") {
            // Neuronpedia-style payload shape
            j["explanations"] = {{{"description", "terms related to cybersecurity threats and vulnerabilities"}}};
        } else if (idx == "666") {
            res.set_content("this is not json", "text/plain");
            return;
        } else {
            j["description"] = "latent " + idx;
        }
        res.set_content(j.dump(), "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    DescriptionClientConfig config;
    config.cache_path = (tmp.path / "cache.json").string();
    config.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/api/feature/{release}/{sae_id}/{latent_idx}";

    {
        DescriptionClient client(config);
        const auto out = client.fetch("rel", "7", {42, 13381});
        REQUIRE(out.size() == 2);
        CHECK(out[0].description == "latent 42");
        CHECK(out[1].description == "terms related to cybersecurity threats and vulnerabilities");
        CHECK(client.network_requests() == 2);

        // cached now: no further requests
        const auto again = client.fetch("rel", "7", {42});
        CHECK(again[0].description == "latent 42");
        CHECK(client.network_requests() == 2);
    }

    SUBCASE("a fresh client reads the persisted cache") {
        const int before = hits.load();
        DescriptionClient client(config);
        const auto out = client.fetch("rel", "7", {42, 13381});
        CHECK(out.size() == 2);
        CHECK(client.network_requests() == 0);
        CHECK(hits.load() == before);
    }

    SUBCASE("404 responses surface as fetch errors naming the index") {
        DescriptionClient client(config);
        try {
            client.fetch("rel", "7", {500});
            FAIL("expected fetch_error");
        } catch (const fetch_error& e) {
            CHECK(std::string(e.what()).find("500") != std::string::npos);
        }
    }

    SUBCASE("malformed payloads surface as decode errors") {
        DescriptionClient client(config);
        CHECK_THROWS_AS(client.fetch("rel", "7", {666}), decode_error);
    }

    SUBCASE("offline flag suppresses the network even with an endpoint") {
        DescriptionClientConfig off = config;
        off.cache_path.clear();
        off.offline = true;
        DescriptionClient client(off);
        CHECK_THROWS_AS(client.fetch("rel", "7", {42}), fetch_error);
        CHECK(client.network_requests() == 0);
    }

    server.stop();
    server_thread.join();
}

} // TEST_SUITE
