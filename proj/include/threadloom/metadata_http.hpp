#pragma once

// Live backend for a Semantic Scholar style graph API. Refuses to run when
// THREADLOOM_OFFLINE is set, so test runs cannot reach the network.

#include <cstdlib>
#include <string>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "threadloom/errors.hpp"
#include "threadloom/metadata_client.hpp"

namespace threadloom {

struct HttpBackendConfig {
    std::string base_url = "https://api.semanticscholar.org";
    std::string api_key_env = "THREADLOOM_S2_API_KEY";
    int timeout_seconds = 20;
    std::size_t page_size = 1000;
    std::size_t max_citation_pages = 10;  // citing papers are sorted client-side, so fetch beyond `limit`
};

inline bool network_disabled() {
    const char* v = std::getenv("THREADLOOM_OFFLINE");
    return v && *v && std::string(v) != "0";
}

class HttpBackend final : public MetadataBackend {
public:
    explicit HttpBackend(HttpBackendConfig config = {}) : config_(std::move(config)) {}

    BackendResponse fetch(const LookupQuery& q) override {
        if (network_disabled()) throw NetworkError("network access disabled by THREADLOOM_OFFLINE");
        const std::string key = normalized_key(q);
        const std::string record_fields = "paperId,title,year,url,tldr,embedding";
        switch (q.kind) {
            case QueryKind::ByTitle:
                return get("/graph/v1/paper/search?query=" + httplib::detail::encode_query_param(key) +
                           "&limit=" + std::to_string(q.limit) + "&fields=" + record_fields);
            case QueryKind::ById:
                return get("/graph/v1/paper/" + httplib::detail::encode_query_param(key) + "?fields=" + record_fields);
            case QueryKind::CitationsOf: return citations(key);
        }
        throw InvalidArgument("unknown query kind");
    }

    std::string name() const override { return "http"; }

private:
    BackendResponse citations(const std::string& id) {
        nlohmann::json all = nlohmann::json::array();
        for (std::size_t page = 0; page < config_.max_citation_pages; ++page) {
            const std::size_t offset = page * config_.page_size;
            BackendResponse r = get("/graph/v1/paper/" + httplib::detail::encode_query_param(id) +
                                    "/citations?fields=contexts,intents,paperId,title,year,url&limit=" +
                                    std::to_string(config_.page_size) + "&offset=" + std::to_string(offset));
            if (r.status == 404) return r;
            nlohmann::json j = nlohmann::json::parse(r.body, nullptr, false);
            if (j.is_discarded() || !j.contains("data") || !j["data"].is_array())
                throw NetworkError("malformed citations response");
            for (auto& row : j["data"]) all.push_back(std::move(row));
            if (!j.contains("next") || j["data"].size() < config_.page_size) break;
        }
        return {200, nlohmann::json{{"data", all}}.dump()};
    }

    BackendResponse get(const std::string& path) {
        httplib::Client cli(config_.base_url);
        cli.set_connection_timeout(config_.timeout_seconds);
        cli.set_read_timeout(config_.timeout_seconds);
        httplib::Headers headers;
        if (const char* k = std::getenv(config_.api_key_env.c_str()); k && *k) headers.emplace("x-api-key", k);
        auto res = cli.Get(path, headers);
        if (!res) throw NetworkError("request failed: " + httplib::to_string(res.error()));
        if (res->status == 429) throw RateLimited("metadata service rate limit");
        if (res->status == 404) return {404, ""};
        if (res->status != 200) throw NetworkError("metadata service status " + std::to_string(res->status));
        return {200, res->body};
    }

    HttpBackendConfig config_;
};

}  // namespace threadloom
