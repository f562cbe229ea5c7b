#pragma once

// Paper lookup by title or id and citing-paper retrieval against a pluggable
// backend, with a fingerprint-keyed cache, a sliding-window rate limiter and
// an offline fixture mode.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "threadloom/clock.hpp"
#include "threadloom/detail/text.hpp"
#include "threadloom/errors.hpp"
#include "threadloom/highlight_linker.hpp"
#include "threadloom/paper_record.hpp"

namespace threadloom {

inline constexpr std::size_t kMaxCitations = 1000;
inline constexpr double kTitleMatchThreshold = 0.9;
inline constexpr std::int64_t kDefaultCacheTtlMs = 7LL * 24 * 60 * 60 * 1000;

enum class QueryKind { ByTitle, ById, CitationsOf };

inline const char* to_string(QueryKind k) {
    switch (k) {
        case QueryKind::ByTitle: return "BY_TITLE";
        case QueryKind::ById: return "BY_ID";
        case QueryKind::CitationsOf: return "CITATIONS_OF";
    }
    return "?";
}

inline QueryKind query_kind_from_string(const std::string& s) {
    if (s == "BY_TITLE") return QueryKind::ByTitle;
    if (s == "BY_ID") return QueryKind::ById;
    if (s == "CITATIONS_OF") return QueryKind::CitationsOf;
    throw SchemaError("unknown query kind: " + s);
}

struct LookupQuery {
    QueryKind kind = QueryKind::ById;
    std::string key;
    std::size_t limit = 1;

    friend bool operator==(const LookupQuery&, const LookupQuery&) = default;
};

inline void validate(const LookupQuery& q) {
    if (detail::trim(q.key).empty()) throw InvalidArgument("lookup key is empty");
    if (q.limit == 0) throw InvalidArgument("lookup limit must be positive");
    if (q.kind == QueryKind::CitationsOf && q.limit > kMaxCitations)
        throw InvalidArgument("citation limit above " + std::to_string(kMaxCitations));
}

inline std::string normalized_key(const LookupQuery& q) {
    return q.kind == QueryKind::ByTitle ? detail::normalize_title(q.key) : detail::trim(q.key);
}

// Stable across runs and platforms: sha256 of "v1|KIND|normalized key|limit".
inline std::string fingerprint(const LookupQuery& q) {
    return detail::sha256_hex(std::string("v1|") + to_string(q.kind) + "|" + normalized_key(q) + "|" +
                              std::to_string(q.limit));
}

inline nlohmann::json to_json(const LookupQuery& q) {
    return {{"kind", to_string(q.kind)}, {"key", normalized_key(q)}, {"limit", q.limit}};
}

// Token-set ratio in [0, 1] over folded alphanumeric tokens: the best
// indel similarity among the sorted intersection and the intersection
// extended by either side's remaining tokens.
namespace detail {

inline std::size_t lcs_length(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double indel_ratio(std::string_view a, std::string_view b) {
    if (a.empty() && b.empty()) return 1.0;
    return 2.0 * static_cast<double>(lcs_length(a, b)) / static_cast<double>(a.size() + b.size());
}

}  // namespace detail

inline double token_set_ratio(std::string_view a, std::string_view b) {
    const auto ta = detail::tokenize(a), tb = detail::tokenize(b);
    const std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
    if (sa.empty() || sb.empty()) return 0.0;
    std::vector<std::string> common, only_a, only_b;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
    std::set_difference(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(only_a));
    std::set_difference(sb.begin(), sb.end(), sa.begin(), sa.end(), std::back_inserter(only_b));
    if (!common.empty() && (only_a.empty() || only_b.empty())) return 1.0;
    const std::string t0 = detail::join(common, " ");
    const std::string da = detail::join(only_a, " "), db = detail::join(only_b, " ");
    const std::string t1 = t0.empty() ? da : t0 + " " + da;
    const std::string t2 = t0.empty() ? db : t0 + " " + db;
    double best = detail::indel_ratio(t1, t2);
    if (!t0.empty()) best = std::max({best, detail::indel_ratio(t0, t1), detail::indel_ratio(t0, t2)});
    return best;
}

// ---------------------------------------------------------------------------
// Backends

// Raw service response. Payload shapes:
//   BY_TITLE      {"data": [record, ...]}
//   BY_ID         record
//   CITATIONS_OF  {"data": [{"citingPaper": record, "contexts": [...], "intents": [...]}, ...]}
// A 404 status means the service has no such paper.
struct BackendResponse {
    int status = 200;
    std::string body;

    friend bool operator==(const BackendResponse&, const BackendResponse&) = default;
};

class MetadataBackend {
public:
    virtual ~MetadataBackend() = default;
    virtual BackendResponse fetch(const LookupQuery& q) = 0;
    virtual std::string name() const = 0;
};

namespace detail {

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    const auto tmp = path.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw StorageError("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw StorageError("cannot rename " + tmp + ": " + ec.message());
}

inline std::optional<std::string> read_file_if_exists(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

// Serves every query from <dir>/<fingerprint>.json; a missing file is a
// FixtureMiss, never a network call.
class FixtureBackend final : public MetadataBackend {
public:
    explicit FixtureBackend(std::filesystem::path dir) : dir_(std::move(dir)) {}

    BackendResponse fetch(const LookupQuery& q) override {
        const std::string fp = fingerprint(q);
        const auto path = dir_ / (fp + ".json");
        auto bytes = detail::read_file_if_exists(path);
        if (!bytes)
            throw FixtureMiss("no fixture for " + std::string(to_string(q.kind)) + " \"" + normalized_key(q) +
                              "\" limit " + std::to_string(q.limit) + " (" + fp + ")");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(*bytes);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("fixture " + path.string() + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("status") || !j.contains("body"))
            throw SchemaError("fixture " + path.string() + ": expected {query, status, body}");
        return {j["status"].get<int>(), j["body"].is_null() ? std::string() : j["body"].dump()};
    }

    std::string name() const override { return "fixture"; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

inline std::string fixture_file_contents(const LookupQuery& q, const BackendResponse& r) {
    nlohmann::ordered_json j;
    j["query"] = to_json(q);
    j["status"] = r.status;
    j["body"] = r.body.empty() ? nlohmann::json() : nlohmann::json::parse(r.body);
    return j.dump(1) + "\n";
}

// Forwards to another backend and writes each response as a fixture file.
class RecordingBackend final : public MetadataBackend {
public:
    RecordingBackend(std::shared_ptr<MetadataBackend> inner, std::filesystem::path dir)
        : inner_(std::move(inner)), dir_(std::move(dir)) {}

    BackendResponse fetch(const LookupQuery& q) override {
        BackendResponse r = inner_->fetch(q);
        detail::write_file_atomic(dir_ / (fingerprint(q) + ".json"), fixture_file_contents(q, r));
        return r;
    }

    std::string name() const override { return "recording-" + inner_->name(); }

private:
    std::shared_ptr<MetadataBackend> inner_;
    std::filesystem::path dir_;
};

// In-process stand-in for the service over a fixed corpus and citation
// graph. Title search returns loose candidates (token-set ratio >= 0.5) so
// the client's own acceptance threshold is what decides.
class MemoryBackend final : public MetadataBackend {
public:
    struct Citation {
        std::string citing_id;
        std::vector<std::string> contexts;
        std::vector<std::string> intents;
    };

    void add_paper(PaperRecord r) {
        const std::string id = r.paper_id;
        if (!papers_.count(id)) order_.push_back(id);
        papers_[id] = std::move(r);
    }

    void add_citation(const std::string& citing, const std::string& cited, std::vector<std::string> contexts = {},
                      std::vector<std::string> intents = {}) {
        citations_[cited].push_back({citing, std::move(contexts), std::move(intents)});
    }

    // {"papers": [record, ...], "citations": [{"citing", "cited", "contexts"?, "intents"?}, ...]}.
    // Records without an "embedding" key get one from `embedder` when given;
    // an explicit null keeps them without.
    static std::shared_ptr<MemoryBackend> from_corpus(const nlohmann::json& corpus,
                                                      const EmbeddingProvider* embedder = nullptr) {
        auto b = std::make_shared<MemoryBackend>();
        if (!corpus.is_object() || !corpus.contains("papers") || !corpus["papers"].is_array())
            throw SchemaError("corpus: expected {\"papers\": [...]}");
        for (const auto& pj : corpus["papers"]) {
            PaperRecord r = paper_record_from_json(pj);
            if (embedder && !pj.contains("embedding")) r.embedding = embedder->embed(r.title);
            b->add_paper(std::move(r));
        }
        if (corpus.contains("citations")) {
            for (const auto& c : corpus["citations"]) {
                b->add_citation(c.at("citing").get<std::string>(), c.at("cited").get<std::string>(),
                                c.value("contexts", std::vector<std::string>{}),
                                c.value("intents", std::vector<std::string>{}));
            }
        }
        return b;
    }

    const std::map<std::string, PaperRecord>& papers() const { return papers_; }
    const std::map<std::string, std::vector<Citation>>& citations() const { return citations_; }

    BackendResponse fetch(const LookupQuery& q) override {
        std::lock_guard lock(mu_);
        ++requests_;
        const std::string key = normalized_key(q);
        switch (q.kind) {
            case QueryKind::ByTitle: {
                std::vector<std::pair<double, const PaperRecord*>> hits;
                for (const auto& id : order_) {
                    const auto& r = papers_.at(id);
                    const double s = token_set_ratio(key, r.title);
                    if (s >= 0.5) hits.push_back({s, &r});
                }
                std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
                nlohmann::json data = nlohmann::json::array();
                for (std::size_t i = 0; i < hits.size() && i < q.limit; ++i) data.push_back(record_json(*hits[i].second));
                return {200, nlohmann::json{{"data", data}}.dump()};
            }
            case QueryKind::ById: {
                auto it = papers_.find(key);
                if (it == papers_.end()) return {404, ""};
                return {200, record_json(it->second).dump()};
            }
            case QueryKind::CitationsOf: {
                if (!papers_.count(key)) return {404, ""};
                nlohmann::json data = nlohmann::json::array();
                auto it = citations_.find(key);
                if (it != citations_.end()) {
                    for (const auto& c : it->second) {
                        auto p = papers_.find(c.citing_id);
                        if (p == papers_.end()) continue;
                        data.push_back({{"citingPaper", record_json(p->second)},
                                        {"contexts", c.contexts},
                                        {"intents", c.intents}});
                    }
                }
                return {200, nlohmann::json{{"data", data}}.dump()};
            }
        }
        return {404, ""};
    }

    std::string name() const override { return "memory"; }

    std::size_t requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }

private:
    static nlohmann::json record_json(const PaperRecord& r) {
        nlohmann::json j = nlohmann::json::parse(to_json(r).dump());
        j.erase("citation_contexts");
        return j;
    }

    mutable std::mutex mu_;
    std::size_t requests_ = 0;
    std::vector<std::string> order_;
    std::map<std::string, PaperRecord> papers_;
    std::map<std::string, std::vector<Citation>> citations_;
};

// ---------------------------------------------------------------------------
// Rate limiting

// At most `capacity` requests in any window of `window_us`, so no one-second
// span ever sees more than the configured rate. Time and sleeping are injected.
class RateLimiter {
public:
    using MicrosClock = std::function<std::int64_t()>;
    using Sleeper = std::function<void(std::int64_t)>;

    RateLimiter(double per_second, MicrosClock now, Sleeper sleep) : now_(std::move(now)), sleep_(std::move(sleep)) {
        if (!(per_second > 0)) throw InvalidArgument("rate limit must be positive");
        // floor(rate) per second, or one per 1/rate seconds below one per second
        capacity_ = std::max<std::size_t>(1, static_cast<std::size_t>(per_second));
        window_us_ = per_second >= 1 ? 1'000'000 : static_cast<std::int64_t>(std::ceil(1e6 / per_second));
    }

    static std::shared_ptr<RateLimiter> steady(double per_second) {
        return std::make_shared<RateLimiter>(
            per_second,
            [] {
                using namespace std::chrono;
                return duration_cast<microseconds>(steady_clock::now().time_since_epoch()).count();
            },
            [](std::int64_t us) { std::this_thread::sleep_for(std::chrono::microseconds(us)); });
    }

    // Blocks until a request may go out, then records it.
    void acquire() {
        std::lock_guard lock(mu_);
        for (;;) {
            const std::int64_t t = now_();
            while (!sent_.empty() && t - sent_.front() >= window_us_) sent_.pop_front();
            if (sent_.size() < capacity_) {
                sent_.push_back(t);
                return;
            }
            sleep_(window_us_ - (t - sent_.front()));
        }
    }

    std::size_t capacity() const { return capacity_; }
    std::int64_t window_us() const { return window_us_; }

private:
    MicrosClock now_;
    Sleeper sleep_;
    std::size_t capacity_ = 1;
    std::int64_t window_us_ = 1'000'000;
    std::mutex mu_;
    std::deque<std::int64_t> sent_;
};

// ---------------------------------------------------------------------------
// Client

struct CacheEntry {
    std::string fingerprint;
    int status = 200;
    std::string payload;
    std::int64_t fetched_at = 0;
    std::int64_t ttl_ms = kDefaultCacheTtlMs;

    bool fresh_at(std::int64_t now) const { return now - fetched_at < ttl_ms; }
};

struct MetadataOptions {
    double title_threshold = kTitleMatchThreshold;
    std::size_t title_candidates = 10;
    std::int64_t ttl_ms = kDefaultCacheTtlMs;
    std::optional<std::filesystem::path> cache_dir;
};

// One client-level call, for accounting in tests.
struct CallRecord {
    QueryKind kind;
    std::string key;
    std::size_t limit = 0;
    std::size_t returned = 0;
};

class MetadataClient final : public PaperResolver {
public:
    explicit MetadataClient(std::shared_ptr<MetadataBackend> backend, MetadataOptions options = {},
                            Clock clock = system_clock_ms, std::shared_ptr<RateLimiter> limiter = nullptr)
        : backend_(std::move(backend)),
          options_(std::move(options)),
          clock_(std::move(clock)),
          limiter_(std::move(limiter)) {
        if (!backend_) throw InvalidArgument("metadata client needs a backend");
    }

    // Payload bytes for a query, from cache when fresh. A 404 from the
    // service surfaces as NotFound (and is cached like any response).
    std::string fetch_payload(const LookupQuery& q) {
        validate(q);
        const CacheEntry e = entry_for(q);
        if (e.status == 404) throw NotFound(std::string(to_string(q.kind)) + " " + normalized_key(q));
        if (e.status != 200) throw NetworkError("unexpected status " + std::to_string(e.status));
        return e.payload;
    }

    std::optional<PaperRecord> lookup_title(const std::string& title) {
        if (detail::trim(title).empty()) throw InvalidArgument("title is empty");
        if (detail::normalize_title(title).empty()) return std::nullopt;
        const LookupQuery q{QueryKind::ByTitle, title, options_.title_candidates};
        std::string payload;
        try {
            payload = fetch_payload(q);
        } catch (const NotFound&) {
            log_call(q, 0);
            return std::nullopt;
        }
        std::optional<PaperRecord> best;
        double best_score = -1;
        for (const auto& r : data_array(payload)) {
            PaperRecord rec = paper_record_from_json(r);
            const double s = token_set_ratio(title, rec.title);
            if (s >= options_.title_threshold && s > best_score) {
                best_score = s;
                best = std::move(rec);
            }
        }
        log_call(q, best ? 1 : 0);
        return best;
    }

    PaperRecord paper(const std::string& paper_id) {
        const LookupQuery q{QueryKind::ById, paper_id, 1};
        PaperRecord r = parse_record(fetch_payload(q));
        log_call(q, 1);
        return r;
    }

    // Citing papers, most recent first (unknown years last, then by id),
    // at most `limit` of them. The service is always asked for the full cap
    // and the list truncated here, so every limit shares one cache entry.
    std::vector<PaperRecord> citations_of(const std::string& paper_id, std::size_t limit = kMaxCitations) {
        const LookupQuery q{QueryKind::CitationsOf, paper_id, limit};
        validate(q);
        const std::string payload = fetch_payload({QueryKind::CitationsOf, paper_id, kMaxCitations});
        std::map<std::string, PaperRecord> by_id;
        for (const auto& row : data_array(payload)) {
            if (!row.is_object() || !row.contains("citingPaper")) throw SchemaError("citation row without citingPaper");
            const auto& cp = row["citingPaper"];
            if (!cp.is_object() || !cp.contains("paperId") || cp["paperId"].is_null()) continue;
            PaperRecord rec = paper_record_from_json(cp);
            std::vector<std::string> intents;
            if (auto it = row.find("intents"); it != row.end() && it->is_array())
                for (const auto& x : *it)
                    if (x.is_string()) intents.push_back(x.get<std::string>());
            if (auto it = row.find("contexts"); it != row.end() && it->is_array())
                for (const auto& x : *it)
                    if (x.is_string())
                        rec.citation_contexts.push_back(
                            {detail::trim(paper_id), x.get<std::string>(), intents.empty() ? "" : intents.front()});
            auto [pos, inserted] = by_id.emplace(rec.paper_id, rec);
            if (!inserted)
                for (auto& c : rec.citation_contexts) pos->second.citation_contexts.push_back(std::move(c));
        }
        std::vector<PaperRecord> out;
        for (auto& [_, r] : by_id) out.push_back(std::move(r));
        std::stable_sort(out.begin(), out.end(), [](const PaperRecord& a, const PaperRecord& b) {
            if (a.year != b.year) return a.year > b.year;
            return a.paper_id < b.paper_id;
        });
        if (out.size() > limit) out.resize(limit);
        log_call(q, out.size());
        return out;
    }

    std::optional<PaperRecord> by_id(const std::string& paper_id) override {
        try {
            return paper(paper_id);
        } catch (const NotFound&) {
            return std::nullopt;
        }
    }

    std::optional<PaperRecord> by_title(const std::string& title) override { return lookup_title(title); }

    std::vector<CallRecord> calls() const {
        std::lock_guard lock(mu_);
        return calls_;
    }

    std::size_t backend_requests() const {
        std::lock_guard lock(mu_);
        return backend_requests_;
    }

    const MetadataBackend& backend() const { return *backend_; }

private:
    static nlohmann::json parse_json(const std::string& payload) {
        try {
            return nlohmann::json::parse(payload);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("metadata payload: ") + e.what());
        }
    }

    static PaperRecord parse_record(const std::string& payload) { return paper_record_from_json(parse_json(payload)); }

    static nlohmann::json data_array(const std::string& payload) {
        nlohmann::json j = parse_json(payload);
        if (!j.is_object() || !j.contains("data") || !j["data"].is_array())
            throw SchemaError("metadata payload: expected {\"data\": [...]}");
        return j["data"];
    }

    void log_call(const LookupQuery& q, std::size_t returned) {
        std::lock_guard lock(mu_);
        calls_.push_back({q.kind, normalized_key(q), q.limit, returned});
    }

    std::optional<std::filesystem::path> cache_path(const std::string& fp) const {
        if (!options_.cache_dir) return std::nullopt;
        return *options_.cache_dir / (fp + ".json");
    }

    std::optional<CacheEntry> load_disk(const std::string& fp) const {
        auto path = cache_path(fp);
        if (!path) return std::nullopt;
        auto bytes = detail::read_file_if_exists(*path);
        if (!bytes) return std::nullopt;
        try {
            auto j = nlohmann::json::parse(*bytes);
            CacheEntry e;
            e.fingerprint = j.at("fingerprint").get<std::string>();
            e.status = j.at("status").get<int>();
            e.payload = j.at("payload").get<std::string>();
            e.fetched_at = j.at("fetched_at").get<std::int64_t>();
            e.ttl_ms = j.at("ttl_ms").get<std::int64_t>();
            if (e.fingerprint != fp) return std::nullopt;
            return e;
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;  // a corrupt cache file is just a miss
        }
    }

    void store_disk(const CacheEntry& e) const {
        auto path = cache_path(e.fingerprint);
        if (!path) return;
        nlohmann::ordered_json j;
        j["fingerprint"] = e.fingerprint;
        j["status"] = e.status;
        j["fetched_at"] = e.fetched_at;
        j["ttl_ms"] = e.ttl_ms;
        j["payload"] = e.payload;
        detail::write_file_atomic(*path, j.dump() + "\n");
    }

    CacheEntry entry_for(const LookupQuery& q) {
        const std::string fp = fingerprint(q);
        {
            std::lock_guard lock(cache_mu_);
            auto it = cache_.find(fp);
            if (it != cache_.end() && it->second.fresh_at(clock_())) return it->second;
            if (auto disk = load_disk(fp); disk && disk->fresh_at(clock_())) {
                cache_[fp] = *disk;
                return *disk;
            }
        }
        if (limiter_) limiter_->acquire();
        BackendResponse r = backend_->fetch(q);
        {
            std::lock_guard lock(mu_);
            ++backend_requests_;
        }
        if (r.status != 200 && r.status != 404) throw NetworkError("unexpected status " + std::to_string(r.status));
        CacheEntry e{fp, r.status, std::move(r.body), clock_(), options_.ttl_ms};
        std::lock_guard lock(cache_mu_);
        store_disk(e);
        cache_[fp] = e;
        return e;
    }

    std::shared_ptr<MetadataBackend> backend_;
    MetadataOptions options_;
    Clock clock_;
    std::shared_ptr<RateLimiter> limiter_;
    mutable std::mutex mu_;
    std::mutex cache_mu_;
    std::map<std::string, CacheEntry> cache_;
    std::vector<CallRecord> calls_;
    std::size_t backend_requests_ = 0;
};

}  // namespace threadloom
