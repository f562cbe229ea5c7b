#pragma once

// One workspace plus its documents, metadata client and suggestion model,
// with the operations the HTTP service and the CLI expose. Both front ends go
// through here, so identical operation sequences persist identical state.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "threadloom/clock.hpp"
#include "threadloom/discovery.hpp"
#include "threadloom/doc_model.hpp"
#include "threadloom/embedding.hpp"
#include "threadloom/errors.hpp"
#include "threadloom/highlight_linker.hpp"
#include "threadloom/metadata_client.hpp"
#include "threadloom/metadata_http.hpp"
#include "threadloom/tei_import.hpp"
#include "threadloom/thread_store.hpp"
#include "threadloom/thread_suggest.hpp"

namespace threadloom {

// Parsed documents cached as <dir>/<doc_id>.json.
class DocumentStore {
public:
    explicit DocumentStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    struct Ingested {
        std::string doc_id;
        bool cached = false;  // an identical parse was already stored
        std::size_t merged = 0;
    };

    // Validates, merges fragmented sentences and stores the result.
    Ingested ingest(std::string_view raw) {
        Ingested out;
        ParsedDocument doc = merge_fragmented_sentences(ingest_any(raw), &out.merged);
        out.doc_id = doc.doc_id;
        const std::string bytes = serialize_document(doc);
        std::lock_guard lock(mu_);
        const auto path = path_for(doc.doc_id);
        if (auto existing = detail::read_file_if_exists(path); existing && *existing == bytes) {
            out.cached = true;
        } else {
            detail::write_file_atomic(path, bytes);
        }
        docs_[doc.doc_id] = std::make_shared<const ParsedDocument>(std::move(doc));
        return out;
    }

    std::shared_ptr<const ParsedDocument> get(const std::string& doc_id) {
        std::lock_guard lock(mu_);
        if (auto it = docs_.find(doc_id); it != docs_.end()) return it->second;
        if (doc_id.empty() || doc_id.find('/') != std::string::npos || doc_id.find("..") != std::string::npos)
            throw NoSuchDocument("no document " + doc_id);
        auto bytes = detail::read_file_if_exists(path_for(doc_id));
        if (!bytes) throw NoSuchDocument("no document " + doc_id);
        auto doc = std::make_shared<const ParsedDocument>(ingest_document(*bytes));
        docs_[doc_id] = doc;
        return doc;
    }

    std::vector<std::string> list() const {
        std::vector<std::string> ids;
        std::error_code ec;
        for (const auto& e : std::filesystem::directory_iterator(dir_, ec))
            if (e.path().extension() == ".json") ids.push_back(e.path().stem().string());
        std::sort(ids.begin(), ids.end());
        return ids;
    }

private:
    std::filesystem::path path_for(const std::string& doc_id) const { return dir_ / (doc_id + ".json"); }

    std::filesystem::path dir_;
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<const ParsedDocument>> docs_;
};

struct EngineConfig {
    std::filesystem::path home;                     // workspace/, documents/, cache/
    std::optional<std::filesystem::path> fixtures;  // metadata fixture directory: offline mode
    bool logical_clock = false;                     // timestamps 1, 2, 3...: reproducible files
    double rate_limit = 1.0;                        // metadata requests per second
    std::size_t embedding_dim = HashingEmbedder::kDefaultDim;
    LinkerOptions linker;
    HttpBackendConfig http;
    std::shared_ptr<MetadataBackend> backend;       // when set, used instead of fixtures or the live service

    // THREADLOOM_HOME (default ./.threadloom), THREADLOOM_FIXTURES,
    // THREADLOOM_CLOCK=logical, THREADLOOM_RATE_LIMIT.
    static EngineConfig from_env() {
        EngineConfig c;
        const char* home = std::getenv("THREADLOOM_HOME");
        c.home = home && *home ? home : ".threadloom";
        if (const char* f = std::getenv("THREADLOOM_FIXTURES"); f && *f) c.fixtures = f;
        if (const char* k = std::getenv("THREADLOOM_CLOCK"); k && std::string(k) == "logical") c.logical_clock = true;
        if (const char* r = std::getenv("THREADLOOM_RATE_LIMIT"); r && *r) c.rate_limit = std::stod(r);
        return c;
    }
};

enum class CommitMode { NewThread, RefsTo, ClipTo };

inline CommitMode commit_mode_from_string(const std::string& s) {
    if (s == "NEW_THREAD") return CommitMode::NewThread;
    if (s == "REFS_TO") return CommitMode::RefsTo;
    if (s == "CLIP_TO") return CommitMode::ClipTo;
    throw SchemaError("unknown commit mode: " + s);
}

struct HighlightResult {
    HoldingTank tank;
    std::vector<PageRect> viewport_rects;  // the tank's rects mapped back onto the screen
    std::vector<FlatSuggestion> suggestions;
    std::uint64_t revision = 0;
};

// One drawer row: a thread with its nested-item count and paper cards.
struct DrawerPaper {
    PaperRef paper;
    bool current = false;  // the paper open in the reader
};

struct DrawerEntry {
    std::string thread_id;
    std::string label;
    std::size_t depth = 0;
    std::size_t nested_items = 0;  // threads, clips and papers below this thread, itself excluded
    std::size_t clip_count = 0;    // clips filed directly here
    std::vector<DrawerPaper> papers;
};

inline std::vector<DrawerEntry> drawer_view(const Workspace& ws) {
    std::vector<DrawerEntry> out;
    for_each_thread(ws.threads, [&](const Thread& t, std::size_t depth) {
        DrawerEntry e{t.thread_id, t.label, depth};
        const ItemCounts below = count_items(t.children);
        e.nested_items = below.threads + below.clips + below.papers + t.clips.size() + t.papers.size();
        e.clip_count = t.clips.size();
        for (const auto& p : t.papers) e.papers.push_back({p, ws.current_paper && *ws.current_paper == p.identity()});
        out.push_back(std::move(e));
    });
    return out;
}

class Engine {
public:
    using Rev = ThreadStore::Rev;

    explicit Engine(EngineConfig config)
        : config_(std::move(config)),
          docs_(config_.home / "documents"),
          store_(ThreadStore::open(config_.home / "workspace", config_.logical_clock ? Clock(logical_clock) : Clock(system_clock_ms))),
          client_(make_client(config_)),
          embedder_(config_.embedding_dim),
          labels_(embedder_) {}

    const EngineConfig& config() const { return config_; }
    ThreadStore& store() { return store_; }
    MetadataClient& client() { return *client_; }
    std::shared_ptr<const Workspace> snapshot() const { return store_.snapshot(); }

    // -- documents ------------------------------------------------------------

    // Stores the parse and files the document under Unorganized Papers as the
    // current paper.
    DocumentStore::Ingested ingest(std::string_view raw, Rev expected = {}) {
        auto r = docs_.ingest(raw);
        open_document(r.doc_id, expected);
        return r;
    }

    RegisterResult open_document(const std::string& doc_id, Rev expected = {}) {
        auto doc = docs_.get(doc_id);
        PaperRef p = local_paper(doc->title.empty() ? doc_id : doc->title);
        p.doc_id = doc_id;
        return store_.register_open_paper(std::move(p), expected);
    }

    std::shared_ptr<const ParsedDocument> document(const std::string& doc_id) { return docs_.get(doc_id); }
    std::vector<std::string> documents() const { return docs_.list(); }

    // -- highlights -------------------------------------------------------------

    // Text highlight in rendered units: sentences under it, their context and
    // resolved references go into the tank; suggestions come back inline.
    HighlightResult highlight(const Highlight& h, const ViewportTransform& t, Rev expected = {}) {
        auto doc = docs_.get(h.doc_id);
        const auto rects = to_document_space(h, t);
        for (const auto& r : rects)
            if (r.page >= doc->pages.size()) throw UnknownPage("page " + std::to_string(r.page) + " not in " + h.doc_id);
        if (h.kind == HighlightKind::Area)
            throw InvalidArgument("area highlights carry an image; use highlight_area");
        const auto core = locate_sentences(*doc, rects, config_.linker.overlap_ratio);
        if (core.empty()) throw EmptySelection("highlight covers no sentence");
        CitationContext ctx = resolve_context(*doc, core, config_.linker, client_.get());
        store_.tank_load(std::move(ctx), rects, expected);
        return tank_state(t);
    }

    HighlightResult highlight_area(const Highlight& h, const ViewportTransform& t, std::string image_bytes,
                                   Rev expected = {}) {
        auto doc = docs_.get(h.doc_id);
        Highlight in_doc = h;
        in_doc.rects = to_document_space(h, t);
        for (const auto& r : in_doc.rects)
            if (r.page >= doc->pages.size()) throw UnknownPage("page " + std::to_string(r.page) + " not in " + h.doc_id);
        store_.tank_load_image(capture_area(in_doc, std::move(image_bytes), config_.linker.max_image_bytes), expected);
        return tank_state(t);
    }

    // Current tank, with rects mapped through `t` when one is given.
    HighlightResult tank_state(const std::optional<ViewportTransform>& t = std::nullopt) {
        auto ws = store_.snapshot();
        HighlightResult r;
        r.tank = ws->tank;
        r.revision = ws->revision;
        if (t) {
            if (!ws->tank.rects.empty()) {
                r.viewport_rects = to_viewport_space(ws->tank.rects, *t);
            } else if (ws->tank.image) {
                r.viewport_rects = to_viewport_space({{ws->tank.image->page, ws->tank.image->rect}}, *t);
            }
        }
        r.suggestions = suggest_for_tank(*ws, ws->tank, labels_);
        return r;
    }

    void tank_deselect(const std::string& key, Rev expected = {}) { store_.tank_deselect(key, expected); }
    void tank_reselect(const std::string& key, Rev expected = {}) { store_.tank_reselect(key, expected); }
    void tank_clear(Rev expected = {}) { store_.tank_clear(expected); }

    CommitResult commit(CommitMode mode, const std::optional<std::string>& target, const std::optional<std::string>& label,
                        Rev expected = {}) {
        switch (mode) {
            case CommitMode::NewThread: return store_.commit_as_new_thread(label.value_or(""), expected);
            case CommitMode::RefsTo:
                if (!target) throw InvalidArgument("REFS_TO needs a target thread");
                return store_.commit_refs_to(*target, expected);
            case CommitMode::ClipTo:
                if (!target) throw InvalidArgument("CLIP_TO needs a target thread");
                return store_.commit_clip_to(*target, expected);
        }
        throw InvalidArgument("unknown commit mode");
    }

    // -- threads ----------------------------------------------------------------

    std::string create_thread(const std::string& label, const std::optional<std::string>& parent, Rev expected = {}) {
        return store_.create_thread(label, parent, expected);
    }
    void rename_thread(const std::string& id, const std::string& label, Rev expected = {}) {
        store_.rename_thread(id, label, expected);
    }
    void move_thread(const std::string& id, const std::optional<std::string>& parent, std::optional<std::size_t> position,
                     Rev expected = {}) {
        store_.move_thread(id, parent, position, expected);
    }
    void delete_thread(const std::string& id, bool confirm, Rev expected = {}) { store_.delete_thread(id, confirm, expected); }
    void move_paper(const std::string& paper_id, const std::string& from, const std::string& to, Rev expected = {}) {
        store_.move_paper(paper_id, from, to, expected);
    }
    void remove_paper(const std::string& thread_id, const std::string& paper_id, Rev expected = {}) {
        store_.remove_paper(thread_id, paper_id, expected);
    }
    void edit_clip(const std::string& clip_id, const std::string& text, Rev expected = {}) {
        store_.edit_clip(clip_id, text, expected);
    }
    void delete_clip(const std::string& clip_id, Rev expected = {}) { store_.delete_clip(clip_id, expected); }

    // "Add to thread" on a recommendation: metadata comes from the last
    // recommendation set when it holds the paper, else from the service.
    PaperRef add_to_thread(const std::string& thread_id, const std::string& paper_id, Rev expected = {}) {
        std::optional<PaperRecord> rec;
        {
            std::lock_guard lock(recs_mu_);
            if (auto it = recs_.find(thread_id); it != recs_.end())
                for (const auto& r : it->second.items)
                    if (r.candidate.paper_id == paper_id) rec = r.candidate;
        }
        if (!rec) rec = client_->paper(paper_id);
        PaperRef p = paper_from_record(*rec);
        store_.add_paper(thread_id, p, expected);
        return p;
    }

    std::vector<DrawerEntry> drawer() const { return drawer_view(*store_.snapshot()); }

    std::vector<FlatSuggestion> suggest(const std::string& text, std::size_t k = kDefaultSuggestions) {
        return suggest_for_text(*store_.snapshot(), text, labels_, k);
    }

    std::string export_outline(const std::optional<std::string>& thread_id = std::nullopt) const {
        auto ws = store_.snapshot();
        if (thread_id && !ws->find_thread(*thread_id)) throw NoSuchThread("no thread " + *thread_id);
        return threadloom::export_outline(*ws, thread_id);
    }

    // -- discovery --------------------------------------------------------------

    // Works on a snapshot and holds no store lock, so drawer mutations are
    // never blocked behind metadata fetches.
    RecommendationSet refresh_recommendations(const std::string& thread_id) {
        auto ws = store_.snapshot();
        RecommendationSet set = refresh(*ws, thread_id, *client_);
        std::lock_guard lock(recs_mu_);
        recs_[thread_id] = set;
        return set;
    }

    // Last computed set, computing one when there is none yet.
    RecommendationSet recommendations(const std::string& thread_id) {
        {
            std::lock_guard lock(recs_mu_);
            if (auto it = recs_.find(thread_id); it != recs_.end()) return it->second;
        }
        return refresh_recommendations(thread_id);
    }

    // Overview with the last recommendations, when any were computed.
    Overview overview(const std::string& thread_id) const {
        auto ws = store_.snapshot();
        std::optional<RecommendationSet> recs;
        {
            std::lock_guard lock(recs_mu_);
            if (auto it = recs_.find(thread_id); it != recs_.end()) recs = it->second;
        }
        return build_overview(*ws, thread_id, std::move(recs));
    }

private:
    static std::unique_ptr<MetadataClient> make_client(const EngineConfig& c) {
        if (c.backend) return std::make_unique<MetadataClient>(c.backend);
        if (c.fixtures) return std::make_unique<MetadataClient>(std::make_shared<FixtureBackend>(*c.fixtures));
        MetadataOptions opts;
        opts.cache_dir = c.home / "cache";
        return std::make_unique<MetadataClient>(std::make_shared<HttpBackend>(c.http), opts, system_clock_ms,
                                                RateLimiter::steady(c.rate_limit));
    }

    EngineConfig config_;
    DocumentStore docs_;
    ThreadStore store_;
    std::unique_ptr<MetadataClient> client_;
    HashingEmbedder embedder_;
    LabelEmbeddings labels_;
    mutable std::mutex recs_mu_;
    std::map<std::string, RecommendationSet> recs_;
};

}  // namespace threadloom
