// Engine facade and HTTP service contract: the operations the reader client
// depends on, envelopes, status codes and revision handling.

#include <chrono>
#include <future>
#include <thread>

#include <gtest/gtest.h>

#include "demo_session.hpp"
#include "support.hpp"

using namespace threadloom;
using namespace testsupport;

namespace {

struct Fixture {
    TempDir home;
    Engine engine;
    ApiService api;

    Fixture() : engine(demo_config(home.path)), api(engine) {}
    explicit Fixture(EngineConfig config) : engine(std::move(config)), api(engine) {}

    std::uint64_t rev() const { return engine.snapshot()->revision; }

    json ok(const std::string& method, const std::string& path, const json& payload = nullptr,
            std::optional<std::uint64_t> expected = std::nullopt) {
        auto r = api.call(method, path, payload, expected);
        EXPECT_EQ(r.status, 200) << method << " " << path << ": " << r.body;
        return r.json();
    }

    ApiService::Response raw(const std::string& method, const std::string& path, const json& payload = nullptr,
                             std::optional<std::uint64_t> expected = std::nullopt) {
        return api.call(method, path, payload, expected);
    }

    void ingest_paragraph() { ok("POST", "/documents", {{"content", fixture("citation_paragraph.json")}}); }
};

json rect(std::size_t page, double x, double y, double w, double h) { return json::array({page, x, y, w, h}); }

// Sentences 1 and 2 of the paragraph fixture, the answer file's core.
json core_rects() { return json::array({rect(0, 72, 126, 468, 56)}); }

std::string error_code(const ApiService::Response& r) { return r.json()["error"]["code"]; }

// Nested item count straight from the persisted file: every thread, clip
// and paper strictly below, plus the thread's own clips and papers.
std::size_t nested_from_file(const json& t) {
    std::size_t n = t["clips"].size() + t["papers"].size();
    for (const auto& c : t["children"]) n += 1 + nested_from_file(c);
    return n;
}

const json* find_thread_json(const json& list, const std::string& id) {
    for (const auto& t : list) {
        if (t["thread_id"] == id) return &t;
        if (const json* hit = find_thread_json(t["children"], id)) return hit;
    }
    return nullptr;
}

}  // namespace

// -- documents ------------------------------------------------------------------

TEST(Documents, GetReturnsTheStoredParse) {
    Fixture f;
    f.ingest_paragraph();
    const auto j = f.ok("GET", "/documents/doc-paragraph");
    const auto expected = merge_fragmented_sentences(ingest_document(fixture("citation_paragraph.json")));
    EXPECT_EQ(j["payload"], json::parse(to_json(expected).dump()));
    EXPECT_EQ(f.ok("GET", "/documents")["payload"], json::array({"doc-paragraph"}));
}

TEST(Documents, UnknownDocumentIs404) {
    Fixture f;
    auto r = f.raw("GET", "/documents/nope");
    EXPECT_EQ(r.status, 404);
    EXPECT_EQ(error_code(r), "NO_SUCH_DOCUMENT");
    EXPECT_EQ(f.raw("GET", "/documents/..%2F..%2Fetc").status, 404);
}

TEST(Documents, ReingestIsCachedAndKeepsOnePaper) {
    Fixture f;
    f.ingest_paragraph();
    const auto j = f.ok("POST", "/documents", {{"content", fixture("citation_paragraph.json")}});
    EXPECT_TRUE(j["payload"]["cached"].get<bool>());
    EXPECT_EQ(f.engine.snapshot()->unorganized().papers.size(), 1u);
}

TEST(Documents, AcceptsTeiAndInlineDocuments) {
    Fixture f;
    const auto tei = f.ok("POST", "/documents", {{"content", fixture("sample.tei.xml")}});
    EXPECT_FALSE(tei["payload"]["doc_id"].get<std::string>().empty());
    const auto inline_doc = f.ok("POST", "/documents", {{"document", fixture_json("doc_small.json")}});
    EXPECT_EQ(inline_doc["payload"]["doc_id"], fixture_json("doc_small.json")["doc_id"]);
}

TEST(Documents, SchemaViolationIs422) {
    Fixture f;
    auto r = f.raw("POST", "/documents", {{"content", "{\"doc_id\": 3}"}});
    EXPECT_EQ(r.status, 422);
    EXPECT_EQ(error_code(r), "SCHEMA_ERROR");
    EXPECT_EQ(f.rev(), 0u);
}

// -- highlights and the holding tank ----------------------------------------------

TEST(Highlights, ParagraphMatchesAnswerFile) {
    Fixture f;
    f.ingest_paragraph();
    const auto j = f.ok("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", core_rects()}});
    const auto answer = fixture_json("citation_paragraph.answer.json");
    const auto& ctx = j["payload"]["tank"]["context"];
    EXPECT_EQ(ctx["core"], answer["core"]);
    EXPECT_EQ(ctx["context"], answer["context"]);
    const auto& resolved = ctx["resolved"];
    ASSERT_EQ(resolved.size(), answer["resolved"].size());
    for (std::size_t i = 0; i < resolved.size(); ++i) {
        const auto& want = answer["resolved"][i];
        EXPECT_EQ(resolved[i]["key"], want["key"]) << i;
        EXPECT_EQ(resolved[i]["marker"]["surface"], want["surface"]) << i;
        EXPECT_EQ(resolved[i]["reason"], want["reason"]) << i;
    }
    // every card starts selected, in resolved order
    json keys = json::array();
    for (const auto& r : answer["resolved"]) keys.push_back(r["key"]);
    EXPECT_EQ(j["payload"]["tank"]["selected"], keys);
}

TEST(Highlights, ResolvedCardsCarryMetadata) {
    Fixture f;
    f.ingest_paragraph();
    const auto j = f.ok("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", core_rects()}});
    std::map<std::string, std::string> ids;
    for (const auto& r : j["payload"]["tank"]["context"]["resolved"])
        if (!r["paper"].is_null()) ids[r["key"].get<std::string>()] = r["paper"]["paperId"].get<std::string>();
    const std::map<std::string, std::string> expected = {{"b2", "grobid"}, {"b3", "litgraph"}, {"b4", "s2orc"},
                                                         {"b5", "s2odp"},  {"b6", "specter"},  {"b7", "minilm"},
                                                         {"b8", "tldr"}};
    EXPECT_EQ(ids, expected);
}

TEST(Highlights, SuggestionsComeBackInline) {
    Fixture f;
    f.ingest_paragraph();
    auto empty = f.ok("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", core_rects()}});
    EXPECT_TRUE(empty["payload"]["suggestions"].empty());  // no threads yet

    f.ok("POST", "/threads", {{"label", "Representation models"}});
    f.ok("POST", "/threads", {{"label", "Cooking"}});
    auto j = f.ok("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", core_rects()}});
    const auto& s = j["payload"]["suggestions"];
    ASSERT_FALSE(s.empty());
    // the thin client renders exactly the engine's ranking
    const auto engine_side = f.engine.suggest(f.engine.snapshot()->tank.context->text);
    ASSERT_EQ(s.size(), engine_side.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i]["thread_id"], engine_side[i].thread_id);
    EXPECT_EQ(s[0]["label"], "Representation models");
}

TEST(Highlights, ViewportRoundTrip) {
    Fixture f;
    f.ingest_paragraph();
    const double scale = 1.75, dx = 13.5, dy = 240.25;
    const double x = 72, y = 126, w = 468, h = 56;
    // rendered coordinates computed by hand: point * scale + page offset
    const json shown = json::array({rect(0, x * scale + dx, y * scale + dy, w * scale, h * scale)});
    const json transform{{"render_scale", scale}, {"page_offsets", json::array({json::array({dx, dy})})}};
    auto j = f.ok("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", shown}, {"transform", transform}});
    const auto& back = j["payload"]["viewport_rects"];
    ASSERT_EQ(back.size(), 1u);
    for (std::size_t i = 1; i < 5; ++i)
        EXPECT_NEAR(back[0][i].get<double>(), shown[0][i].get<double>(), 1e-9 * std::abs(shown[0][i].get<double>()));
    const auto& stored = j["payload"]["tank"]["rects"][0];
    EXPECT_NEAR(stored[1].get<double>(), x, 1e-9 * x);
    EXPECT_NEAR(stored[2].get<double>(), y, 1e-9 * y);
    EXPECT_NEAR(stored[3].get<double>(), w, 1e-9 * w);
    EXPECT_NEAR(stored[4].get<double>(), h, 1e-9 * h);
    // the same core as the unscaled highlight
    EXPECT_EQ(j["payload"]["tank"]["context"]["core"], json::array({1, 2}));
}

TEST(Highlights, AreaCaptureStoresImage) {
    Fixture f;
    f.ingest_paragraph();
    const std::string png = std::string("\x89PNG\r\n\x1a\n", 8) + "pixels";
    auto j = f.ok("POST", "/highlights",
                  {{"doc_id", "doc-paragraph"},
                   {"kind", "AREA"},
                   {"rects", json::array({rect(0, 100, 300, 200, 150)})},
                   {"image_base64", detail::base64_encode(png)}});
    EXPECT_EQ(j["payload"]["tank"]["image"]["mime"], "image/png");
    EXPECT_EQ(j["payload"]["tank"]["image"]["bytes"], png.size());
    auto commit = f.ok("POST", "/tank/commit", {{"mode", "NEW_THREAD"}, {"label", "Figures"}});
    const Thread* t = f.engine.snapshot()->find_thread(commit["payload"]["result"]["thread_id"]);
    ASSERT_NE(t, nullptr);
    ASSERT_EQ(t->clips.size(), 1u);
    EXPECT_EQ(t->clips[0].kind, ClipKind::Image);
}

TEST(Highlights, BadInputIsRejectedWithoutChange) {
    Fixture f;
    f.ingest_paragraph();
    const auto before = f.rev();
    EXPECT_EQ(error_code(f.raw("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", json::array({json::array({0, 1})})}})),
              "SCHEMA_ERROR");
    EXPECT_EQ(error_code(f.raw("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", json::array({rect(5, 72, 126, 10, 10)})}})),
              "UNKNOWN_PAGE");
    EXPECT_EQ(error_code(f.raw("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", json::array({rect(0, 0, 0, 5, 5)})}})),
              "EMPTY_SELECTION");
    auto bad_image = f.raw("POST", "/highlights",
                           {{"doc_id", "doc-paragraph"}, {"kind", "AREA"}, {"rects", core_rects()}, {"image_base64", "!!"}});
    EXPECT_EQ(bad_image.status, 422);
    EXPECT_EQ(f.raw("POST", "/highlights", {{"doc_id", "missing"}, {"rects", core_rects()}}).status, 404);
    EXPECT_EQ(f.rev(), before);
}

TEST(Tank, PerCardDeselectAndReselect) {
    Fixture f;
    f.ingest_paragraph();
    f.ok("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", core_rects()}});
    auto d = f.ok("POST", "/tank/deselect", {{"key", "b6"}});
    auto selected = d["payload"]["tank"]["selected"].get<std::vector<std::string>>();
    EXPECT_EQ(std::count(selected.begin(), selected.end(), "b6"), 0);
    EXPECT_EQ(selected.size(), 8u);
    auto r = f.ok("POST", "/tank/reselect", {{"key", "b6"}});
    EXPECT_EQ(r["payload"]["tank"]["selected"].size(), 9u);

    f.ok("POST", "/tank/deselect", {{"key", "b6"}});
    auto commit = f.ok("POST", "/tank/commit", {{"mode", "NEW_THREAD"}, {"label", "Parsing"}});
    const Thread* t = f.engine.snapshot()->find_thread(commit["payload"]["result"]["thread_id"]);
    for (const auto& p : t->papers) EXPECT_NE(p.paper_id, "specter");
    EXPECT_EQ(t->papers.size(), 6u);  // seven resolved minus the discarded card

    auto unknown = f.raw("POST", "/tank/deselect", {{"key", "b99"}});
    EXPECT_EQ(unknown.status, 422);
    EXPECT_EQ(error_code(unknown), "NOT_IN_TANK");
}

TEST(Tank, CommitModesAndResponseDrawer) {
    Fixture f;
    f.ingest_paragraph();
    auto t = f.ok("POST", "/threads", {{"label", "Existing"}})["payload"]["thread_id"].get<std::string>();
    f.ok("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", core_rects()}});
    auto refs = f.ok("POST", "/tank/commit", {{"mode", "REFS_TO"}, {"target", t}});
    EXPECT_TRUE(refs["payload"]["result"]["clip_id"].is_null());
    EXPECT_EQ(refs["payload"]["result"]["papers_added"], 7);
    auto clip = f.ok("POST", "/tank/commit", {{"mode", "CLIP_TO"}, {"target", t}});
    EXPECT_FALSE(clip["payload"]["result"]["clip_id"].is_null());
    EXPECT_EQ(clip["payload"]["drawer"], json::parse(to_json(f.engine.drawer()).dump()));
    EXPECT_EQ(error_code(f.raw("POST", "/tank/commit", {{"mode", "REFS_TO"}})), "INVALID_ARGUMENT");
    EXPECT_EQ(error_code(f.raw("POST", "/tank/commit", {{"mode", "SIDEWAYS"}})), "SCHEMA_ERROR");
}

// -- drawer ---------------------------------------------------------------------

TEST(Drawer, CountsMatchPersistedFile) {
    Fixture f;
    EngineDriver d(f.engine);
    run_session(d);
    const auto file = json::parse(read_file(home_workspace_file(f.home.path).string()));
    const auto view = f.ok("GET", "/workspace")["payload"];
    ASSERT_EQ(view["drawer"].size(), 4u);
    for (const auto& e : view["drawer"]) {
        const json* t = find_thread_json(file["threads"], e["thread_id"]);
        ASSERT_NE(t, nullptr);
        EXPECT_EQ(e["nested_items"].get<std::size_t>(), nested_from_file(*t)) << e["thread_id"];
        EXPECT_EQ(e["clip_count"].get<std::size_t>(), (*t)["clips"].size());
        EXPECT_EQ(e["papers"].size(), (*t)["papers"].size());
    }
    // drawer rows follow the persisted depth-first order
    std::vector<std::string> order;
    for (const auto& e : view["drawer"]) order.push_back(e["thread_id"]);
    EXPECT_EQ(order, (std::vector<std::string>{"unorganized", "t9", "t5", "t2"}));
    EXPECT_EQ(view["drawer"][1]["nested_items"], 19);
    EXPECT_EQ(view["drawer"][2]["depth"], 1);
}

TEST(Drawer, CurrentPaperBadgeFollowsTheOpenDocument) {
    Fixture f;
    f.ingest_paragraph();
    auto badge = [&] {
        std::vector<std::string> titles;
        for (const auto& e : f.engine.drawer())
            for (const auto& p : e.papers)
                if (p.current) titles.push_back(p.paper.title);
        return titles;
    };
    EXPECT_EQ(badge(), std::vector<std::string>{"Citation Paragraph Fixture"});
    const auto small = fixture_json("doc_small.json");
    f.ok("POST", "/documents", {{"document", small}});
    EXPECT_EQ(badge(), std::vector<std::string>{small["title"].get<std::string>()});
    f.ok("POST", "/documents/doc-paragraph/open", json::object());
    EXPECT_EQ(badge(), std::vector<std::string>{"Citation Paragraph Fixture"});
    const auto view = f.ok("GET", "/workspace")["payload"];
    EXPECT_EQ(view["current_paper"], f.engine.snapshot()->current_paper.value());
}

// -- threads ----------------------------------------------------------------------

TEST(Threads, CrudThroughTheService) {
    Fixture f;
    auto a = f.ok("POST", "/threads", {{"label", "A"}})["payload"]["thread_id"].get<std::string>();
    auto b = f.ok("POST", "/threads", {{"label", "B"}})["payload"]["thread_id"].get<std::string>();
    f.ok("POST", "/threads/" + b + "/move", {{"parent", a}});
    EXPECT_EQ(f.engine.snapshot()->find_thread(a)->children.at(0).thread_id, b);
    f.ok("PATCH", "/threads/" + b, {{"label", "Bee"}});
    EXPECT_EQ(f.engine.snapshot()->find_thread(b)->label, "Bee");
    EXPECT_EQ(error_code(f.raw("POST", "/threads/" + a + "/move", {{"parent", b}})), "CYCLE_ERROR");
    auto needs = f.raw("DELETE", "/threads/" + a);
    EXPECT_EQ(needs.status, 409);
    EXPECT_EQ(error_code(needs), "CONFIRMATION_REQUIRED");
    f.ok("DELETE", "/threads/" + a, {{"confirm", true}});
    EXPECT_EQ(f.engine.snapshot()->find_thread(b), nullptr);
    EXPECT_EQ(error_code(f.raw("PATCH", "/threads/nope", {{"label", "x"}})), "NO_SUCH_THREAD");
    EXPECT_EQ(f.raw("PATCH", "/threads/nope", {{"label", "x"}}).status, 404);
}

TEST(Threads, DeleteConfirmViaQuery) {
    Fixture f;
    auto a = f.ok("POST", "/threads", {{"label", "A"}})["payload"]["thread_id"].get<std::string>();
    f.ok("POST", "/threads", {{"label", "B"}, {"parent", a}});
    ApiService::Request req{"DELETE", "/threads/" + a, "", {{"confirm", "true"}}};
    EXPECT_EQ(f.api.handle(req).status, 200);
}

TEST(Threads, AddToThreadFromRecommendations) {
    Fixture f;
    EngineDriver d(f.engine);
    auto steps = demo_steps();
    steps.erase(steps.end() - 1);  // stop before the scripted add
    run_session(d, steps);
    auto recs = f.ok("POST", "/threads/t9/recommendations/refresh", json::object())["payload"];
    ASSERT_FALSE(recs["items"].empty());
    const std::string pick = recs["items"][2]["paper"]["paperId"];
    auto added = f.ok("POST", "/threads/t5/papers", {{"paper_id", pick}}, f.rev());
    EXPECT_EQ(added["payload"]["paper"]["paper_id"], pick);
    // the response drawer already shows the paper in the thread
    bool shown = false;
    for (const auto& e : added["payload"]["drawer"])
        if (e["thread_id"] == "t5")
            for (const auto& p : e["papers"]) shown |= p["paper_id"] == pick;
    EXPECT_TRUE(shown);
    EXPECT_EQ(error_code(f.raw("POST", "/threads/t5/papers", {{"paper_id", pick}})), "DUPLICATE_PAPER");
    // a paper not in any set is fetched by id
    f.ok("POST", "/threads/t2/papers", {{"paper_id", "c24"}});
    EXPECT_EQ(error_code(f.raw("POST", "/threads/t2/papers", {{"paper_id", "zzz"}})), "FIXTURE_MISS");
}

TEST(Threads, OverviewAndExport) {
    Fixture f;
    EngineDriver d(f.engine);
    run_session(d);
    auto ov = f.ok("GET", "/threads/t9/overview");
    EXPECT_EQ(ov["payload"]["entries"].size(), 3u);
    EXPECT_EQ(ov["revision"], ov["payload"]["revision"]);
    EXPECT_EQ(ov["payload"]["recommendations"]["revision"], 11);  // refreshed before the add
    auto out = f.ok("GET", "/threads/t9/export");
    EXPECT_EQ(out["payload"]["text"], f.engine.export_outline("t9"));
    EXPECT_EQ(f.raw("GET", "/threads/nope/overview").status, 404);
}

TEST(Threads, RecommendationResponsesCarryTheirRevision) {
    Fixture f;
    EngineDriver d(f.engine);
    run_session(d);
    auto r = f.ok("POST", "/threads/t9/recommendations/refresh", json::object());
    EXPECT_EQ(r["revision"], f.rev());
    EXPECT_EQ(r["payload"]["revision"], f.rev());
    EXPECT_EQ(f.ok("GET", "/threads/t9/recommendations")["payload"], r["payload"]);
    // the added paper is now excluded
    for (const auto& item : r["payload"]["items"]) EXPECT_NE(item["paper"]["paperId"], "c07");
}

TEST(Threads, SuggestEndpointOnEmptyWorkspace) {
    Fixture f;
    EXPECT_TRUE(f.ok("POST", "/suggest", {{"text", "anything"}})["payload"].empty());
}

// -- envelope, revisions, errors ----------------------------------------------------

TEST(Envelope, StaleRevisionIs409AndNothingChanges) {
    Fixture f;
    f.ingest_paragraph();
    f.ok("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", core_rects()}});
    const auto file = home_workspace_file(f.home.path);
    const std::string before = read_file(file.string());
    const auto rev = f.rev();
    auto r = f.raw("POST", "/tank/commit", {{"mode", "NEW_THREAD"}, {"label", "x"}}, rev - 1);
    EXPECT_EQ(r.status, 409);
    EXPECT_EQ(error_code(r), "CONFLICT");
    EXPECT_EQ(r.json()["revision"], rev);
    EXPECT_EQ(read_file(file.string()), before);
    EXPECT_EQ(f.rev(), rev);
    f.ok("POST", "/tank/commit", {{"mode", "NEW_THREAD"}, {"label", "x"}}, rev);
}

TEST(Envelope, EveryMutationCarriesItsNewRevision) {
    Fixture f;
    ApiDriver d(f.api);  // checks +1 per mutation and sends the expected revision
    run_session(d);
    EXPECT_EQ(d.revision(), f.rev());
}

TEST(Envelope, SchemaAndRouting) {
    Fixture f;
    auto send = [&](const std::string& body) { return f.api.handle({"POST", "/threads", body, {}}); };
    EXPECT_EQ(send("not json").status, 422);
    EXPECT_EQ(send("[1]").status, 422);
    EXPECT_EQ(error_code(send(R"({"payload": {"label": "x"}})")), "SCHEMA_ERROR");
    EXPECT_EQ(send(R"({"schema": "threadloom.v0", "payload": {"label": "x"}})").status, 422);
    EXPECT_EQ(send(R"({"schema": "threadloom.v1", "payload": {}})").status, 422);
    EXPECT_EQ(send(R"({"schema": "threadloom.v1", "payload": {"label": 5}})").status, 422);
    EXPECT_EQ(send(R"({"schema": "threadloom.v1", "expected_revision": -1, "payload": {"label": "x"}})").status, 422);
    auto ok = send(R"({"schema": "threadloom.v1", "request_id": "abc", "payload": {"label": "x"}})");
    EXPECT_EQ(ok.status, 200);
    EXPECT_EQ(ok.json()["request_id"], "abc");
    EXPECT_EQ(ok.json()["schema"], kApiSchema);
    EXPECT_EQ(f.raw("GET", "/nowhere").status, 404);
    EXPECT_EQ(error_code(f.raw("GET", "/nowhere")), "NO_SUCH_ROUTE");
    EXPECT_EQ(f.raw("PATCH", "/documents").status, 405);
    EXPECT_EQ(f.rev(), 1u);
}

TEST(Envelope, StatusTable) {
    EXPECT_EQ(http_status("CONFLICT"), 409);
    EXPECT_EQ(http_status("SCHEMA_ERROR"), 422);
    EXPECT_EQ(http_status("CYCLE_ERROR"), 422);
    EXPECT_EQ(http_status("NO_SUCH_THREAD"), 404);
    EXPECT_EQ(http_status("PAYLOAD_TOO_LARGE"), 413);
    EXPECT_EQ(http_status("FIXTURE_MISS"), 500);
}

// -- fixture mode and concurrency -------------------------------------------------

TEST(FixtureMode, MissingFixtureFailsLoudly) {
    TempDir home, empty;
    auto config = demo_config(home.path);
    config.fixtures = empty.path;
    Fixture f(config);
    f.ingest_paragraph();
    const auto rev = f.rev();
    auto r = f.raw("POST", "/highlights", {{"doc_id", "doc-paragraph"}, {"rects", core_rects()}});
    EXPECT_EQ(r.status, 500);
    EXPECT_EQ(error_code(r), "FIXTURE_MISS");
    EXPECT_EQ(f.rev(), rev);
    EXPECT_TRUE(f.engine.snapshot()->tank.empty());
}

namespace {

// Fixture backend whose citation fetches wait until released.
class GatedBackend final : public MetadataBackend {
public:
    explicit GatedBackend(fs::path dir) : inner_(std::move(dir)), released_(release_.get_future().share()) {}

    BackendResponse fetch(const LookupQuery& q) override {
        if (q.kind == QueryKind::CitationsOf) {
            std::call_once(entered_once_, [&] { entered_.set_value(); });
            released_.wait();
        }
        return inner_.fetch(q);
    }
    std::string name() const override { return "gated"; }

    std::future<void> entered() { return entered_.get_future(); }
    void release() { release_.set_value(); }

private:
    FixtureBackend inner_;
    std::promise<void> release_;
    std::shared_future<void> released_;
    std::promise<void> entered_;
    std::once_flag entered_once_;
};

}  // namespace

TEST(Concurrency, RefreshDoesNotBlockDrawerMutations) {
    TempDir home;
    auto gated = std::make_shared<GatedBackend>(demo_dir() / "metadata");
    auto config = demo_config(home.path);
    config.backend = gated;
    Fixture f(config);
    EngineDriver d(f.engine);
    auto steps = demo_steps();
    steps.erase(steps.end() - 2, steps.end());
    run_session(d, steps);

    auto entered = gated->entered();
    auto refresh = std::async(std::launch::async, [&] { return f.raw("POST", "/threads/t9/recommendations/refresh"); });
    ASSERT_EQ(entered.wait_for(std::chrono::seconds(10)), std::future_status::ready);
    // refresh is parked inside a fetch; mutations still go through
    auto mutation = std::async(std::launch::async, [&] { return f.raw("POST", "/threads", {{"label", "During"}}); });
    ASSERT_EQ(mutation.wait_for(std::chrono::seconds(10)), std::future_status::ready);
    EXPECT_EQ(mutation.get().status, 200);
    EXPECT_EQ(f.ok("GET", "/workspace")["payload"]["drawer"].size(), 5u);
    gated->release();
    auto r = refresh.get();
    ASSERT_EQ(r.status, 200);
    // the set reflects the snapshot it was computed from
    EXPECT_EQ(r.json()["payload"]["revision"], 11);
    EXPECT_EQ(f.rev(), 12u);
}

TEST(Concurrency, ConcurrentMutationsAtOneRevisionExactlyOneWins) {
    Fixture f;
    const auto rev = f.rev();
    std::vector<std::future<ApiService::Response>> calls;
    for (int i = 0; i < 8; ++i)
        calls.push_back(std::async(std::launch::async, [&, i] {
            return f.raw("POST", "/threads", {{"label", "T" + std::to_string(i)}}, rev);
        }));
    int ok = 0, conflict = 0;
    for (auto& c : calls) {
        const auto r = c.get();
        ok += r.status == 200;
        conflict += r.status == 409;
    }
    EXPECT_EQ(ok, 1);
    EXPECT_EQ(conflict, 7);
    EXPECT_EQ(f.rev(), rev + 1);
}
