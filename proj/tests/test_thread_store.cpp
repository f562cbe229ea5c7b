#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "store_fuzz.hpp"
#include "support.hpp"
#include "threadloom/thread_store.hpp"

using namespace threadloom;

namespace {

CitationContext context_with_refs(int n, const std::string& text = "Context sentence one. Context two.") {
    CitationContext ctx;
    ctx.doc_id = "doc";
    ctx.core_sentence_indices = {1};
    ctx.context_sentence_indices = {0, 1, 2};
    ctx.text = text;
    for (int i = 1; i <= n; ++i) {
        ResolvedReference r;
        r.marker = InlineCitationMarker{1, {0, 3}, "[" + std::to_string(i) + "]", "b" + std::to_string(i)};
        r.style = MarkerStyle::NumericBracket;
        r.bib = BibEntry{"b" + std::to_string(i), "Ref " + std::to_string(i), "Ref " + std::to_string(i), 2019, std::nullopt};
        r.paper = PaperRecord{"P" + std::to_string(i), "Ref " + std::to_string(i), 2019, {}, {}, {}, {}};
        ctx.resolved.push_back(r);
    }
    return ctx;
}

ThreadStore logical_store() { return ThreadStore(Workspace::fresh(), logical_clock); }

}  // namespace

TEST(Workspace, FreshHasOnlyUnorganized) {
    auto store = logical_store();
    auto ws = store.snapshot();
    ASSERT_EQ(ws->threads.size(), 1u);
    EXPECT_EQ(ws->unorganized().thread_id, kUnorganizedId);
    EXPECT_EQ(ws->unorganized().label, "Unorganized Papers");
    EXPECT_EQ(ws->revision, 0u);
}

TEST(Tank, LoadSelectsAllAndReplaces) {
    auto store = logical_store();
    store.tank_load(context_with_refs(3));
    EXPECT_EQ(store.snapshot()->tank.selected.size(), 3u);
    store.tank_load(context_with_refs(0, "Other."));
    auto ws = store.snapshot();
    ASSERT_TRUE(ws->tank.context);
    EXPECT_EQ(ws->tank.context->text, "Other.");
    EXPECT_TRUE(ws->tank.selected.empty());
    store.tank_load(context_with_refs(2));
    EXPECT_EQ(store.snapshot()->tank.context->resolved.size(), 2u);
}

TEST(Tank, DeselectReselect) {
    auto store = logical_store();
    store.tank_load(context_with_refs(3));
    const auto before = store.snapshot()->tank;
    store.tank_deselect("b2");
    EXPECT_EQ(store.snapshot()->tank.selected, (std::set<std::string>{"b1", "b3"}));
    EXPECT_THROW(store.tank_deselect("b9"), NotInTank);
    store.tank_reselect("b2");
    EXPECT_EQ(store.snapshot()->tank, before);
}

TEST(Tank, DeselectOnEmptyTank) {
    auto store = logical_store();
    EXPECT_THROW(store.tank_deselect("b1"), NotInTank);
}

TEST(Commit, NewThreadWithClipAndSelectedRefs) {
    auto store = logical_store();
    store.tank_load(context_with_refs(3));
    store.tank_deselect("b3");
    auto r = store.commit_as_new_thread("GAMs");
    auto ws = store.snapshot();
    const Thread* t = ws->find_thread(r.thread_id);
    ASSERT_TRUE(t);
    EXPECT_EQ(t->label, "GAMs");
    EXPECT_EQ(t->clips.size(), 1u);
    EXPECT_EQ(t->papers.size(), 2u);
    EXPECT_TRUE(ws->tank.empty());
    EXPECT_EQ(t->clips[0].text, "Context sentence one. Context two.");
    EXPECT_EQ(t->papers[0].surface, "[1]");
    EXPECT_EQ(t->papers[0].source_context, t->clips[0].context_id);
    EXPECT_TRUE(ws->find_context(*t->clips[0].context_id));
}

TEST(Commit, EmptyTankWithLabel) {
    auto store = logical_store();
    auto r = store.commit_as_new_thread("Empty");
    const Thread* t = store.snapshot()->find_thread(r.thread_id);
    EXPECT_EQ(t->clips.size(), 0u);
    EXPECT_EQ(t->papers.size(), 0u);
    EXPECT_THROW(store.commit_as_new_thread("   "), EmptyCommit);
}

TEST(Commit, NewThreadGoesToDrawerTop) {
    auto store = logical_store();
    auto a = store.commit_as_new_thread("A").thread_id;
    auto b = store.commit_as_new_thread("B").thread_id;
    auto c = store.commit_as_new_thread("C").thread_id;
    EXPECT_EQ(drawer_order(*store.snapshot()), (std::vector<std::string>{kUnorganizedId, c, b, a}));
}

TEST(Commit, RefsDeduplicateByIdentity) {
    auto store = logical_store();
    store.tank_load(context_with_refs(1));
    auto t = store.commit_as_new_thread("T").thread_id;
    store.tank_load(context_with_refs(2));
    auto r = store.commit_refs_to(t);
    EXPECT_EQ(r.papers_added, 1u);
    EXPECT_EQ(r.duplicates, 1u);
    EXPECT_EQ(store.snapshot()->find_thread(t)->papers.size(), 2u);
    EXPECT_THROW(store.commit_refs_to("nope"), NoSuchThread);
}

TEST(Commit, LocalPapersDeduplicateByNormalizedTitle) {
    auto store = logical_store();
    auto t = store.create_thread("T");
    store.add_paper(t, local_paper("Deep Learning: A Survey"));
    EXPECT_THROW(store.add_paper(t, local_paper("deep learning -- a survey")), DuplicatePaper);
}

TEST(Commit, ClipToNestedThreadReordersTopLevelAncestor) {
    auto store = logical_store();
    auto a = store.create_thread("A");
    auto a1 = store.create_thread("A1", a);
    auto b = store.create_thread("B");
    auto c = store.create_thread("C");
    EXPECT_EQ(drawer_order(*store.snapshot()), (std::vector<std::string>{kUnorganizedId, c, b, a}));
    store.tank_load(context_with_refs(0));
    store.commit_clip_to(a1);
    auto ws = store.snapshot();
    EXPECT_EQ(drawer_order(*ws), (std::vector<std::string>{kUnorganizedId, a, c, b}));
    EXPECT_EQ(ws->find_thread(a)->children.size(), 1u);
    EXPECT_EQ(ws->find_thread(a1)->clips.size(), 1u);
    EXPECT_FALSE(ws->tank.empty());
}

TEST(Commit, RenameAndMoveDoNotReorder) {
    auto store = logical_store();
    auto a = store.create_thread("A");
    auto b = store.create_thread("B");
    store.rename_thread(a, "A renamed");
    EXPECT_EQ(drawer_order(*store.snapshot()), (std::vector<std::string>{kUnorganizedId, b, a}));
}

TEST(Commit, NoBibMatchReferencesAreSkipped) {
    auto store = logical_store();
    auto ctx = context_with_refs(1);
    ResolvedReference missing;
    missing.marker = InlineCitationMarker{1, {5, 9}, "[12]", "12"};
    missing.style = MarkerStyle::NumericBracket;
    missing.reason = kNoBibMatch;
    ctx.resolved.push_back(missing);
    store.tank_load(ctx);
    EXPECT_EQ(store.snapshot()->tank.selected.size(), 2u);
    auto r = store.commit_as_new_thread("T");
    EXPECT_EQ(r.papers_added, 1u);
    EXPECT_EQ(r.skipped, (std::vector<std::string>{"12"}));
}

TEST(Commit, UnresolvedLookupBecomesLocalPaper) {
    auto store = logical_store();
    auto ctx = context_with_refs(1);
    ctx.resolved[0].paper.reset();
    ctx.resolved[0].reason = kLookupFailed;
    store.tank_load(ctx);
    auto r = store.commit_as_new_thread("T");
    const auto& p = store.snapshot()->find_thread(r.thread_id)->papers.at(0);
    EXPECT_TRUE(p.local);
    EXPECT_EQ(p.title, "Ref 1");
    EXPECT_EQ(p.surface, "[1]");
}

TEST(Commit, ClipToUnorganizedRejected) {
    auto store = logical_store();
    store.tank_load(context_with_refs(1));
    EXPECT_THROW(store.commit_clip_to(kUnorganizedId), InvalidTarget);
    EXPECT_NO_THROW(store.commit_refs_to(kUnorganizedId));
}

TEST(Commit, ImageClip) {
    auto store = logical_store();
    Highlight h{"doc", HighlightKind::Area, {{0, Rect{1, 2, 3, 4}}}, 0};
    store.tank_load_image(capture_area(h, "\x89PNG\r\n\x1a\nabc"));
    auto r = store.commit_as_new_thread("");
    const Thread* t = store.snapshot()->find_thread(r.thread_id);
    ASSERT_EQ(t->clips.size(), 1u);
    EXPECT_EQ(t->clips[0].kind, ClipKind::Image);
    EXPECT_EQ(t->label, "Image from doc p.1");
    EXPECT_EQ(*t->clips[0].image, "\x89PNG\r\n\x1a\nabc");
}

TEST(Move, NestAndCycle) {
    auto store = logical_store();
    auto a = store.create_thread("A");
    auto b = store.create_thread("B");
    store.move_thread(b, a);
    auto ws = store.snapshot();
    ASSERT_EQ(ws->find_thread(a)->children.size(), 1u);
    EXPECT_EQ(ws->find_thread(a)->children[0].thread_id, b);
    EXPECT_THROW(store.move_thread(a, b), CycleError);
    EXPECT_THROW(store.move_thread(a, a), CycleError);
    EXPECT_THROW(store.move_thread(kUnorganizedId, a), CannotMoveUnorganized);
    EXPECT_THROW(store.move_thread(a, std::string(kUnorganizedId)), InvalidTarget);
    store.move_thread(b, std::nullopt);
    EXPECT_EQ(store.snapshot()->threads.size(), 3u);
}

TEST(Move, PositionAmongSiblings) {
    auto store = logical_store();
    auto p = store.create_thread("P");
    auto x = store.create_thread("X", p);
    auto y = store.create_thread("Y", p);
    auto z = store.create_thread("Z");
    store.move_thread(z, p, 0);
    const auto& kids = store.snapshot()->find_thread(p)->children;
    ASSERT_EQ(kids.size(), 3u);
    EXPECT_EQ(kids[0].thread_id, z);
    EXPECT_EQ(kids[1].thread_id, x);
    EXPECT_EQ(kids[2].thread_id, y);
}

TEST(Move, PapersBetweenThreads) {
    auto store = logical_store();
    auto a = store.create_thread("A");
    store.register_open_paper(paper_from_record(PaperRecord{"P1", "One", 2020, {}, {}, {}, {}}));
    store.move_paper("P1", kUnorganizedId, a);
    auto ws = store.snapshot();
    EXPECT_TRUE(ws->unorganized().papers.empty());
    EXPECT_EQ(ws->find_thread(a)->papers.size(), 1u);
    EXPECT_THROW(store.move_paper("P9", a, kUnorganizedId), NoSuchPaper);
}

TEST(Register, OpenPaperRules) {
    auto store = logical_store();
    auto one = paper_from_record(PaperRecord{"P1", "One", 2020, {}, {}, {}, {}});
    auto two = paper_from_record(PaperRecord{"P2", "Two", 2021, {}, {}, {}, {}});
    EXPECT_TRUE(store.register_open_paper(one).added);
    EXPECT_EQ(store.snapshot()->unorganized().papers.size(), 1u);
    EXPECT_EQ(store.snapshot()->current_paper, one.identity());

    auto t = store.create_thread("T");
    store.move_paper("P1", kUnorganizedId, t);
    EXPECT_FALSE(store.register_open_paper(one).added);  // already filed in a thread
    EXPECT_TRUE(store.snapshot()->unorganized().papers.empty());

    store.register_open_paper(two);
    EXPECT_EQ(store.snapshot()->current_paper, two.identity());
}

TEST(Delete, NeedsConfirmationWithChildren) {
    auto store = logical_store();
    auto a = store.create_thread("A");
    store.create_thread("A1", a);
    store.create_thread("A2", a);
    const auto rev = store.revision();
    EXPECT_THROW(store.delete_thread(a, false), ConfirmationRequired);
    EXPECT_EQ(store.revision(), rev);
    store.delete_thread(a, true);
    EXPECT_EQ(store.snapshot()->threads.size(), 1u);
    EXPECT_THROW(store.delete_thread(kUnorganizedId, true), InvalidTarget);
    EXPECT_THROW(store.delete_thread("t99", true), NoSuchThread);
}

TEST(Clips, EditAndDelete) {
    auto store = logical_store();
    store.tank_load(context_with_refs(0));
    auto r = store.commit_as_new_thread("T");
    store.edit_clip(*r.clip_id, "Edited text.");
    EXPECT_EQ(store.snapshot()->find_thread(r.thread_id)->clips[0].text, "Edited text.");
    EXPECT_THROW(store.edit_clip(*r.clip_id, " "), InvalidArgument);
    store.delete_clip(*r.clip_id);
    EXPECT_TRUE(store.snapshot()->find_thread(r.thread_id)->clips.empty());
    EXPECT_THROW(store.delete_clip("c99"), NoSuchClip);
}

TEST(Revision, BumpsByOneAndConflictsOnStale) {
    auto store = logical_store();
    EXPECT_EQ(store.revision(), 0u);
    store.create_thread("A", std::nullopt, 0);
    EXPECT_EQ(store.revision(), 1u);
    EXPECT_THROW(store.create_thread("B", std::nullopt, 0), ConflictError);
    EXPECT_EQ(store.revision(), 1u);
    EXPECT_EQ(store.snapshot()->threads.size(), 2u);
    try {
        store.tank_clear(7);
    } catch (const ConflictError& e) {
        EXPECT_EQ(e.code(), "CONFLICT");
    }
}

TEST(Revision, FirstWriterWinsUnderConcurrency) {
    auto store = logical_store();
    std::atomic<int> ok{0}, conflicts{0};
    std::vector<std::thread> writers;
    for (int i = 0; i < 8; ++i)
        writers.emplace_back([&, i] {
            try {
                store.create_thread("W" + std::to_string(i), std::nullopt, 0);
                ++ok;
            } catch (const ConflictError&) {
                ++conflicts;
            }
        });
    for (auto& w : writers) w.join();
    EXPECT_EQ(ok.load(), 1);
    EXPECT_EQ(conflicts.load(), 7);
    EXPECT_EQ(store.revision(), 1u);
}

TEST(Persist, RoundTripIsStructurallyEqual) {
    testsupport::TempDir dir;
    auto store = ThreadStore::open(dir.path, logical_clock);
    store.tank_load(context_with_refs(2), {{0, Rect{1, 2, 3, 4}}});
    auto t = store.commit_as_new_thread("T").thread_id;
    store.create_thread("Child", t);
    Highlight h{"doc", HighlightKind::Area, {{0, Rect{1, 2, 3, 4}}}, 0};
    store.tank_load_image(capture_area(h, std::string("\xFF\xD8\xFF") + std::string(100, '\0')));
    store.commit_clip_to(t);
    store.register_open_paper(local_paper("A Local Paper", 2001));

    auto reloaded = ThreadStore::open(dir.path, logical_clock);
    EXPECT_EQ(*reloaded.snapshot(), *store.snapshot());
    EXPECT_EQ(serialize_workspace(*reloaded.snapshot()), testsupport::read_file((dir.path / "workspace.json").string()));
}

TEST(Persist, ImagesGarbageCollected) {
    testsupport::TempDir dir;
    auto store = ThreadStore::open(dir.path, logical_clock);
    Highlight h{"doc", HighlightKind::Area, {{0, Rect{1, 2, 3, 4}}}, 0};
    store.tank_load_image(capture_area(h, "first"));
    EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path / "images"), {}), 1);
    store.tank_clear();
    EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path / "images"), {}), 0);
}

TEST(Persist, LoadValidatesInvariants) {
    testsupport::TempDir dir;
    {
        auto store = ThreadStore::open(dir.path, logical_clock);
        store.create_thread("A");
    }
    auto text = testsupport::read_file((dir.path / "workspace.json").string());
    auto j = nlohmann::json::parse(text);
    j["threads"][1]["thread_id"] = "unorganized";
    std::ofstream(dir.path / "workspace.json") << j.dump();
    EXPECT_THROW(ThreadStore::open(dir.path, logical_clock), InvariantError);
    std::ofstream(dir.path / "workspace.json") << "{broken";
    EXPECT_THROW(ThreadStore::open(dir.path, logical_clock), StorageError);
}

TEST(Persist, FailedMutationLeavesFileUntouched) {
    testsupport::TempDir dir;
    auto store = ThreadStore::open(dir.path, logical_clock);
    store.create_thread("A");
    const auto before = testsupport::read_file((dir.path / "workspace.json").string());
    EXPECT_THROW(store.create_thread("B", std::nullopt, 0), ConflictError);
    EXPECT_THROW(store.move_thread("t1", std::string("t1")), CycleError);
    EXPECT_EQ(testsupport::read_file((dir.path / "workspace.json").string()), before);
}

TEST(Outline, GoldenFixtureWorkspace) {
    auto ws = workspace_from_json(nlohmann::json::parse(testsupport::fixture("workspace_3threads.json")),
                                  [](const std::string&) { return std::make_shared<const std::string>(); });
    validate_workspace(ws);
    EXPECT_EQ(export_outline(ws), testsupport::read_file(testsupport::golden_path("outline_3threads.txt")));
}

TEST(Outline, UnknownThread) {
    EXPECT_THROW(export_outline(Workspace::fresh(), std::string("t5")), NoSuchThread);
}

TEST(StoreProperties, FuzzPreservesInvariants) {
    std::mt19937_64 rng(200);
    auto store = logical_store();
    std::uint64_t last_rev = 0;
    for (int i = 0; i < 2000; ++i) {
        const auto before = store.snapshot();
        bool moved = false;
        const bool applied = testsupport::random_op(store, rng, moved);
        const auto after = store.snapshot();
        if (applied) {
            ASSERT_EQ(after->revision, last_rev + 1) << "op " << i;
        } else {
            ASSERT_EQ(*after, *before) << "op " << i;
        }
        last_rev = after->revision;
        ASSERT_NO_THROW(validate_workspace(*after)) << "op " << i;
        if (moved && applied) {
            auto a = count_items(after->threads), b = count_items(before->threads);
            ASSERT_EQ(a, b) << "op " << i;
        }
    }
}
