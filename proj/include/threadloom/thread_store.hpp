#pragma once

// Persistent workspace of threads, clips and paper references, with the
// holding tank that stages a highlight before it is committed.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "threadloom/clock.hpp"
#include "threadloom/detail/text.hpp"
#include "threadloom/doc_model.hpp"
#include "threadloom/errors.hpp"
#include "threadloom/highlight_linker.hpp"
#include "threadloom/paper_record.hpp"

namespace threadloom {

inline constexpr const char* kUnorganizedId = "unorganized";
inline constexpr const char* kUnorganizedLabel = "Unorganized Papers";
inline constexpr int kWorkspaceVersion = 1;


struct PaperRef {
    std::string paper_id;  // external id, or "local:<hash>" surrogate
    bool local = false;
    std::string title;
    int year = 0;
    std::optional<std::string> tldr;
    std::optional<std::string> url;
    std::optional<std::string> source_context;
    std::optional<std::string> surface;
    std::optional<std::string> doc_id;
    std::int64_t added_at = 0;

    // External id when there is one, normalized title otherwise.
    std::string identity() const {
        return local ? "title:" + detail::normalize_title(title) : "id:" + paper_id;
    }

    friend bool operator==(const PaperRef&, const PaperRef&) = default;
};

inline PaperRef local_paper(const std::string& title, int year = 0) {
    const std::string norm = detail::normalize_title(title);
    if (norm.empty()) throw InvalidArgument("paper needs an external id or a title");
    PaperRef p;
    p.paper_id = "local:" + detail::sha256_hex(norm).substr(0, 12);
    p.local = true;
    p.title = detail::trim(title);
    p.year = year;
    return p;
}

inline PaperRef paper_from_record(const PaperRecord& r) {
    PaperRef p;
    p.paper_id = r.paper_id;
    p.title = r.title;
    p.year = r.year;
    p.tldr = r.tldr;
    p.url = r.url;
    return p;
}

enum class ClipKind { Text, Image };

inline const char* to_string(ClipKind k) { return k == ClipKind::Text ? "TEXT" : "IMAGE"; }

struct ClipSource {
    std::string doc_id;
    std::optional<std::size_t> page;
    std::vector<PageRect> rects;  // document space
    std::vector<std::size_t> sentence_indices;

    friend bool operator==(const ClipSource&, const ClipSource&) = default;
};

struct Clip {
    std::string clip_id;
    ClipKind kind = ClipKind::Text;
    std::string text;  // TEXT payload
    std::string mime;  // IMAGE payload fields
    std::string image_sha256;
    std::shared_ptr<const std::string> image;
    ClipSource source;
    std::optional<std::string> context_id;
    std::int64_t created_at = 0;

    friend bool operator==(const Clip& a, const Clip& b) {
        const bool same_image = (!a.image && !b.image) || (a.image && b.image && *a.image == *b.image);
        return a.clip_id == b.clip_id && a.kind == b.kind && a.text == b.text && a.mime == b.mime &&
               a.image_sha256 == b.image_sha256 && same_image && a.source == b.source &&
               a.context_id == b.context_id && a.created_at == b.created_at;
    }
};

struct Thread {
    std::string thread_id;
    std::string label;
    std::vector<Thread> children;
    std::vector<Clip> clips;
    std::vector<PaperRef> papers;
    std::int64_t created_at = 0;
    std::int64_t last_additive_change = 0;

    const PaperRef* find_paper_identity(const std::string& identity) const {
        for (const auto& p : papers)
            if (p.identity() == identity) return &p;
        return nullptr;
    }

    friend bool operator==(const Thread&, const Thread&) = default;
};

// A committed citation context, kept so paper references can point back to
// the passage they were extracted from.
struct ContextRecord {
    std::string context_id;
    std::string doc_id;
    std::vector<std::size_t> core_sentence_indices;
    std::vector<std::size_t> context_sentence_indices;
    std::string text;
    std::int64_t created_at = 0;

    friend bool operator==(const ContextRecord&, const ContextRecord&) = default;
};

struct TankImage {
    std::string doc_id;
    std::size_t page = 0;
    Rect rect;
    std::string mime;
    std::string sha256;
    std::shared_ptr<const std::string> bytes;

    friend bool operator==(const TankImage& a, const TankImage& b) {
        return a.doc_id == b.doc_id && a.page == b.page && a.rect == b.rect && a.mime == b.mime &&
               a.sha256 == b.sha256 && ((!a.bytes && !b.bytes) || (a.bytes && b.bytes && *a.bytes == *b.bytes));
    }
};

struct HoldingTank {
    std::string context_id;
    std::optional<CitationContext> context;
    std::vector<PageRect> rects;     // the highlight, document space
    std::set<std::string> selected;  // keys of selected resolved references
    std::optional<TankImage> image;

    bool empty() const { return !context && !image; }

    friend bool operator==(const HoldingTank&, const HoldingTank&) = default;
};

struct Workspace {
    int version = kWorkspaceVersion;
    std::string workspace_id = "default";
    std::uint64_t revision = 0;
    std::int64_t clock = 0;  // highest timestamp handed out
    std::uint64_t next_id = 1;
    std::optional<std::string> current_paper;  // PaperRef::identity()
    std::vector<Thread> threads;              // [0] is Unorganized, the rest in drawer order
    std::vector<ContextRecord> contexts;
    HoldingTank tank;

    static Workspace fresh(std::string workspace_id = "default") {
        Workspace ws;
        ws.workspace_id = std::move(workspace_id);
        Thread u;
        u.thread_id = kUnorganizedId;
        u.label = kUnorganizedLabel;
        ws.threads.push_back(std::move(u));
        return ws;
    }

    const Thread& unorganized() const { return threads.front(); }

    const Thread* find_thread(const std::string& id) const { return find_in(threads, id); }
    Thread* find_thread(const std::string& id) { return const_cast<Thread*>(find_in(threads, id)); }

    const ContextRecord* find_context(const std::string& id) const {
        for (const auto& c : contexts)
            if (c.context_id == id) return &c;
        return nullptr;
    }

    friend bool operator==(const Workspace&, const Workspace&) = default;

private:
    static const Thread* find_in(const std::vector<Thread>& list, const std::string& id) {
        for (const auto& t : list) {
            if (t.thread_id == id) return &t;
            if (const Thread* hit = find_in(t.children, id)) return hit;
        }
        return nullptr;
    }
};

// Forest helpers -------------------------------------------------------------

template <class F>
void for_each_thread(const std::vector<Thread>& list, F&& f, std::size_t depth = 0) {
    for (const auto& t : list) {
        f(t, depth);
        for_each_thread(t.children, f, depth + 1);
    }
}

inline std::int64_t subtree_latest(const Thread& t) {
    std::int64_t latest = t.last_additive_change;
    for (const auto& c : t.children) latest = std::max(latest, subtree_latest(c));
    return latest;
}

// Unorganized first, then top-level threads by most recent additive change
// anywhere in their subtree; thread id breaks ties.
inline void sort_drawer(Workspace& ws) {
    std::stable_sort(ws.threads.begin() + 1, ws.threads.end(), [](const Thread& a, const Thread& b) {
        const auto la = subtree_latest(a), lb = subtree_latest(b);
        if (la != lb) return la > lb;
        return a.thread_id < b.thread_id;
    });
}

inline std::vector<std::string> drawer_order(const Workspace& ws) {
    std::vector<std::string> ids;
    for (const auto& t : ws.threads) ids.push_back(t.thread_id);
    return ids;
}

struct ItemCounts {
    std::size_t threads = 0;
    std::size_t clips = 0;
    std::size_t papers = 0;

    friend bool operator==(const ItemCounts&, const ItemCounts&) = default;
};

inline ItemCounts count_items(const std::vector<Thread>& list) {
    ItemCounts c;
    for_each_thread(list, [&](const Thread& t, std::size_t) {
        ++c.threads;
        c.clips += t.clips.size();
        c.papers += t.papers.size();
    });
    return c;
}

inline bool contains_paper(const Workspace& ws, const std::string& identity) {
    bool found = false;
    for_each_thread(ws.threads, [&](const Thread& t, std::size_t) { found |= t.find_paper_identity(identity) != nullptr; });
    return found;
}

namespace detail::ws {

// Parent list and position of `id` within it.
struct Location {
    std::vector<Thread>* siblings = nullptr;
    std::size_t position = 0;
    Thread* parent = nullptr;
};

inline std::optional<Location> locate(std::vector<Thread>& list, const std::string& id, Thread* parent = nullptr) {
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (list[i].thread_id == id) return Location{&list, i, parent};
        if (auto hit = locate(list[i].children, id, &list[i])) return hit;
    }
    return std::nullopt;
}

inline bool subtree_contains(const Thread& t, const std::string& id) {
    if (t.thread_id == id) return true;
    for (const auto& c : t.children)
        if (subtree_contains(c, id)) return true;
    return false;
}

inline std::string clean_label(const std::string& label) {
    std::string l = collapse_whitespace(label);
    if (l.empty()) throw InvalidArgument("thread label must not be empty");
    return l;
}

// Label for a thread committed without one: the opening words of the context.
inline std::string derive_label(const HoldingTank& tank) {
    if (tank.image) return "Image from " + tank.image->doc_id + " p." + std::to_string(tank.image->page + 1);
    std::istringstream words(tank.context ? tank.context->text : std::string());
    std::string w, out;
    for (int n = 0; n < 8 && words >> w; ++n) out += (out.empty() ? "" : " ") + w;
    return out.empty() ? "Untitled thread" : out;
}

inline std::string strip_printed_label(const std::string& raw) {
    static const std::regex re(R"(^\s*\[?\s*\d{1,4}\s*[\].)]\s*)");
    return trim(std::regex_replace(raw, re, "", std::regex_constants::format_first_only));
}

// Paper reference for a tank entry, or nullopt when there is neither an id
// nor a title to identify it by.
inline std::optional<PaperRef> paper_for(const ResolvedReference& r) {
    std::optional<PaperRef> p;
    if (r.paper) {
        p = paper_from_record(*r.paper);
        if (p->title.empty() && r.bib && r.bib->title) p->title = *r.bib->title;
        if (p->year == 0 && r.bib && r.bib->year) p->year = *r.bib->year;
    } else if (r.bib) {
        const std::string title = r.bib->title ? *r.bib->title : strip_printed_label(r.bib->raw_text);
        if (r.bib->resolved_paper_id) {
            p = PaperRef{};
            p->paper_id = *r.bib->resolved_paper_id;
            p->title = title;
            p->year = r.bib->year.value_or(0);
        } else if (!normalize_title(title).empty()) {
            p = local_paper(title, r.bib->year.value_or(0));
        }
    }
    if (p) p->surface = r.marker.surface;
    return p;
}

}  // namespace detail::ws

// Serialization ----------------------------------------------------------------

namespace detail::ws {

using ojson = nlohmann::ordered_json;
using nlohmann::json;

inline ojson rect_json(const PageRect& r) {
    return ojson::array({r.page, r.rect.x, r.rect.y, r.rect.width, r.rect.height});
}

inline PageRect rect_from(const json& j) {
    if (!j.is_array() || j.size() != 5) throw StorageError("workspace: rect must be [page, x, y, w, h]");
    return {j[0].get<std::size_t>(), Rect{j[1].get<double>(), j[2].get<double>(), j[3].get<double>(), j[4].get<double>()}};
}

template <class T>
void put_optional(ojson& j, const char* key, const std::optional<T>& v) {
    if (v) j[key] = *v;
}

template <class T>
std::optional<T> get_optional(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<T>();
}

inline ojson paper_json(const PaperRef& p) {
    ojson j;
    j["paper_id"] = p.paper_id;
    if (p.local) j["local"] = true;
    j["title"] = p.title;
    j["year"] = p.year;
    put_optional(j, "tldr", p.tldr);
    put_optional(j, "url", p.url);
    put_optional(j, "source_context", p.source_context);
    put_optional(j, "surface", p.surface);
    put_optional(j, "doc_id", p.doc_id);
    j["added_at"] = p.added_at;
    return j;
}

inline PaperRef paper_from(const json& j) {
    PaperRef p;
    p.paper_id = j.at("paper_id").get<std::string>();
    p.local = j.value("local", false);
    p.title = j.value("title", "");
    p.year = j.value("year", 0);
    p.tldr = get_optional<std::string>(j, "tldr");
    p.url = get_optional<std::string>(j, "url");
    p.source_context = get_optional<std::string>(j, "source_context");
    p.surface = get_optional<std::string>(j, "surface");
    p.doc_id = get_optional<std::string>(j, "doc_id");
    p.added_at = j.value("added_at", std::int64_t{0});
    return p;
}

inline ojson source_json(const ClipSource& s) {
    ojson j;
    j["doc_id"] = s.doc_id;
    put_optional(j, "page", s.page);
    j["rects"] = ojson::array();
    for (const auto& r : s.rects) j["rects"].push_back(rect_json(r));
    j["sentences"] = s.sentence_indices;
    return j;
}

inline ClipSource source_from(const json& j) {
    ClipSource s;
    s.doc_id = j.value("doc_id", "");
    s.page = get_optional<std::size_t>(j, "page");
    for (const auto& r : j.value("rects", json::array())) s.rects.push_back(rect_from(r));
    s.sentence_indices = j.value("sentences", std::vector<std::size_t>{});
    return s;
}

inline ojson clip_json(const Clip& c) {
    ojson j;
    j["clip_id"] = c.clip_id;
    j["kind"] = to_string(c.kind);
    if (c.kind == ClipKind::Text) {
        j["text"] = c.text;
    } else {
        j["image"] = {{"sha256", c.image_sha256},
                      {"mime", c.mime},
                      {"bytes", c.image ? c.image->size() : std::size_t{0}}};
    }
    j["source"] = source_json(c.source);
    put_optional(j, "context_id", c.context_id);
    j["created_at"] = c.created_at;
    return j;
}

using ImageLoader = std::function<std::shared_ptr<const std::string>(const std::string& sha256)>;

inline Clip clip_from(const json& j, const ImageLoader& load_image) {
    Clip c;
    c.clip_id = j.at("clip_id").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "TEXT") {
        c.kind = ClipKind::Text;
        c.text = j.value("text", "");
    } else if (kind == "IMAGE") {
        c.kind = ClipKind::Image;
        const auto& img = j.at("image");
        c.image_sha256 = img.at("sha256").get<std::string>();
        c.mime = img.value("mime", "application/octet-stream");
        c.image = load_image(c.image_sha256);
    } else {
        throw StorageError("workspace: unknown clip kind '" + kind + "'");
    }
    c.source = source_from(j.at("source"));
    c.context_id = get_optional<std::string>(j, "context_id");
    c.created_at = j.value("created_at", std::int64_t{0});
    return c;
}

inline ojson thread_json(const Thread& t) {
    ojson j;
    j["thread_id"] = t.thread_id;
    j["label"] = t.label;
    j["created_at"] = t.created_at;
    j["last_additive_change"] = t.last_additive_change;
    j["clips"] = ojson::array();
    for (const auto& c : t.clips) j["clips"].push_back(clip_json(c));
    j["papers"] = ojson::array();
    for (const auto& p : t.papers) j["papers"].push_back(paper_json(p));
    j["children"] = ojson::array();
    for (const auto& c : t.children) j["children"].push_back(thread_json(c));
    return j;
}

inline Thread thread_from(const json& j, const ImageLoader& load_image) {
    Thread t;
    t.thread_id = j.at("thread_id").get<std::string>();
    t.label = j.at("label").get<std::string>();
    t.created_at = j.value("created_at", std::int64_t{0});
    t.last_additive_change = j.value("last_additive_change", std::int64_t{0});
    for (const auto& c : j.value("clips", json::array())) t.clips.push_back(clip_from(c, load_image));
    for (const auto& p : j.value("papers", json::array())) t.papers.push_back(paper_from(p));
    for (const auto& c : j.value("children", json::array())) t.children.push_back(thread_from(c, load_image));
    return t;
}

inline ojson context_record_json(const ContextRecord& c) {
    ojson j;
    j["context_id"] = c.context_id;
    j["doc_id"] = c.doc_id;
    j["core"] = c.core_sentence_indices;
    j["context"] = c.context_sentence_indices;
    j["text"] = c.text;
    j["created_at"] = c.created_at;
    return j;
}

inline ContextRecord context_record_from(const json& j) {
    ContextRecord c;
    c.context_id = j.at("context_id").get<std::string>();
    c.doc_id = j.value("doc_id", "");
    c.core_sentence_indices = j.value("core", std::vector<std::size_t>{});
    c.context_sentence_indices = j.value("context", std::vector<std::size_t>{});
    c.text = j.value("text", "");
    c.created_at = j.value("created_at", std::int64_t{0});
    return c;
}

inline ojson marker_json(const InlineCitationMarker& m) {
    ojson j;
    j["sentence_index"] = m.sentence_index;
    j["char_range"] = {m.char_range.begin, m.char_range.end};
    j["surface"] = m.surface;
    j["bib_key"] = m.bib_key;
    return j;
}

inline InlineCitationMarker marker_from(const json& j) {
    InlineCitationMarker m;
    m.sentence_index = j.at("sentence_index").get<std::size_t>();
    const auto& r = j.at("char_range");
    m.char_range = {r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()};
    m.surface = j.value("surface", "");
    m.bib_key = j.value("bib_key", "");
    return m;
}

inline ojson bib_json(const BibEntry& b) {
    ojson j;
    j["bib_key"] = b.bib_key;
    j["raw_text"] = b.raw_text;
    put_optional(j, "title", b.title);
    put_optional(j, "year", b.year);
    put_optional(j, "resolved_paper_id", b.resolved_paper_id);
    return j;
}

inline BibEntry bib_from(const json& j) {
    BibEntry b;
    b.bib_key = j.at("bib_key").get<std::string>();
    b.raw_text = j.value("raw_text", "");
    b.title = get_optional<std::string>(j, "title");
    b.year = get_optional<int>(j, "year");
    b.resolved_paper_id = get_optional<std::string>(j, "resolved_paper_id");
    return b;
}

inline MarkerStyle style_from(const std::string& s) {
    for (auto st : {MarkerStyle::NumericBracket, MarkerStyle::NumericRange, MarkerStyle::NumericList,
                    MarkerStyle::AuthorYear, MarkerStyle::Unknown})
        if (s == to_string(st)) return st;
    throw StorageError("workspace: unknown marker style '" + s + "'");
}

inline PaperRecord record_from(const json& j) {
    PaperRecord r = paper_record_from_json(j);
    for (const auto& c : j.value("citationContexts", json::array()))
        r.citation_contexts.push_back({c.value("citedPaperId", ""), c.value("snippet", ""), c.value("intent", "")});
    return r;
}

inline ojson record_json(const PaperRecord& r) {
    ojson j = to_json(r);
    if (!r.citation_contexts.empty()) {
        j["citationContexts"] = ojson::array();
        for (const auto& c : r.citation_contexts)
            j["citationContexts"].push_back({{"citedPaperId", c.cited_paper_id}, {"snippet", c.snippet}, {"intent", c.intent}});
    }
    return j;
}

}  // namespace detail::ws

inline nlohmann::ordered_json to_json(const PaperRef& p) { return detail::ws::paper_json(p); }
inline nlohmann::ordered_json to_json(const Clip& c) { return detail::ws::clip_json(c); }
inline nlohmann::ordered_json to_json(const Thread& t) { return detail::ws::thread_json(t); }
inline nlohmann::ordered_json to_json(const ContextRecord& c) { return detail::ws::context_record_json(c); }

inline nlohmann::ordered_json to_json(const ResolvedReference& r) {
    using namespace detail::ws;
    ojson j;
    j["key"] = r.key();
    j["marker"] = marker_json(r.marker);
    j["style"] = to_string(r.style);
    j["bib"] = r.bib ? bib_json(*r.bib) : ojson(nullptr);
    j["paper"] = r.paper ? record_json(*r.paper) : ojson(nullptr);
    j["reason"] = r.reason ? ojson(*r.reason) : ojson(nullptr);
    if (r.ambiguous) {
        j["ambiguous"] = true;
        j["candidates"] = r.candidate_keys;
    }
    return j;
}

inline ResolvedReference resolved_reference_from_json(const nlohmann::json& j) {
    using namespace detail::ws;
    ResolvedReference r;
    r.marker = marker_from(j.at("marker"));
    r.style = style_from(j.at("style").get<std::string>());
    if (auto b = j.find("bib"); b != j.end() && !b->is_null()) r.bib = bib_from(*b);
    if (auto p = j.find("paper"); p != j.end() && !p->is_null()) r.paper = record_from(*p);
    r.reason = get_optional<std::string>(j, "reason");
    r.ambiguous = j.value("ambiguous", false);
    r.candidate_keys = j.value("candidates", std::vector<std::string>{});
    return r;
}

inline nlohmann::ordered_json to_json(const CitationContext& c) {
    using namespace detail::ws;
    ojson j;
    j["doc_id"] = c.doc_id;
    j["core"] = c.core_sentence_indices;
    j["context"] = c.context_sentence_indices;
    j["text"] = c.text;
    j["found_markers"] = ojson::array();
    for (const auto& m : c.found_markers) j["found_markers"].push_back(marker_json(m));
    j["resolved"] = ojson::array();
    for (const auto& r : c.resolved) j["resolved"].push_back(to_json(r));
    if (c.truncated) j["truncated"] = true;
    return j;
}

inline CitationContext citation_context_from_json(const nlohmann::json& j) {
    using namespace detail::ws;
    CitationContext c;
    c.doc_id = j.at("doc_id").get<std::string>();
    c.core_sentence_indices = j.at("core").get<std::vector<std::size_t>>();
    c.context_sentence_indices = j.at("context").get<std::vector<std::size_t>>();
    c.text = j.value("text", "");
    for (const auto& m : j.value("found_markers", json::array())) c.found_markers.push_back(marker_from(m));
    for (const auto& r : j.value("resolved", json::array())) c.resolved.push_back(resolved_reference_from_json(r));
    c.truncated = j.value("truncated", false);
    return c;
}

inline nlohmann::ordered_json to_json(const HoldingTank& t) {
    using namespace detail::ws;
    if (t.empty()) return nullptr;
    ojson j;
    if (t.context) {
        j["context_id"] = t.context_id;
        j["context"] = to_json(*t.context);
        j["rects"] = ojson::array();
        for (const auto& r : t.rects) j["rects"].push_back(rect_json(r));
        // selection listed in resolved order
        j["selected"] = ojson::array();
        for (const auto& r : t.context->resolved)
            if (t.selected.count(r.key())) j["selected"].push_back(r.key());
    }
    if (t.image) {
        j["image"] = {{"doc_id", t.image->doc_id},
                      {"page", t.image->page},
                      {"rect", {t.image->rect.x, t.image->rect.y, t.image->rect.width, t.image->rect.height}},
                      {"mime", t.image->mime},
                      {"sha256", t.image->sha256},
                      {"bytes", t.image->bytes ? t.image->bytes->size() : std::size_t{0}}};
    }
    return j;
}

inline HoldingTank holding_tank_from_json(const nlohmann::json& j, const detail::ws::ImageLoader& load_image) {
    using namespace detail::ws;
    HoldingTank t;
    if (j.is_null()) return t;
    if (auto c = j.find("context"); c != j.end()) {
        t.context_id = j.value("context_id", "");
        t.context = citation_context_from_json(*c);
        for (const auto& r : j.value("rects", json::array())) t.rects.push_back(rect_from(r));
        for (const auto& k : j.value("selected", json::array())) t.selected.insert(k.get<std::string>());
    }
    if (auto i = j.find("image"); i != j.end()) {
        TankImage img;
        img.doc_id = i->at("doc_id").get<std::string>();
        img.page = i->at("page").get<std::size_t>();
        const auto& r = i->at("rect");
        img.rect = Rect{r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()};
        img.mime = i->value("mime", "application/octet-stream");
        img.sha256 = i->at("sha256").get<std::string>();
        img.bytes = load_image(img.sha256);
        t.image = std::move(img);
    }
    return t;
}

inline nlohmann::ordered_json to_json(const Workspace& ws) {
    using namespace detail::ws;
    ojson j;
    j["version"] = ws.version;
    j["workspace_id"] = ws.workspace_id;
    j["revision"] = ws.revision;
    j["clock"] = ws.clock;
    j["next_id"] = ws.next_id;
    j["current_paper"] = ws.current_paper ? ojson(*ws.current_paper) : ojson(nullptr);
    j["threads"] = ojson::array();
    for (const auto& t : ws.threads) j["threads"].push_back(thread_json(t));
    j["contexts"] = ojson::array();
    for (const auto& c : ws.contexts) j["contexts"].push_back(context_record_json(c));
    j["tank"] = to_json(ws.tank);
    return j;
}

inline std::string serialize_workspace(const Workspace& ws) { return to_json(ws).dump(2) + "\n"; }

inline Workspace workspace_from_json(const nlohmann::json& j, const detail::ws::ImageLoader& load_image) {
    using namespace detail::ws;
    try {
        Workspace ws;
        ws.version = j.at("version").get<int>();
        if (ws.version != kWorkspaceVersion)
            throw StorageError("workspace: unsupported version " + std::to_string(ws.version));
        ws.workspace_id = j.at("workspace_id").get<std::string>();
        ws.revision = j.at("revision").get<std::uint64_t>();
        ws.clock = j.value("clock", std::int64_t{0});
        ws.next_id = j.value("next_id", std::uint64_t{1});
        ws.current_paper = get_optional<std::string>(j, "current_paper");
        for (const auto& t : j.at("threads")) ws.threads.push_back(thread_from(t, load_image));
        for (const auto& c : j.value("contexts", json::array())) ws.contexts.push_back(context_record_from(c));
        if (auto t = j.find("tank"); t != j.end()) ws.tank = holding_tank_from_json(*t, load_image);
        return ws;
    } catch (const nlohmann::json::exception& e) {
        throw StorageError(std::string("workspace: malformed file: ") + e.what());
    }
}

struct StoreOptions {
    std::size_t max_image_bytes = LinkerOptions{}.max_image_bytes;
};

// Throws InvariantError naming the first violation.
inline void validate_workspace(const Workspace& ws, const StoreOptions& options = {}) {
    auto fail = [](const std::string& what) { throw InvariantError("workspace: " + what); };
    if (ws.threads.empty() || ws.threads.front().thread_id != kUnorganizedId)
        fail("the unorganized thread must come first");
    const Thread& u = ws.unorganized();
    if (!u.children.empty()) fail("the unorganized thread cannot have child threads");
    if (!u.clips.empty()) fail("the unorganized thread holds papers only");

    std::set<std::string> thread_ids, clip_ids, context_ids;
    for (const auto& c : ws.contexts)
        if (!context_ids.insert(c.context_id).second) fail("duplicate context id " + c.context_id);

    bool current_found = !ws.current_paper;
    for_each_thread(ws.threads, [&](const Thread& t, std::size_t depth) {
        if (!thread_ids.insert(t.thread_id).second) fail("duplicate thread id " + t.thread_id);
        if (depth > 0 && t.thread_id == kUnorganizedId) fail("the unorganized thread must be top level");
        if (detail::trim_view(t.label).empty()) fail("thread " + t.thread_id + " has an empty label");
        if (t.last_additive_change > ws.clock || t.created_at > ws.clock)
            fail("thread " + t.thread_id + " has a timestamp ahead of the clock");
        std::set<std::string> identities;
        for (const auto& p : t.papers) {
            if (p.paper_id.empty() || (p.local && detail::normalize_title(p.title).empty()))
                fail("paper without id or title in thread " + t.thread_id);
            if (!identities.insert(p.identity()).second)
                fail("paper " + p.paper_id + " appears twice in thread " + t.thread_id);
            if (p.source_context && !context_ids.count(*p.source_context))
                fail("paper " + p.paper_id + " refers to unknown context " + *p.source_context);
            if (ws.current_paper && p.identity() == *ws.current_paper) current_found = true;
        }
        for (const auto& c : t.clips) {
            if (!clip_ids.insert(c.clip_id).second) fail("duplicate clip id " + c.clip_id);
            if (c.source.doc_id.empty()) fail("clip " + c.clip_id + " has no source document");
            if (c.kind == ClipKind::Text && detail::trim_view(c.text).empty()) fail("clip " + c.clip_id + " is empty");
            if (c.kind == ClipKind::Image) {
                if (!c.image || c.image->empty()) fail("clip " + c.clip_id + " has no image payload");
                if (c.image->size() > options.max_image_bytes) fail("clip " + c.clip_id + " exceeds the image limit");
                if (detail::sha256_hex(*c.image) != c.image_sha256) fail("clip " + c.clip_id + " image hash mismatch");
            }
            if (c.context_id && !context_ids.count(*c.context_id))
                fail("clip " + c.clip_id + " refers to unknown context " + *c.context_id);
        }
    });
    if (!current_found) fail("current paper is not in the workspace");

    for (std::size_t i = 2; i < ws.threads.size(); ++i) {
        const auto a = subtree_latest(ws.threads[i - 1]), b = subtree_latest(ws.threads[i]);
        if (a < b || (a == b && ws.threads[i - 1].thread_id > ws.threads[i].thread_id))
            fail("drawer order is not by most recent additive change");
    }

    const auto& tank = ws.tank;
    if (tank.context) {
        std::set<std::string> keys;
        for (const auto& r : tank.context->resolved) keys.insert(r.key());
        for (const auto& k : tank.selected)
            if (!keys.count(k)) fail("tank selection " + k + " is not among the resolved references");
        if (tank.context_id.empty()) fail("tank context has no id");
    } else if (!tank.selected.empty()) {
        fail("tank selection without a context");
    }
    if (tank.image) {
        if (!tank.image->bytes || tank.image->bytes->empty()) fail("tank image has no payload");
        if (tank.image->bytes->size() > options.max_image_bytes) fail("tank image exceeds the limit");
        if (detail::sha256_hex(*tank.image->bytes) != tank.image->sha256) fail("tank image hash mismatch");
    }
}

// Indented plain-text outline: per thread, clips first, then references
// grouped by the citation context they came from, then the rest, then child
// threads. Without `thread_id` the whole drawer is exported.
inline std::string export_outline(const Workspace& ws, const std::optional<std::string>& thread_id = std::nullopt) {
    std::ostringstream out;
    auto paper_line = [](const PaperRef& p) {
        std::string s;
        if (p.surface) s += *p.surface + " ";
        s += p.title.empty() ? "(untitled)" : p.title;
        if (p.year) s += " (" + std::to_string(p.year) + ")";
        if (!p.local) s += " <" + p.paper_id + ">";
        return s;
    };
    std::function<void(const Thread&, std::size_t)> emit = [&](const Thread& t, std::size_t depth) {
        const std::string pad(depth * 2, ' ');
        out << pad << "- " << t.label << " [" << t.thread_id << "]\n";
        for (const auto& c : t.clips) {
            out << pad << "    clip " << c.clip_id << ": ";
            if (c.kind == ClipKind::Text) {
                out << '"' << c.text << '"';
            } else {
                out << "image " << c.mime << ", " << (c.image ? c.image->size() : 0) << " bytes";
            }
            out << " (" << c.source.doc_id;
            if (c.source.page) out << " p." << *c.source.page + 1;
            if (!c.source.sentence_indices.empty()) {
                out << " s.";
                for (std::size_t i = 0; i < c.source.sentence_indices.size(); ++i)
                    out << (i ? "," : "") << c.source.sentence_indices[i];
            }
            out << ")\n";
        }
        std::vector<std::string> groups;
        for (const auto& p : t.papers)
            if (p.source_context && std::find(groups.begin(), groups.end(), *p.source_context) == groups.end())
                groups.push_back(*p.source_context);
        for (const auto& g : groups) {
            const ContextRecord* rec = ws.find_context(g);
            out << pad << "    context " << g;
            if (rec) out << " (" << rec->doc_id << "): \"" << rec->text << '"';
            out << "\n";
            for (const auto& p : t.papers)
                if (p.source_context == g) out << pad << "      * " << paper_line(p) << "\n";
        }
        bool header = false;
        for (const auto& p : t.papers) {
            if (p.source_context) continue;
            if (!header) out << pad << "    papers:\n";
            header = true;
            out << pad << "      * " << paper_line(p) << (ws.current_paper == p.identity() ? "  (current)" : "")
                << "\n";
        }
        for (const auto& c : t.children) emit(c, depth + 1);
    };
    if (thread_id) {
        const Thread* t = ws.find_thread(*thread_id);
        if (!t) throw NoSuchThread("no thread " + *thread_id);
        emit(*t, 0);
    } else {
        for (const auto& t : ws.threads) emit(t, 0);
    }
    return out.str();
}

// Storage -------------------------------------------------------------------------

namespace detail::ws {

inline std::string read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw StorageError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_atomic(const std::filesystem::path& p, const std::string& bytes) {
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw StorageError("short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, p, ec);
    if (ec) throw StorageError("cannot replace " + p.string() + ": " + ec.message());
}

}  // namespace detail::ws

inline std::filesystem::path workspace_file(const std::filesystem::path& dir) { return dir / "workspace.json"; }

// Writes images first (content addressed), then swaps in the workspace file;
// images no longer referenced are removed afterwards.
inline void persist_workspace(const Workspace& ws, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw StorageError("cannot create " + (dir / "images").string() + ": " + ec.message());
    std::set<std::string> live;
    auto keep = [&](const std::string& sha, const std::shared_ptr<const std::string>& bytes) {
        live.insert(sha);
        const auto p = dir / "images" / sha;
        if (bytes && !fs::exists(p)) detail::ws::write_atomic(p, *bytes);
    };
    for_each_thread(ws.threads, [&](const Thread& t, std::size_t) {
        for (const auto& c : t.clips)
            if (c.kind == ClipKind::Image) keep(c.image_sha256, c.image);
    });
    if (ws.tank.image) keep(ws.tank.image->sha256, ws.tank.image->bytes);
    detail::ws::write_atomic(workspace_file(dir), serialize_workspace(ws));
    for (const auto& entry : fs::directory_iterator(dir / "images", ec))
        if (!live.count(entry.path().filename().string())) fs::remove(entry.path(), ec);
}

// A missing workspace file yields a fresh workspace.
inline Workspace load_workspace(const std::filesystem::path& dir, const StoreOptions& options = {}) {
    const auto file = workspace_file(dir);
    if (!std::filesystem::exists(file)) return Workspace::fresh();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::ws::read_all(file));
    } catch (const nlohmann::json::parse_error& e) {
        throw StorageError("workspace: " + file.string() + " is not valid JSON: " + e.what());
    }
    auto loader = [&](const std::string& sha) -> std::shared_ptr<const std::string> {
        if (sha.size() != 64 || sha.find_first_not_of("0123456789abcdef") != std::string::npos)
            throw StorageError("workspace: bad image hash '" + sha + "'");
        return std::make_shared<const std::string>(detail::ws::read_all(dir / "images" / sha));
    };
    Workspace ws = workspace_from_json(j, loader);
    validate_workspace(ws, options);
    return ws;
}

struct RegisterResult {
    bool added = false;  // false when the paper was already filed somewhere
    std::string identity;
};

struct CommitResult {
    std::string thread_id;
    std::optional<std::string> clip_id;
    std::size_t papers_added = 0;
    std::size_t duplicates = 0;
    std::vector<std::string> skipped;  // selected keys with nothing to file
};

// Single-writer workspace with revision check-and-set. Readers take
// immutable snapshots; every successful mutation bumps the revision by one
// and, when the store has a directory, is persisted before it becomes
// visible.
class ThreadStore {
public:
    using Rev = std::optional<std::uint64_t>;

    explicit ThreadStore(Workspace ws = Workspace::fresh(), Clock clock = system_clock_ms, StoreOptions options = {})
        : current_(std::make_shared<const Workspace>(std::move(ws))), clock_(std::move(clock)), options_(options) {
        validate_workspace(*current_, options_);
    }

    static ThreadStore open(const std::filesystem::path& dir, Clock clock = system_clock_ms, StoreOptions options = {}) {
        ThreadStore s(load_workspace(dir, options), std::move(clock), options);
        s.dir_ = dir;
        return s;
    }

    ThreadStore(ThreadStore&& other) noexcept
        : current_(std::move(other.current_)), clock_(std::move(other.clock_)), options_(other.options_),
          dir_(std::move(other.dir_)) {}

    std::shared_ptr<const Workspace> snapshot() const {
        std::lock_guard lock(mu_);
        return current_;
    }

    std::uint64_t revision() const { return snapshot()->revision; }
    const std::filesystem::path& directory() const { return dir_; }

    void persist() const {
        if (dir_.empty()) throw StorageError("store has no directory");
        persist_workspace(*snapshot(), dir_);
    }

    void persist_to(const std::filesystem::path& dir) const { persist_workspace(*snapshot(), dir); }

    // -- holding tank ---------------------------------------------------------

    // Replaces the tank; every resolved reference starts out selected.
    void tank_load(CitationContext ctx, std::vector<PageRect> rects = {}, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            HoldingTank t;
            t.context_id = new_id(ws, "ctx-");
            for (const auto& r : ctx.resolved) t.selected.insert(r.key());
            t.context = std::move(ctx);
            t.rects = std::move(rects);
            ws.tank = std::move(t);
        });
    }

    void tank_load_image(const AreaCapture& capture, Rev expected = {}) {
        if (!capture.bytes || capture.bytes->empty()) throw InvalidArgument("image payload is empty");
        if (capture.bytes->size() > options_.max_image_bytes)
            throw PayloadTooLarge("image payload exceeds " + std::to_string(options_.max_image_bytes) + " bytes");
        mutate(expected, [&](Workspace& ws) {
            HoldingTank t;
            t.image = TankImage{capture.doc_id, capture.page, capture.rect, capture.mime,
                                detail::sha256_hex(*capture.bytes), capture.bytes};
            ws.tank = std::move(t);
        });
    }

    void tank_deselect(const std::string& key, Rev expected = {}) { set_selected(key, false, expected); }
    void tank_reselect(const std::string& key, Rev expected = {}) { set_selected(key, true, expected); }

    void tank_clear(Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) { ws.tank = HoldingTank{}; });
    }

    // New top-level thread holding the tank's context as a clip and its
    // selected references. Clears the tank.
    CommitResult commit_as_new_thread(const std::string& label, Rev expected = {}) {
        return mutate(expected, [&](Workspace& ws) {
            const bool has_label = !detail::trim_view(label).empty();
            if (!has_label && ws.tank.empty()) throw EmptyCommit("nothing to commit: no label and an empty tank");
            Thread t;
            t.thread_id = new_id(ws, "t");
            t.label = has_label ? detail::ws::clean_label(label) : detail::ws::derive_label(ws.tank);
            t.created_at = t.last_additive_change = now(ws);
            CommitResult result;
            result.thread_id = t.thread_id;
            if (!ws.tank.empty()) {
                result.clip_id = add_clip(ws, t);
                add_selected(ws, t, result);
            }
            t.last_additive_change = ws.clock;
            ws.threads.push_back(std::move(t));
            ws.tank = HoldingTank{};
            return result;
        });
    }

    // Files the selected references into an existing thread; the tank stays.
    CommitResult commit_refs_to(const std::string& thread_id, Rev expected = {}) {
        return mutate(expected, [&](Workspace& ws) {
            Thread& t = require_thread(ws, thread_id);
            if (!ws.tank.context) throw EmptyCommit("the tank holds no citation context");
            if (ws.tank.selected.empty()) throw EmptyCommit("no references selected");
            CommitResult result;
            result.thread_id = t.thread_id;
            add_selected(ws, t, result);
            if (result.papers_added > 0) t.last_additive_change = now(ws);
            return result;
        });
    }

    // Files the tank's context (or image) as a clip; the tank stays.
    CommitResult commit_clip_to(const std::string& thread_id, Rev expected = {}) {
        return mutate(expected, [&](Workspace& ws) {
            Thread& t = require_thread(ws, thread_id);
            if (t.thread_id == kUnorganizedId) throw InvalidTarget("the unorganized thread holds papers only");
            if (ws.tank.empty()) throw EmptyCommit("the tank is empty");
            CommitResult result;
            result.thread_id = t.thread_id;
            result.clip_id = add_clip(ws, t);
            t.last_additive_change = now(ws);
            return result;
        });
    }

    // -- threads -----------------------------------------------------------

    std::string create_thread(const std::string& label, const std::optional<std::string>& parent = std::nullopt,
                              Rev expected = {}) {
        return mutate(expected, [&](Workspace& ws) {
            Thread t;
            t.thread_id = new_id(ws, "t");
            t.label = detail::ws::clean_label(label);
            t.created_at = t.last_additive_change = now(ws);
            const std::string id = t.thread_id;
            if (parent) {
                Thread& p = require_thread(ws, *parent);
                if (p.thread_id == kUnorganizedId) throw InvalidTarget("the unorganized thread cannot have children");
                p.children.push_back(std::move(t));
                p.last_additive_change = ws.clock;
            } else {
                ws.threads.push_back(std::move(t));
            }
            return id;
        });
    }

    void rename_thread(const std::string& thread_id, const std::string& label, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            Thread& t = require_thread(ws, thread_id);
            if (t.thread_id == kUnorganizedId) throw InvalidTarget("the unorganized thread cannot be renamed");
            t.label = detail::ws::clean_label(label);
        });
    }

    // Re-parents a thread (nullopt = top level). `position` indexes the new
    // sibling list; top-level placement always follows the drawer rule.
    void move_thread(const std::string& thread_id, const std::optional<std::string>& new_parent,
                     std::optional<std::size_t> position = std::nullopt, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            if (thread_id == kUnorganizedId) throw CannotMoveUnorganized("the unorganized thread cannot be moved");
            auto loc = detail::ws::locate(ws.threads, thread_id);
            if (!loc) throw NoSuchThread("no thread " + thread_id);
            if (new_parent) {
                const Thread* target = ws.find_thread(*new_parent);
                if (!target) throw NoSuchThread("no thread " + *new_parent);
                if (target->thread_id == kUnorganizedId) throw InvalidTarget("the unorganized thread cannot have children");
                if (detail::ws::subtree_contains((*loc->siblings)[loc->position], *new_parent))
                    throw CycleError("cannot move " + thread_id + " under its own descendant " + *new_parent);
            }
            Thread node = std::move((*loc->siblings)[loc->position]);
            loc->siblings->erase(loc->siblings->begin() + static_cast<std::ptrdiff_t>(loc->position));
            std::vector<Thread>& dest = new_parent ? ws.find_thread(*new_parent)->children : ws.threads;
            std::size_t at = dest.size();
            if (new_parent && position) at = std::min(*position, dest.size());
            dest.insert(dest.begin() + static_cast<std::ptrdiff_t>(at), std::move(node));
        });
    }

    // Recursive; threads with children need `confirm`.
    void delete_thread(const std::string& thread_id, bool confirm, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            if (thread_id == kUnorganizedId) throw InvalidTarget("the unorganized thread cannot be deleted");
            auto loc = detail::ws::locate(ws.threads, thread_id);
            if (!loc) throw NoSuchThread("no thread " + thread_id);
            const Thread& t = (*loc->siblings)[loc->position];
            if (!t.children.empty() && !confirm)
                throw ConfirmationRequired("thread " + thread_id + " has " + std::to_string(t.children.size()) +
                                           " child threads; deleting needs confirmation");
            loc->siblings->erase(loc->siblings->begin() + static_cast<std::ptrdiff_t>(loc->position));
            drop_stale_current(ws);
        });
    }

    // -- papers and clips -------------------------------------------------------

    RegisterResult register_open_paper(PaperRef paper, Rev expected = {}) {
        return mutate(expected, [&](Workspace& ws) {
            check_paper(paper);
            RegisterResult r;
            r.identity = paper.identity();
            if (!contains_paper(ws, r.identity)) {
                Thread& u = ws.threads.front();
                paper.added_at = now(ws);
                u.papers.push_back(std::move(paper));
                u.last_additive_change = ws.clock;
                r.added = true;
            }
            ws.current_paper = r.identity;
            return r;
        });
    }

    void add_paper(const std::string& thread_id, PaperRef paper, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            check_paper(paper);
            Thread& t = require_thread(ws, thread_id);
            if (t.find_paper_identity(paper.identity()))
                throw DuplicatePaper("thread " + thread_id + " already has " + paper.paper_id);
            paper.added_at = now(ws);
            t.papers.push_back(std::move(paper));
            t.last_additive_change = ws.clock;
        });
    }

    void move_paper(const std::string& paper_id, const std::string& from, const std::string& to, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            Thread& src = require_thread(ws, from);
            Thread& dst = require_thread(ws, to);
            auto it = std::find_if(src.papers.begin(), src.papers.end(),
                                   [&](const PaperRef& p) { return p.paper_id == paper_id; });
            if (it == src.papers.end()) throw NoSuchPaper("thread " + from + " has no paper " + paper_id);
            if (&src == &dst) return;
            if (dst.find_paper_identity(it->identity()))
                throw DuplicatePaper("thread " + to + " already has " + paper_id);
            PaperRef p = std::move(*it);
            src.papers.erase(it);
            dst.papers.push_back(std::move(p));
        });
    }

    void remove_paper(const std::string& thread_id, const std::string& paper_id, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            Thread& t = require_thread(ws, thread_id);
            auto it = std::find_if(t.papers.begin(), t.papers.end(),
                                   [&](const PaperRef& p) { return p.paper_id == paper_id; });
            if (it == t.papers.end()) throw NoSuchPaper("thread " + thread_id + " has no paper " + paper_id);
            t.papers.erase(it);
            drop_stale_current(ws);
        });
    }

    void edit_clip(const std::string& clip_id, const std::string& text, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            Clip& c = require_clip(ws, clip_id);
            if (c.kind != ClipKind::Text) throw InvalidTarget("clip " + clip_id + " is an image");
            if (detail::trim_view(text).empty()) throw InvalidArgument("clip text must not be empty");
            c.text = text;
        });
    }

    void delete_clip(const std::string& clip_id, Rev expected = {}) {
        mutate(expected, [&](Workspace& ws) {
            bool done = false;
            std::function<void(std::vector<Thread>&)> walk = [&](std::vector<Thread>& list) {
                for (auto& t : list) {
                    auto it = std::find_if(t.clips.begin(), t.clips.end(), [&](const Clip& c) { return c.clip_id == clip_id; });
                    if (it != t.clips.end()) {
                        t.clips.erase(it);
                        done = true;
                        return;
                    }
                    walk(t.children);
                    if (done) return;
                }
            };
            walk(ws.threads);
            if (!done) throw NoSuchClip("no clip " + clip_id);
        });
    }

private:
    template <class F>
    std::invoke_result_t<F&, Workspace&> mutate(Rev expected, F&& f) {
        std::lock_guard lock(mu_);
        if (expected && *expected != current_->revision)
            throw ConflictError("expected revision " + std::to_string(*expected) + " but the workspace is at " +
                                std::to_string(current_->revision));
        auto next = std::make_shared<Workspace>(*current_);
        auto commit = [&] {
            next->revision += 1;
            sort_drawer(*next);
            validate_workspace(*next, options_);
            if (!dir_.empty()) persist_workspace(*next, dir_);
            current_ = std::move(next);
        };
        if constexpr (std::is_void_v<std::invoke_result_t<F&, Workspace&>>) {
            f(*next);
            commit();
        } else {
            auto result = f(*next);
            commit();
            return result;
        }
    }

    std::int64_t now(Workspace& ws) const {
        ws.clock = std::max(clock_(), ws.clock + 1);
        return ws.clock;
    }

    static std::string new_id(Workspace& ws, const char* prefix) { return prefix + std::to_string(ws.next_id++); }

    static Thread& require_thread(Workspace& ws, const std::string& id) {
        Thread* t = ws.find_thread(id);
        if (!t) throw NoSuchThread("no thread " + id);
        return *t;
    }

    static Clip& require_clip(Workspace& ws, const std::string& id) {
        Clip* hit = nullptr;
        std::function<void(std::vector<Thread>&)> walk = [&](std::vector<Thread>& list) {
            for (auto& t : list) {
                for (auto& c : t.clips)
                    if (c.clip_id == id) hit = &c;
                walk(t.children);
            }
        };
        walk(ws.threads);
        if (!hit) throw NoSuchClip("no clip " + id);
        return *hit;
    }

    static void check_paper(const PaperRef& p) {
        if (p.paper_id.empty()) throw InvalidArgument("paper needs an id");
        if (p.local && detail::normalize_title(p.title).empty()) throw InvalidArgument("local paper needs a title");
    }

    static void drop_stale_current(Workspace& ws) {
        if (ws.current_paper && !contains_paper(ws, *ws.current_paper)) ws.current_paper.reset();
    }

    void set_selected(const std::string& key, bool on, Rev expected) {
        mutate(expected, [&](Workspace& ws) {
            bool known = false;
            if (ws.tank.context)
                for (const auto& r : ws.tank.context->resolved) known |= r.key() == key;
            if (!known) throw NotInTank("reference " + key + " is not in the holding tank");
            if (on)
                ws.tank.selected.insert(key);
            else
                ws.tank.selected.erase(key);
        });
    }

    void remember_context(Workspace& ws) {
        if (!ws.tank.context || ws.find_context(ws.tank.context_id)) return;
        const auto& c = *ws.tank.context;
        ws.contexts.push_back(ContextRecord{ws.tank.context_id, c.doc_id, c.core_sentence_indices,
                                            c.context_sentence_indices, c.text, ws.clock});
    }

    std::string add_clip(Workspace& ws, Thread& t) {
        Clip c;
        c.clip_id = new_id(ws, "c");
        c.created_at = now(ws);
        if (ws.tank.image) {
            const auto& img = *ws.tank.image;
            c.kind = ClipKind::Image;
            c.mime = img.mime;
            c.image_sha256 = img.sha256;
            c.image = img.bytes;
            c.source.doc_id = img.doc_id;
            c.source.page = img.page;
            c.source.rects = {PageRect{img.page, img.rect}};
        } else {
            const auto& ctx = *ws.tank.context;
            remember_context(ws);
            c.kind = ClipKind::Text;
            c.text = ctx.text;
            c.source.doc_id = ctx.doc_id;
            c.source.rects = ws.tank.rects;
            if (!ws.tank.rects.empty()) c.source.page = ws.tank.rects.front().page;
            c.source.sentence_indices = ctx.context_sentence_indices;
            c.context_id = ws.tank.context_id;
        }
        const std::string id = c.clip_id;
        t.clips.push_back(std::move(c));
        return id;
    }

    void add_selected(Workspace& ws, Thread& t, CommitResult& result) {
        if (!ws.tank.context) return;
        for (const auto& r : ws.tank.context->resolved) {
            if (!ws.tank.selected.count(r.key())) continue;
            auto p = detail::ws::paper_for(r);
            if (!p) {
                result.skipped.push_back(r.key());
                continue;
            }
            if (t.find_paper_identity(p->identity())) {
                ++result.duplicates;
                continue;
            }
            remember_context(ws);
            p->source_context = ws.tank.context_id;
            p->doc_id = ws.tank.context->doc_id;
            p->added_at = now(ws);
            t.papers.push_back(std::move(*p));
            ++result.papers_added;
        }
    }

    mutable std::mutex mu_;
    std::shared_ptr<const Workspace> current_;
    Clock clock_;
    StoreOptions options_;
    std::filesystem::path dir_;
};

}  // namespace threadloom
