#pragma once

// Maps reader highlights onto the parsed document and turns them into
// citation contexts with resolved references.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "threadloom/citation_grammar.hpp"
#include "threadloom/detail/text.hpp"
#include "threadloom/doc_model.hpp"
#include "threadloom/errors.hpp"
#include "threadloom/geometry.hpp"
#include "threadloom/paper_record.hpp"

namespace threadloom {

struct PageOffset {
    double dx = 0;
    double dy = 0;
};

// Rendered = point * render_scale + page offset.
struct ViewportTransform {
    double render_scale = 1.0;
    std::vector<PageOffset> page_offsets;  // one per page

    static ViewportTransform uniform(double scale, std::size_t page_count) {
        return ViewportTransform{scale, std::vector<PageOffset>(page_count)};
    }
};

enum class HighlightKind { Text, Area };

struct Highlight {
    std::string doc_id;
    HighlightKind kind = HighlightKind::Text;
    std::vector<PageRect> rects;  // rendered units
    std::int64_t created_at = 0;
};

struct LinkerOptions {
    double overlap_ratio = 0.2;
    std::size_t context_before = 1;
    std::size_t context_after = 1;
    std::size_t max_image_bytes = 2 * 1024 * 1024;
    std::size_t tank_budget = 64;  // max references kept per context
};

namespace detail {

inline void check_transform(const ViewportTransform& t) {
    if (!(t.render_scale > 0)) throw InvalidArgument("render_scale must be positive");
}

inline const PageOffset& offset_for(const ViewportTransform& t, std::size_t page) {
    if (page >= t.page_offsets.size()) throw UnknownPage("page " + std::to_string(page) + " has no viewport offset");
    return t.page_offsets[page];
}

}  // namespace detail

inline std::vector<PageRect> to_document_space(const Highlight& h, const ViewportTransform& t) {
    detail::check_transform(t);
    std::vector<PageRect> out;
    out.reserve(h.rects.size());
    for (const auto& pr : h.rects) {
        const auto& off = detail::offset_for(t, pr.page);
        out.push_back({pr.page, Rect{(pr.rect.x - off.dx) / t.render_scale, (pr.rect.y - off.dy) / t.render_scale,
                                     pr.rect.width / t.render_scale, pr.rect.height / t.render_scale}});
    }
    return out;
}

inline std::vector<PageRect> to_viewport_space(const std::vector<PageRect>& rects, const ViewportTransform& t) {
    detail::check_transform(t);
    std::vector<PageRect> out;
    out.reserve(rects.size());
    for (const auto& pr : rects) {
        const auto& off = detail::offset_for(t, pr.page);
        out.push_back({pr.page, Rect{pr.rect.x * t.render_scale + off.dx, pr.rect.y * t.render_scale + off.dy,
                                     pr.rect.width * t.render_scale, pr.rect.height * t.render_scale}});
    }
    return out;
}

// Sentences with a box overlapping some rect by at least `overlap_ratio` of
// the smaller rectangle, in reading order. Boxes are bucketed per page and
// sorted by top edge so each rect only scans boxes whose top lies above its
// bottom.
inline std::vector<std::size_t> locate_sentences(const ParsedDocument& doc, const std::vector<PageRect>& rects,
                                                 double overlap_ratio = LinkerOptions{}.overlap_ratio) {
    struct BoxRef {
        double top;
        double bottom;
        const Rect* rect;
        std::size_t position;
    };
    std::map<std::size_t, std::vector<BoxRef>> by_page;
    for (const auto& r : rects) by_page[r.page];
    for (std::size_t pos = 0; pos < doc.sentences.size(); ++pos) {
        const auto& s = doc.sentences[pos];
        auto it = by_page.find(s.page);
        if (it == by_page.end()) continue;
        for (const auto& b : s.boxes) it->second.push_back({b.y, b.bottom(), &b, pos});
    }
    for (auto& [page, boxes] : by_page)
        std::sort(boxes.begin(), boxes.end(), [](const BoxRef& a, const BoxRef& b) { return a.top < b.top; });

    std::set<std::size_t> hits;
    for (const auto& r : rects) {
        if (!r.rect.valid()) continue;
        const auto& boxes = by_page[r.page];
        auto end = std::lower_bound(boxes.begin(), boxes.end(), r.rect.bottom(),
                                    [](const BoxRef& b, double y) { return b.top < y; });
        for (auto it = boxes.begin(); it != end; ++it) {
            if (it->bottom <= r.rect.y || hits.count(it->position)) continue;
            if (overlaps_enough(*it->rect, r.rect, overlap_ratio)) hits.insert(it->position);
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t pos : hits) out.push_back(doc.sentences[pos].index);
    return out;
}

// Resolution outcome codes for references that did not fully resolve.
inline constexpr const char* kNoBibMatch = "NO_BIB_MATCH";
inline constexpr const char* kLookupFailed = "LOOKUP_FAILED";
inline constexpr const char* kAmbiguous = "AMBIGUOUS";

struct ResolvedReference {
    // The citation as found: surface and position of the printed marker, with
    // bib_key set to the matched entry's key (or the printed label if none).
    InlineCitationMarker marker;
    MarkerStyle style = MarkerStyle::Unknown;
    std::optional<BibEntry> bib;
    std::optional<PaperRecord> paper;
    std::optional<std::string> reason;
    bool ambiguous = false;
    std::vector<std::string> candidate_keys;  // filled when ambiguous

    const std::string& key() const { return marker.bib_key; }

    friend bool operator==(const ResolvedReference&, const ResolvedReference&) = default;
};

struct CitationContext {
    std::string doc_id;
    std::vector<std::size_t> core_sentence_indices;
    std::vector<std::size_t> context_sentence_indices;
    std::string text;
    std::vector<InlineCitationMarker> found_markers;
    std::vector<ResolvedReference> resolved;
    bool truncated = false;  // tank budget reached

    friend bool operator==(const CitationContext&, const CitationContext&) = default;
};

// Core plus `before`/`after` neighbouring sentences, not crossing a section
// boundary or the document ends.
inline CitationContext expand_context(const ParsedDocument& doc, const std::vector<std::size_t>& core,
                                      const LinkerOptions& options = {}) {
    if (core.empty()) throw EmptySelection("citation context needs at least one core sentence");
    std::vector<std::size_t> positions;
    for (std::size_t idx : core) {
        auto pos = doc.position_of(idx);
        if (!pos) throw InvalidArgument("no sentence with index " + std::to_string(idx));
        positions.push_back(*pos);
    }
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());

    std::set<std::size_t> context(positions.begin(), positions.end());
    const std::size_t first = positions.front();
    const std::size_t last = positions.back();
    for (std::size_t k = 1; k <= options.context_before && k <= first; ++k) {
        if (doc.sentences[first - k].section_index != doc.sentences[first].section_index) break;
        context.insert(first - k);
    }
    for (std::size_t k = 1; k <= options.context_after && last + k < doc.sentences.size(); ++k) {
        if (doc.sentences[last + k].section_index != doc.sentences[last].section_index) break;
        context.insert(last + k);
    }

    CitationContext ctx;
    ctx.doc_id = doc.doc_id;
    for (std::size_t pos : positions) ctx.core_sentence_indices.push_back(doc.sentences[pos].index);
    std::vector<std::string> texts;
    for (std::size_t pos : context) {
        ctx.context_sentence_indices.push_back(doc.sentences[pos].index);
        texts.push_back(detail::trim(doc.sentences[pos].text));
    }
    ctx.text = detail::join(texts, " ");
    return ctx;
}

// Looks up paper metadata for a bibliography entry. Implementations throw
// on transport failures; FixtureMiss is never swallowed by callers.
class PaperResolver {
public:
    virtual ~PaperResolver() = default;
    virtual std::optional<PaperRecord> by_id(const std::string& paper_id) = 0;
    virtual std::optional<PaperRecord> by_title(const std::string& title) = 0;
};

namespace detail {

// Bibliography entries carrying a printed label ("[12] ..." or "12. ...").
inline std::optional<int> printed_label(const std::string& raw) {
    static const std::regex re(R"(^\s*\[?\s*(\d{1,4})\s*[\].)]\s*)");
    std::smatch m;
    if (std::regex_search(raw, m, re)) return std::stoi(m.str(1));
    return std::nullopt;
}

inline const BibEntry* match_numeric(const ParsedDocument& doc, int label) {
    bool labelled = false;
    for (const auto& b : doc.bib_entries) {
        if (auto l = printed_label(b.raw_text)) {
            labelled = true;
            if (*l == label) return &b;
        }
    }
    if (const BibEntry* exact = doc.find_bib(std::to_string(label))) return exact;
    if (!labelled && label >= 1 && static_cast<std::size_t>(label) <= doc.bib_entries.size())
        return &doc.bib_entries[static_cast<std::size_t>(label) - 1];
    return nullptr;
}

inline std::vector<const BibEntry*> match_author_year(const ParsedDocument& doc, const AuthorYearKey& key) {
    const auto surname = tokenize(key.surname);
    const std::string year = std::to_string(key.year);
    std::vector<const BibEntry*> matches;
    if (surname.empty()) return matches;
    for (const auto& b : doc.bib_entries) {
        const auto tokens = tokenize(b.raw_text);
        const std::size_t window = std::min(tokens.size(), surname.size() + 4);
        bool name_ok = false;
        for (std::size_t i = 0; i + surname.size() <= window && !name_ok; ++i)
            name_ok = std::equal(surname.begin(), surname.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i));
        if (!name_ok) continue;
        bool year_ok = b.year ? *b.year == key.year : false;
        if (!b.year)
            for (const auto& t : tokens) year_ok |= t == year || t == year + key.suffix;
        if (year_ok) matches.push_back(&b);
    }
    if (matches.size() > 1 && !key.suffix.empty()) {
        std::vector<const BibEntry*> narrowed;
        for (const auto* b : matches) {
            const auto tokens = tokenize(b->raw_text);
            if (std::find(tokens.begin(), tokens.end(), year + key.suffix) != tokens.end()) narrowed.push_back(b);
        }
        if (narrowed.size() == 1) return narrowed;
    }
    return matches;
}

struct Target {
    std::string label;  // printed label or author-year key
    std::vector<const BibEntry*> entries;
};

inline std::vector<Target> targets_for(const ParsedDocument& doc, const InlineCitationMarker& m,
                                       const MarkerParse& parse) {
    std::vector<Target> out;
    const BibEntry* linked = m.bib_key.empty() ? nullptr : doc.find_bib(m.bib_key);
    // Trust the parser's own link for single citations.
    if (linked && parse.expanded_keys.size() <= 1) {
        out.push_back({m.bib_key, {linked}});
        return out;
    }
    switch (parse.style) {
        case MarkerStyle::NumericBracket:
        case MarkerStyle::NumericRange:
        case MarkerStyle::NumericList:
            for (const auto& label : parse.expanded_keys) {
                const BibEntry* b = match_numeric(doc, std::stoi(label));
                out.push_back({label, b ? std::vector<const BibEntry*>{b} : std::vector<const BibEntry*>{}});
            }
            break;
        case MarkerStyle::AuthorYear:
            for (const auto& k : parse.author_year) out.push_back({k.str(), match_author_year(doc, k)});
            break;
        case MarkerStyle::Unknown:
            out.push_back({m.bib_key.empty() ? m.surface : m.bib_key, {}});
            break;
    }
    return out;
}

}  // namespace detail

// Expands the context, finds its markers, resolves each cited label to a
// bibliography entry and, through `resolver`, to paper metadata. One entry
// per distinct cited key, ordered by marker position.
inline CitationContext resolve_context(const ParsedDocument& doc, const std::vector<std::size_t>& core,
                                       const LinkerOptions& options = {}, PaperResolver* resolver = nullptr) {
    CitationContext ctx = expand_context(doc, core, options);
    const std::set<std::size_t> in_context(ctx.context_sentence_indices.begin(), ctx.context_sentence_indices.end());

    std::vector<const InlineCitationMarker*> markers;
    for (const auto& m : doc.markers)
        if (in_context.count(m.sentence_index)) markers.push_back(&m);
    std::stable_sort(markers.begin(), markers.end(), [&](const auto* a, const auto* b) {
        if (a->sentence_index != b->sentence_index) return a->sentence_index < b->sentence_index;
        return a->char_range.begin < b->char_range.begin;
    });

    std::set<std::string> seen;
    for (const auto* m : markers) {
        const MarkerParse parse = parse_marker(m->surface);
        for (const auto& target : detail::targets_for(doc, *m, parse)) {
            ResolvedReference ref;
            ref.marker = *m;
            ref.style = parse.style;
            if (target.entries.size() == 1) {
                ref.bib = *target.entries.front();
                ref.marker.bib_key = ref.bib->bib_key;
            } else {
                ref.marker.bib_key = target.label;
                if (target.entries.empty()) {
                    ref.reason = kNoBibMatch;
                } else {
                    ref.ambiguous = true;
                    ref.reason = kAmbiguous;
                    for (const auto* b : target.entries) ref.candidate_keys.push_back(b->bib_key);
                }
            }
            if (!seen.insert(ref.marker.bib_key).second) continue;
            if (ctx.resolved.size() >= options.tank_budget) {
                ctx.truncated = true;
                continue;
            }
            ctx.found_markers.push_back(ref.marker);
            ctx.resolved.push_back(std::move(ref));
        }
    }

    for (auto& ref : ctx.resolved) {
        if (!ref.bib) continue;
        if (!resolver) continue;
        try {
            std::optional<PaperRecord> rec;
            if (ref.bib->resolved_paper_id) {
                rec = resolver->by_id(*ref.bib->resolved_paper_id);
            } else if (ref.bib->title) {
                rec = resolver->by_title(*ref.bib->title);
            }
            if (rec) {
                ref.paper = std::move(rec);
            } else {
                ref.reason = kLookupFailed;
            }
        } catch (const FixtureMiss&) {
            throw;
        } catch (const Error&) {
            ref.reason = kLookupFailed;
        }
    }
    return ctx;
}

// Image payload captured from an area highlight.
struct AreaCapture {
    std::string doc_id;
    std::size_t page = 0;
    Rect rect;  // document space
    std::shared_ptr<const std::string> bytes;
    std::string mime;
};

inline std::string sniff_mime(const std::string& bytes) {
    if (bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0) return "image/png";
    if (bytes.size() >= 3 && bytes.compare(0, 3, "\xFF\xD8\xFF") == 0) return "image/jpeg";
    if (bytes.size() >= 6 && (bytes.compare(0, 6, "GIF87a") == 0 || bytes.compare(0, 6, "GIF89a") == 0))
        return "image/gif";
    return "application/octet-stream";
}

inline std::string data_url(const std::string& mime, const std::string& bytes) {
    return "data:" + mime + ";base64," + detail::base64_encode(bytes);
}

// `h.rects` are expected in document space already.
inline AreaCapture capture_area(const Highlight& h, std::string image_bytes,
                                std::size_t max_bytes = LinkerOptions{}.max_image_bytes) {
    if (h.kind != HighlightKind::Area) throw InvalidArgument("capture_area needs an AREA highlight");
    if (h.rects.empty()) throw InvalidArgument("highlight has no rectangles");
    if (image_bytes.empty()) throw InvalidArgument("image payload is empty");
    if (image_bytes.size() > max_bytes)
        throw PayloadTooLarge("image payload of " + std::to_string(image_bytes.size()) + " bytes exceeds limit of " +
                              std::to_string(max_bytes));
    AreaCapture c;
    c.doc_id = h.doc_id;
    c.page = h.rects.front().page;
    c.rect = h.rects.front().rect;
    c.mime = sniff_mime(image_bytes);
    c.bytes = std::make_shared<const std::string>(std::move(image_bytes));
    return c;
}

}  // namespace threadloom
