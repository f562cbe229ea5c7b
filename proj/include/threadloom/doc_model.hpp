#pragma once

// Canonical structured-document schema: ingestion, validation, serialization
// and repair of sentences that the upstream parser split in the wrong place.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "threadloom/detail/text.hpp"
#include "threadloom/errors.hpp"
#include "threadloom/geometry.hpp"

namespace threadloom {

struct Page {
    double width = 0;
    double height = 0;

    friend bool operator==(const Page&, const Page&) = default;
};

struct SectionHeader {
    std::size_t index = 0;
    std::size_t page = 0;
    std::string text;
    int depth = 1;

    friend bool operator==(const SectionHeader&, const SectionHeader&) = default;
};

struct SentenceSpan {
    std::size_t index = 0;  // reading order, unique
    std::size_t page = 0;
    std::string text;
    std::vector<Rect> boxes;  // points, top-left origin
    std::optional<std::size_t> section_index;

    friend bool operator==(const SentenceSpan&, const SentenceSpan&) = default;
};

struct BibEntry {
    std::string bib_key;
    std::string raw_text;
    std::optional<std::string> title;
    std::optional<int> year;
    std::optional<std::string> resolved_paper_id;

    friend bool operator==(const BibEntry&, const BibEntry&) = default;
};

// Half-open byte offsets into the sentence text.
struct CharRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const CharRange&, const CharRange&) = default;
};

struct InlineCitationMarker {
    std::size_t sentence_index = 0;
    CharRange char_range;
    std::string surface;
    std::string bib_key;  // may be empty when the parser could not link it

    friend bool operator==(const InlineCitationMarker&, const InlineCitationMarker&) = default;
};

struct ParsedDocument {
    std::string doc_id;
    std::string title;
    std::vector<Page> pages;
    std::vector<SectionHeader> sections;
    std::vector<SentenceSpan> sentences;
    std::vector<BibEntry> bib_entries;
    std::vector<InlineCitationMarker> markers;
    double parse_scale = 1.0;

    // Position of the sentence with reading-order index `index`, if any.
    std::optional<std::size_t> position_of(std::size_t index) const {
        auto it = std::lower_bound(sentences.begin(), sentences.end(), index,
                                   [](const SentenceSpan& s, std::size_t i) { return s.index < i; });
        if (it == sentences.end() || it->index != index) return std::nullopt;
        return static_cast<std::size_t>(it - sentences.begin());
    }

    const SentenceSpan& sentence(std::size_t index) const {
        auto pos = position_of(index);
        if (!pos) throw InvalidArgument("no sentence with index " + std::to_string(index));
        return sentences[*pos];
    }

    const BibEntry* find_bib(std::string_view key) const {
        for (const auto& b : bib_entries)
            if (b.bib_key == key) return &b;
        return nullptr;
    }

    friend bool operator==(const ParsedDocument&, const ParsedDocument&) = default;
};

inline int current_year() {
    const auto now = std::chrono::system_clock::now();
    const std::chrono::year_month_day ymd{std::chrono::floor<std::chrono::days>(now)};
    return static_cast<int>(ymd.year());
}

// Throws InvariantError naming the first violated invariant.
inline void validate(const ParsedDocument& doc) {
    auto fail = [](const std::string& what) { throw InvariantError(what); };
    if (doc.doc_id.empty()) fail("doc_id is empty");
    if (!(doc.parse_scale > 0)) fail("parse_scale must be positive");
    for (std::size_t i = 0; i < doc.pages.size(); ++i)
        if (!(doc.pages[i].width > 0 && doc.pages[i].height > 0))
            fail("pages[" + std::to_string(i) + "] has non-positive size");
    for (std::size_t i = 0; i < doc.sections.size(); ++i) {
        const auto& s = doc.sections[i];
        if (s.depth < 1) fail("sections[" + std::to_string(i) + "].depth < 1");
        if (s.page >= doc.pages.size()) fail("sections[" + std::to_string(i) + "].page out of range");
    }
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
        const auto& s = doc.sentences[i];
        const std::string where = "sentences[" + std::to_string(i) + "]";
        if (s.page >= doc.pages.size()) fail(where + ".page " + std::to_string(s.page) + " does not exist");
        if (detail::trim_view(s.text).empty()) fail(where + ".text is blank");
        if (s.boxes.empty()) fail(where + ".boxes is empty");
        for (const auto& b : s.boxes)
            if (!b.valid()) fail(where + " has a box with non-positive size");
        if (s.section_index && *s.section_index >= doc.sections.size())
            fail(where + ".section_index out of range");
        if (i > 0) {
            const auto& prev = doc.sentences[i - 1];
            if (s.index <= prev.index) fail(where + ".index is not strictly increasing");
            if (s.page < prev.page) fail(where + " is out of page order");
        }
    }
    std::set<std::string> keys;
    const int max_year = current_year() + 1;
    for (std::size_t i = 0; i < doc.bib_entries.size(); ++i) {
        const auto& b = doc.bib_entries[i];
        const std::string where = "bib[" + std::to_string(i) + "]";
        if (b.bib_key.empty()) fail(where + ".bib_key is empty");
        if (!keys.insert(b.bib_key).second) fail(where + ".bib_key '" + b.bib_key + "' is duplicated");
        if (b.year && (*b.year < 1500 || *b.year > max_year))
            fail(where + ".year " + std::to_string(*b.year) + " is implausible");
    }
    for (std::size_t i = 0; i < doc.markers.size(); ++i) {
        const auto& m = doc.markers[i];
        const std::string where = "markers[" + std::to_string(i) + "]";
        auto pos = doc.position_of(m.sentence_index);
        if (!pos)
            fail(where + ".sentence_index " + std::to_string(m.sentence_index) +
                 " does not name a sentence");
        const auto& text = doc.sentences[*pos].text;
        if (m.char_range.begin >= m.char_range.end || m.char_range.end > text.size())
            fail(where + ".char_range is outside the sentence text");
        if (text.compare(m.char_range.begin, m.char_range.end - m.char_range.begin, m.surface) != 0)
            fail(where + ".surface does not match the sentence text at char_range");
    }
}

namespace detail {

using nlohmann::json;

inline const json& require(const json& obj, const char* field, const std::string& path) {
    if (!obj.is_object()) throw SchemaError(path + ": expected an object");
    auto it = obj.find(field);
    if (it == obj.end()) throw SchemaError(path + "." + field + ": missing");
    return *it;
}

inline std::string get_string(const json& obj, const char* field, const std::string& path) {
    const auto& v = require(obj, field, path);
    if (!v.is_string()) throw SchemaError(path + "." + field + ": expected a string");
    return v.get<std::string>();
}

inline double get_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw SchemaError(path + ": expected a number");
    return v.get<double>();
}

inline std::size_t get_ordinal(const json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw SchemaError(path + ": expected a non-negative integer");
    return v.get<std::size_t>();
}

inline const json& get_array(const json& obj, const char* field, const std::string& path) {
    const auto& v = require(obj, field, path);
    if (!v.is_array()) throw SchemaError(path + "." + field + ": expected an array");
    return v;
}

template <class T>
std::optional<T> get_optional(const json& obj, const char* field, const std::string& path) {
    auto it = obj.find(field);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw SchemaError(path + "." + field + ": wrong type");
    }
}

}  // namespace detail

// Parses the native JSON parse schema. Boxes are converted to points unless
// the document declares `"coordinates": "points"`; a document declaring
// `"origin": "bottom-left"` is flipped to top-left using page heights.
inline ParsedDocument ingest_document(std::string_view raw) {
    using detail::json;
    json root;
    try {
        root = json::parse(raw);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("document: not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw SchemaError("document: expected an object");

    ParsedDocument doc;
    doc.doc_id = detail::get_string(root, "doc_id", "document");
    doc.title = detail::get_string(root, "title", "document");
    doc.parse_scale = detail::get_number(detail::require(root, "parse_scale", "document"), "document.parse_scale");
    if (!(doc.parse_scale > 0)) throw InvariantError("parse_scale must be positive");

    const std::string units = root.value("coordinates", std::string("parse"));
    if (units != "parse" && units != "points") throw SchemaError("document.coordinates: must be 'parse' or 'points'");
    const std::string origin = root.value("origin", std::string("top-left"));
    if (origin != "top-left" && origin != "bottom-left")
        throw SchemaError("document.origin: must be 'top-left' or 'bottom-left'");
    const double scale = units == "points" ? 1.0 : doc.parse_scale;

    const auto& pages = detail::get_array(root, "pages", "document");
    for (std::size_t i = 0; i < pages.size(); ++i) {
        const std::string path = "pages[" + std::to_string(i) + "]";
        Page p;
        p.width = detail::get_number(detail::require(pages[i], "width", path), path + ".width") * scale;
        p.height = detail::get_number(detail::require(pages[i], "height", path), path + ".height") * scale;
        doc.pages.push_back(p);
    }

    const auto& sections = detail::get_array(root, "sections", "document");
    for (std::size_t i = 0; i < sections.size(); ++i) {
        const std::string path = "sections[" + std::to_string(i) + "]";
        SectionHeader s;
        s.index = i;
        if (auto it = sections[i].find("index"); sections[i].is_object() && it != sections[i].end())
            s.index = detail::get_ordinal(*it, path + ".index");
        s.page = detail::get_ordinal(detail::require(sections[i], "page", path), path + ".page");
        s.text = detail::get_string(sections[i], "text", path);
        const auto& depth = detail::require(sections[i], "depth", path);
        if (!depth.is_number_integer()) throw SchemaError(path + ".depth: expected an integer");
        s.depth = depth.get<int>();
        doc.sections.push_back(std::move(s));
    }

    const auto& sentences = detail::get_array(root, "sentences", "document");
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const std::string path = "sentences[" + std::to_string(i) + "]";
        const auto& js = sentences[i];
        SentenceSpan s;
        s.index = detail::get_ordinal(detail::require(js, "index", path), path + ".index");
        s.page = detail::get_ordinal(detail::require(js, "page", path), path + ".page");
        s.text = detail::get_string(js, "text", path);
        const auto& boxes = detail::get_array(js, "boxes", path);
        for (std::size_t b = 0; b < boxes.size(); ++b) {
            const std::string bpath = path + ".boxes[" + std::to_string(b) + "]";
            if (!boxes[b].is_array() || boxes[b].size() != 4)
                throw SchemaError(bpath + ": expected [x, y, w, h]");
            Rect r{detail::get_number(boxes[b][0], bpath + "[0]") * scale,
                   detail::get_number(boxes[b][1], bpath + "[1]") * scale,
                   detail::get_number(boxes[b][2], bpath + "[2]") * scale,
                   detail::get_number(boxes[b][3], bpath + "[3]") * scale};
            if (origin == "bottom-left") {
                if (s.page >= doc.pages.size()) throw InvariantError(path + ".page does not exist");
                r.y = doc.pages[s.page].height - r.y - r.height;
            }
            s.boxes.push_back(r);
        }
        if (auto it = js.find("section_index"); it != js.end() && !it->is_null())
            s.section_index = detail::get_ordinal(*it, path + ".section_index");
        doc.sentences.push_back(std::move(s));
    }

    const auto& bib = detail::get_array(root, "bib", "document");
    for (std::size_t i = 0; i < bib.size(); ++i) {
        const std::string path = "bib[" + std::to_string(i) + "]";
        BibEntry b;
        b.bib_key = detail::get_string(bib[i], "bib_key", path);
        b.raw_text = detail::get_string(bib[i], "raw_text", path);
        b.title = detail::get_optional<std::string>(bib[i], "title", path);
        b.year = detail::get_optional<int>(bib[i], "year", path);
        b.resolved_paper_id = detail::get_optional<std::string>(bib[i], "resolved_paper_id", path);
        doc.bib_entries.push_back(std::move(b));
    }

    const auto& markers = detail::get_array(root, "markers", "document");
    for (std::size_t i = 0; i < markers.size(); ++i) {
        const std::string path = "markers[" + std::to_string(i) + "]";
        InlineCitationMarker m;
        m.sentence_index = detail::get_ordinal(detail::require(markers[i], "sentence_index", path),
                                               path + ".sentence_index");
        const auto& range = detail::require(markers[i], "char_range", path);
        if (!range.is_array() || range.size() != 2) throw SchemaError(path + ".char_range: expected [begin, end]");
        m.char_range = {detail::get_ordinal(range[0], path + ".char_range[0]"),
                        detail::get_ordinal(range[1], path + ".char_range[1]")};
        m.surface = detail::get_string(markers[i], "surface", path);
        m.bib_key = detail::get_string(markers[i], "bib_key", path);
        doc.markers.push_back(std::move(m));
    }

    validate(doc);
    return doc;
}

// Emits the native schema with boxes already in points, so that ingesting the
// output reproduces `doc` exactly.
inline nlohmann::ordered_json to_json(const ParsedDocument& doc) {
    using oj = nlohmann::ordered_json;
    oj root;
    root["doc_id"] = doc.doc_id;
    root["title"] = doc.title;
    root["parse_scale"] = doc.parse_scale;
    root["coordinates"] = "points";
    root["pages"] = oj::array();
    for (const auto& p : doc.pages) root["pages"].push_back({{"width", p.width}, {"height", p.height}});
    root["sections"] = oj::array();
    for (const auto& s : doc.sections)
        root["sections"].push_back({{"index", s.index}, {"page", s.page}, {"text", s.text}, {"depth", s.depth}});
    root["sentences"] = oj::array();
    for (const auto& s : doc.sentences) {
        oj js;
        js["index"] = s.index;
        js["page"] = s.page;
        js["text"] = s.text;
        js["boxes"] = oj::array();
        for (const auto& b : s.boxes) js["boxes"].push_back({b.x, b.y, b.width, b.height});
        js["section_index"] = s.section_index ? oj(*s.section_index) : oj(nullptr);
        root["sentences"].push_back(std::move(js));
    }
    root["bib"] = oj::array();
    for (const auto& b : doc.bib_entries) {
        oj jb;
        jb["bib_key"] = b.bib_key;
        jb["raw_text"] = b.raw_text;
        jb["title"] = b.title ? oj(*b.title) : oj(nullptr);
        jb["year"] = b.year ? oj(*b.year) : oj(nullptr);
        jb["resolved_paper_id"] = b.resolved_paper_id ? oj(*b.resolved_paper_id) : oj(nullptr);
        root["bib"].push_back(std::move(jb));
    }
    root["markers"] = oj::array();
    for (const auto& m : doc.markers)
        root["markers"].push_back({{"sentence_index", m.sentence_index},
                                   {"char_range", {m.char_range.begin, m.char_range.end}},
                                   {"surface", m.surface},
                                   {"bib_key", m.bib_key}});
    return root;
}

inline std::string serialize_document(const ParsedDocument& doc) { return to_json(doc).dump(2) + "\n"; }

namespace detail {

inline bool is_closer(char c) { return c == ')' || c == ']' || c == '"' || c == '\''; }

// Ends in . ! or ?, optionally followed by closing brackets or quotes
// (including typographic closing quotes).
inline bool ends_sentence(std::string_view text) {
    text = trim_view(text);
    while (!text.empty()) {
        if (is_closer(text.back())) {
            text.remove_suffix(1);
            continue;
        }
        // U+2019 and U+201D are E2 80 99 / E2 80 9D
        if (text.size() >= 3 && static_cast<unsigned char>(text[text.size() - 3]) == 0xE2 &&
            static_cast<unsigned char>(text[text.size() - 2]) == 0x80 &&
            (static_cast<unsigned char>(text.back()) == 0x99 || static_cast<unsigned char>(text.back()) == 0x9D)) {
            text.remove_suffix(3);
            continue;
        }
        break;
    }
    if (text.empty()) return false;
    const char last = text.back();
    return last == '.' || last == '!' || last == '?';
}

}  // namespace detail

// Merges adjacent same-page sentences where the first lacks terminal
// punctuation and the second starts lowercase or with a citation marker.
// Merged text joins with one space; markers are remapped into the survivor,
// which keeps the earlier reading-order index.
inline ParsedDocument merge_fragmented_sentences(const ParsedDocument& doc, std::size_t* merge_count = nullptr) {
    ParsedDocument out = doc;
    out.sentences.clear();
    std::size_t merges = 0;

    auto starts_with_marker = [&](const SentenceSpan& s) {
        const std::size_t lead = s.text.find_first_not_of(" \t\r\n");
        for (const auto& m : doc.markers)
            if (m.sentence_index == s.index && m.char_range.begin == lead) return true;
        return false;
    };

    struct Remap {
        std::size_t target_index;
        std::size_t offset;
    };
    std::map<std::size_t, Remap> remaps;  // merged-away index -> survivor

    for (const auto& s : doc.sentences) {
        if (!out.sentences.empty()) {
            auto& prev = out.sentences.back();
            if (prev.page == s.page && !detail::ends_sentence(prev.text) &&
                (detail::starts_with_lowercase(s.text) || starts_with_marker(s))) {
                const std::size_t offset = prev.text.size() + 1;
                prev.text += ' ';
                prev.text += s.text;
                prev.boxes.insert(prev.boxes.end(), s.boxes.begin(), s.boxes.end());
                remaps[s.index] = {prev.index, offset};
                ++merges;
                continue;
            }
        }
        out.sentences.push_back(s);
    }

    for (auto& m : out.markers) {
        auto it = remaps.find(m.sentence_index);
        if (it == remaps.end()) continue;
        m.sentence_index = it->second.target_index;
        m.char_range.begin += it->second.offset;
        m.char_range.end += it->second.offset;
    }

    if (merge_count) *merge_count = merges;
    return out;
}

}  // namespace threadloom
