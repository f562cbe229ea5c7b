#pragma once

// Importer for TEI-style XML parses that carry `coords` attributes
// ("page,x,y,w,h;..." with 1-based pages, points, top-left origin).

#include <cstdlib>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "threadloom/detail/text.hpp"
#include "threadloom/doc_model.hpp"
#include "threadloom/errors.hpp"

namespace threadloom {

namespace detail::tei {

using boost::property_tree::ptree;

inline std::optional<std::string> attr(const ptree& node, const std::string& name) {
    auto attrs = node.get_child_optional("<xmlattr>");
    if (!attrs) return std::nullopt;
    auto v = attrs->get_optional<std::string>(name);
    if (!v) return std::nullopt;
    return *v;
}

// All descendant text in document order.
inline void collect_text(const ptree& node, std::string& out) {
    for (const auto& [name, child] : node) {
        if (name == "<xmlattr>" || name == "<xmlcomment>") continue;
        if (name == "<xmltext>") {
            out += child.data();
        } else {
            collect_text(child, out);
        }
    }
}

inline std::string text_of(const ptree& node) {
    std::string out;
    collect_text(node, out);
    return collapse_whitespace(out);
}

inline std::vector<PageRect> parse_coords(const std::string& coords, const std::string& where) {
    std::vector<PageRect> boxes;
    std::stringstream ss(coords);
    std::string item;
    while (std::getline(ss, item, ';')) {
        if (trim_view(item).empty()) continue;
        std::vector<double> v;
        std::stringstream is(item);
        std::string num;
        while (std::getline(is, num, ',')) {
            char* end = nullptr;
            const double d = std::strtod(num.c_str(), &end);
            if (end == num.c_str()) throw SchemaError(where + ".coords: '" + item + "' is not numeric");
            v.push_back(d);
        }
        if (v.size() != 5 || v[0] < 1) throw SchemaError(where + ".coords: expected page,x,y,w,h");
        boxes.push_back({static_cast<std::size_t>(v[0]) - 1, Rect{v[1], v[2], v[3], v[4]}});
    }
    return boxes;
}

// Appends text while collapsing whitespace, so marker offsets stay exact.
struct TextBuilder {
    std::string out;
    bool pending_space = false;

    void append(std::string_view piece) {
        for (char c : piece) {
            if (is_space(c)) {
                pending_space = !out.empty();
                continue;
            }
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        }
    }

    // Offset at which the next non-space character will land.
    std::size_t next_offset() const { return out.size() + (pending_space ? 1 : 0); }
};

struct Importer {
    ParsedDocument doc;
    std::size_t current_page = 0;
    std::optional<std::size_t> current_section;
    std::vector<InlineCitationMarker> markers;

    void sentence(const ptree& node, const std::string& where) {
        auto coords = attr(node, "coords");
        if (!coords) throw SchemaError(where + ": sentence without coords");
        auto boxes = parse_coords(*coords, where);
        if (boxes.empty()) throw SchemaError(where + ": sentence without coords");

        SentenceSpan s;
        s.index = doc.sentences.size();
        s.page = boxes.front().page;
        for (const auto& b : boxes)
            if (b.page == s.page) s.boxes.push_back(b.rect);
        s.section_index = current_section;

        TextBuilder tb;
        std::vector<InlineCitationMarker> local;
        for (const auto& [name, child] : node) {
            if (name == "<xmlattr>" || name == "<xmlcomment>") continue;
            if (name == "<xmltext>") {
                tb.append(child.data());
                continue;
            }
            const std::string surface = text_of(child);
            if (name == "ref" && attr(child, "type").value_or("") == "bibr" && !surface.empty()) {
                InlineCitationMarker m;
                m.sentence_index = s.index;
                m.char_range.begin = tb.next_offset();
                tb.append(surface);
                m.char_range.end = tb.out.size();
                m.surface = surface;
                std::string target = attr(child, "target").value_or("");
                if (!target.empty() && target.front() == '#') target.erase(0, 1);
                m.bib_key = target;
                local.push_back(std::move(m));
            } else {
                tb.append(surface);
            }
        }
        s.text = tb.out;
        if (trim_view(s.text).empty()) return;
        current_page = s.page;
        doc.sentences.push_back(std::move(s));
        for (auto& m : local) markers.push_back(std::move(m));
    }

    void head(const ptree& node, int depth) {
        SectionHeader h;
        h.index = doc.sections.size();
        h.text = text_of(node);
        h.page = current_page;
        if (auto coords = attr(node, "coords")) {
            auto boxes = parse_coords(*coords, "head");
            if (!boxes.empty()) h.page = boxes.front().page;
        }
        if (auto n = attr(node, "n")) {
            int dots = 0;
            for (char c : *n) dots += c == '.';
            // "2." and "2" are both top level.
            if (!n->empty() && n->back() == '.') --dots;
            depth = std::max(depth, dots + 1);
        }
        h.depth = depth;
        if (h.text.empty()) return;
        current_section = h.index;
        doc.sections.push_back(std::move(h));
    }

    void walk(const ptree& node, int depth) {
        for (const auto& [name, child] : node) {
            if (name == "div") {
                walk(child, depth + 1);
            } else if (name == "head") {
                head(child, std::max(depth, 1));
            } else if (name == "s") {
                sentence(child, "s[" + std::to_string(doc.sentences.size()) + "]");
            } else if (name == "p") {
                bool has_s = child.count("s") > 0;
                if (has_s) {
                    walk(child, depth);
                } else if (attr(child, "coords")) {
                    sentence(child, "p");
                }
            } else if (name == "figure" || name == "formula" || name == "<xmlattr>" || name == "<xmltext>") {
                continue;
            } else {
                walk(child, depth);
            }
        }
    }

    void bibliography(const ptree& list_bibl) {
        for (const auto& [name, entry] : list_bibl) {
            if (name != "biblStruct") continue;
            BibEntry b;
            b.bib_key = attr(entry, "xml:id").value_or("b" + std::to_string(doc.bib_entries.size()));

            std::vector<std::string> surnames;
            std::optional<std::string> title;
            auto scan_part = [&](const ptree& part) {
                for (const auto& [pname, pchild] : part) {
                    if (pname == "title" && !title) {
                        auto t = text_of(pchild);
                        if (!t.empty()) title = t;
                    } else if (pname == "author") {
                        if (auto pers = pchild.get_child_optional("persName")) {
                            if (auto sn = pers->get_child_optional("surname")) surnames.push_back(text_of(*sn));
                        }
                    }
                }
            };
            if (auto analytic = entry.get_child_optional("analytic")) scan_part(*analytic);
            if (auto monogr = entry.get_child_optional("monogr")) {
                scan_part(*monogr);
                if (auto imprint = monogr->get_child_optional("imprint")) {
                    for (const auto& [iname, ichild] : *imprint) {
                        if (iname != "date") continue;
                        std::string when = attr(ichild, "when").value_or(text_of(ichild));
                        if (when.size() >= 4) {
                            const int y = std::atoi(when.substr(0, 4).c_str());
                            if (y > 0) b.year = y;
                        }
                        break;
                    }
                }
            }
            b.title = title;

            for (const auto& [nname, nchild] : entry) {
                if (nname == "note" && attr(nchild, "type").value_or("") == "raw_reference") b.raw_text = text_of(nchild);
            }
            if (b.raw_text.empty()) {
                b.raw_text = join(surnames, ", ");
                if (title) b.raw_text += (b.raw_text.empty() ? "" : ". ") + *title;
                if (b.year) b.raw_text += ". " + std::to_string(*b.year);
                b.raw_text += ".";
            }
            doc.bib_entries.push_back(std::move(b));
        }
    }
};

}  // namespace detail::tei

// Converts a TEI document to the native model; the result is validated.
inline ParsedDocument import_tei(std::string_view xml) {
    namespace pt = boost::property_tree;
    pt::ptree root;
    try {
        std::istringstream in{std::string(xml)};
        pt::read_xml(in, root, pt::xml_parser::no_concat_text | pt::xml_parser::no_comments);
    } catch (const pt::xml_parser_error& e) {
        throw SchemaError(std::string("tei: malformed XML: ") + e.what());
    }
    auto tei = root.get_child_optional("TEI");
    if (!tei) throw SchemaError("tei: missing <TEI> root element");

    detail::tei::Importer im;
    im.doc.parse_scale = 1.0;

    if (auto header = tei->get_child_optional("teiHeader")) {
        if (auto ts = header->get_child_optional("fileDesc.titleStmt.title")) im.doc.title = detail::tei::text_of(*ts);
        if (auto sd = header->get_child_optional("fileDesc.sourceDesc.biblStruct")) {
            for (const auto& [name, child] : *sd) {
                if (name == "idno" && detail::tei::attr(child, "type").value_or("") == "MD5")
                    im.doc.doc_id = detail::tei::text_of(child);
            }
        }
    }
    if (im.doc.doc_id.empty()) im.doc.doc_id = detail::sha256_hex(xml).substr(0, 16);

    if (auto fac = tei->get_child_optional("facsimile")) {
        for (const auto& [name, surface] : *fac) {
            if (name != "surface") continue;
            auto num = [&](const char* a) {
                auto v = detail::tei::attr(surface, a);
                return v ? std::strtod(v->c_str(), nullptr) : 0.0;
            };
            im.doc.pages.push_back(Page{num("lrx") - num("ulx"), num("lry") - num("uly")});
        }
    }

    auto text = tei->get_child_optional("text");
    if (!text) throw SchemaError("tei: missing <text> element");
    if (auto body = text->get_child_optional("body")) im.walk(*body, 0);
    if (auto back = text->get_child_optional("back")) {
        std::function<void(const pt::ptree&)> find_bibl = [&](const pt::ptree& node) {
            for (const auto& [name, child] : node) {
                if (name == "listBibl") {
                    im.bibliography(child);
                } else if (name != "<xmlattr>" && name != "<xmltext>") {
                    find_bibl(child);
                }
            }
        };
        find_bibl(*back);
    }

    // Letter-size pages for any page referenced but not declared.
    std::size_t max_page = 0;
    for (const auto& s : im.doc.sentences) max_page = std::max(max_page, s.page + 1);
    for (const auto& h : im.doc.sections) max_page = std::max(max_page, h.page + 1);
    while (im.doc.pages.size() < max_page) im.doc.pages.push_back(Page{612, 792});

    im.doc.markers = std::move(im.markers);
    validate(im.doc);
    return im.doc;
}

// Dispatches on content: a leading '<' selects the TEI importer.
inline ParsedDocument ingest_any(std::string_view raw) {
    const auto body = detail::trim_view(raw);
    if (!body.empty() && body.front() == '<') return import_tei(raw);
    return ingest_document(raw);
}

}  // namespace threadloom
