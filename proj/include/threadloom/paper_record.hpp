#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "threadloom/embedding.hpp"
#include "threadloom/errors.hpp"

namespace threadloom {

// How a citing paper mentions one of the papers it cites.
struct CitationSnippet {
    std::string cited_paper_id;
    std::string snippet;
    std::string intent;

    friend bool operator==(const CitationSnippet&, const CitationSnippet&) = default;
};

// External paper metadata as returned by the metadata service.
struct PaperRecord {
    std::string paper_id;
    std::string title;
    int year = 0;  // 0 when the service does not know it
    std::optional<EmbeddingVector> embedding;
    std::optional<std::string> tldr;
    std::optional<std::string> url;
    std::vector<CitationSnippet> citation_contexts;

    friend bool operator==(const PaperRecord&, const PaperRecord&) = default;
};

// Accepts the service's record shape: `paperId`, `title`, `year`, and the
// optional `tldr` / `embedding` either as plain values or as
// `{"text": ...}` / `{"vector": [...]}` objects.
inline PaperRecord paper_record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("paper record: expected an object");
    PaperRecord r;
    auto id = j.find("paperId");
    if (id == j.end() || !id->is_string() || id->get<std::string>().empty())
        throw SchemaError("paper record: missing paperId");
    r.paper_id = id->get<std::string>();
    if (auto t = j.find("title"); t != j.end() && t->is_string()) r.title = t->get<std::string>();
    if (auto y = j.find("year"); y != j.end() && y->is_number_integer()) r.year = y->get<int>();
    if (auto u = j.find("url"); u != j.end() && u->is_string()) r.url = u->get<std::string>();
    if (auto t = j.find("tldr"); t != j.end()) {
        if (t->is_string()) {
            r.tldr = t->get<std::string>();
        } else if (t->is_object() && t->contains("text") && (*t)["text"].is_string()) {
            r.tldr = (*t)["text"].get<std::string>();
        }
    }
    if (auto e = j.find("embedding"); e != j.end() && !e->is_null()) {
        const nlohmann::json* vec = &*e;
        if (e->is_object()) {
            auto v = e->find("vector");
            vec = v == e->end() ? nullptr : &*v;
        }
        if (vec && vec->is_array()) {
            std::vector<double> values;
            for (const auto& x : *vec) {
                if (!x.is_number()) throw SchemaError("paper record: non-numeric embedding entry");
                values.push_back(x.get<double>());
            }
            EmbeddingVector ev(std::move(values));
            if (!ev.finite()) throw SchemaError("paper record: non-finite embedding");
            if (!ev.empty()) r.embedding = std::move(ev);
        }
    }
    return r;
}

inline nlohmann::ordered_json to_json(const PaperRecord& r) {
    nlohmann::ordered_json j;
    j["paperId"] = r.paper_id;
    j["title"] = r.title;
    j["year"] = r.year;
    if (r.tldr) j["tldr"] = {{"text", *r.tldr}};
    if (r.url) j["url"] = *r.url;
    if (r.embedding) j["embedding"] = {{"vector", r.embedding->values}};
    return j;
}

}  // namespace threadloom
