#pragma once

// Per-thread paper recommendations by citation coverage: papers citing many
// of the thread's references rank first, the top sample is re-sorted by
// recency with similarity to the references' centroid breaking year ties.
// Also builds the thread overview (indented tree, clips, grouped references).

#include <algorithm>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "threadloom/embedding.hpp"
#include "threadloom/errors.hpp"
#include "threadloom/metadata_client.hpp"
#include "threadloom/paper_record.hpp"
#include "threadloom/thread_store.hpp"
#include "threadloom/thread_suggest.hpp"

namespace threadloom {

inline constexpr std::size_t kCitationFetchCap = 1000;
inline constexpr std::size_t kRecommendationSample = 50;

struct CoverageScore {
    std::string candidate;
    std::set<std::string> covered;  // thread reference ids the candidate cites
    std::size_t count = 0;

    friend bool operator==(const CoverageScore&, const CoverageScore&) = default;
};

struct CoverageResult {
    std::vector<std::string> references;  // thread references with external ids
    std::map<std::string, CoverageScore> scores;
    std::map<std::string, PaperRecord> records;  // candidate metadata, merged citation snippets
    std::vector<std::string> warnings;
};

struct Recommendation {
    PaperRecord candidate;
    CoverageScore coverage;
    std::optional<double> cosine_to_centroid;
    std::size_t rank = 0;  // 1-based
};

struct RecommendationSet {
    std::string thread_id;
    std::uint64_t revision = 0;
    std::vector<std::string> references;
    std::vector<Recommendation> items;
    std::vector<std::string> warnings;
};

struct DiscoveryOptions {
    std::size_t fetch_cap = kCitationFetchCap;
    std::size_t sample_size = kRecommendationSample;
    std::size_t parallel_fetches = 4;
};

// Every paper filed in the thread or its descendants, pre-order.
inline std::vector<const PaperRef*> subtree_papers(const Thread& t) {
    std::vector<const PaperRef*> out;
    std::function<void(const Thread&)> walk = [&](const Thread& n) {
        for (const auto& p : n.papers) out.push_back(&p);
        for (const auto& c : n.children) walk(c);
    };
    walk(t);
    return out;
}

// Distinct external ids among the subtree's papers, first appearance order.
inline std::vector<std::string> thread_references(const Thread& t) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const PaperRef* p : subtree_papers(t))
        if (!p->local && seen.insert(p->paper_id).second) out.push_back(p->paper_id);
    return out;
}

inline const Thread& require_thread(const Workspace& ws, const std::string& thread_id) {
    const Thread* t = ws.find_thread(thread_id);
    if (!t) throw NoSuchThread("no thread " + thread_id);
    return *t;
}

// Fetches up to `fetch_cap` citing papers per reference and counts, per
// candidate, the distinct references it cites. Papers already in the thread
// are never candidates. Failed fetches become warnings; a fixture miss does not.
inline CoverageResult collect_citing(const Workspace& ws, const std::string& thread_id, MetadataClient& client,
                                     const DiscoveryOptions& options = {}) {
    const Thread& thread = require_thread(ws, thread_id);
    CoverageResult result;
    result.references = thread_references(thread);
    if (result.references.empty()) throw NoResolvedRefs("thread " + thread_id + " has no references with external ids");
    const std::size_t cap = std::min(options.fetch_cap, kCitationFetchCap);

    std::set<std::string> excluded;
    for (const PaperRef* p : subtree_papers(thread)) excluded.insert(p->paper_id);

    struct Fetched {
        std::vector<PaperRecord> citing;
        std::optional<std::string> warning;
    };
    auto fetch = [&](const std::string& ref) {
        Fetched f;
        try {
            f.citing = client.citations_of(ref, cap);
        } catch (const FixtureMiss&) {
            throw;
        } catch (const Error& e) {
            f.warning = ref + ": " + e.code() + " " + e.what();
        }
        return f;
    };

    // Fetch in parallel batches; reduce strictly in reference order.
    const std::size_t batch = std::max<std::size_t>(1, options.parallel_fetches);
    std::vector<Fetched> fetched(result.references.size());
    for (std::size_t start = 0; start < result.references.size(); start += batch) {
        std::vector<std::future<Fetched>> running;
        const std::size_t end = std::min(result.references.size(), start + batch);
        for (std::size_t i = start; i < end; ++i)
            running.push_back(std::async(std::launch::async, fetch, std::cref(result.references[i])));
        for (std::size_t i = start; i < end; ++i) fetched[i] = running[i - start].get();
    }

    for (std::size_t i = 0; i < result.references.size(); ++i) {
        const std::string& ref = result.references[i];
        if (fetched[i].warning) result.warnings.push_back(*fetched[i].warning);
        for (auto& rec : fetched[i].citing) {
            if (excluded.count(rec.paper_id)) continue;
            auto& score = result.scores[rec.paper_id];
            score.candidate = rec.paper_id;
            score.covered.insert(ref);
            score.count = score.covered.size();
            auto [pos, inserted] = result.records.emplace(rec.paper_id, rec);
            if (!inserted)
                for (auto& c : rec.citation_contexts) pos->second.citation_contexts.push_back(std::move(c));
        }
    }
    return result;
}

// Centroid of the references' embeddings; references without one (or with a
// different dimension than the first) are left out. Absent when none qualify.
inline std::optional<EmbeddingVector> reference_centroid(const std::vector<std::string>& references,
                                                         MetadataClient& client,
                                                         std::vector<std::string>* warnings = nullptr) {
    std::vector<EmbeddingVector> embs;
    for (const auto& ref : references) {
        try {
            const PaperRecord r = client.paper(ref);
            if (!r.embedding || r.embedding->is_zero()) continue;
            if (!embs.empty() && r.embedding->dim() != embs.front().dim()) continue;
            embs.push_back(*r.embedding);
        } catch (const FixtureMiss&) {
            throw;
        } catch (const Error& e) {
            if (warnings) warnings->push_back(ref + ": " + e.code() + " " + e.what());
        }
    }
    if (embs.empty()) return std::nullopt;
    return centroid(embs);
}

// Top `sample_size` by coverage (ties: newer year, then paper id), then that
// sample by year descending; within a year, embedded candidates by
// descending cosine to the centroid, then those without, then paper id.
inline std::vector<Recommendation> rank_recommendations(const CoverageResult& coverage,
                                                        const std::optional<EmbeddingVector>& centroid_vec,
                                                        std::size_t sample_size = kRecommendationSample) {
    std::vector<Recommendation> all;
    for (const auto& [id, score] : coverage.scores) {
        Recommendation r;
        r.candidate = coverage.records.at(id);
        r.coverage = score;
        if (centroid_vec && r.candidate.embedding && !r.candidate.embedding->is_zero() &&
            r.candidate.embedding->dim() == centroid_vec->dim())
            r.cosine_to_centroid = cosine(*r.candidate.embedding, *centroid_vec);
        all.push_back(std::move(r));
    }
    std::sort(all.begin(), all.end(), [](const Recommendation& a, const Recommendation& b) {
        if (a.coverage.count != b.coverage.count) return a.coverage.count > b.coverage.count;
        if (a.candidate.year != b.candidate.year) return a.candidate.year > b.candidate.year;
        return a.candidate.paper_id < b.candidate.paper_id;
    });
    if (all.size() > std::min(sample_size, kRecommendationSample)) all.resize(std::min(sample_size, kRecommendationSample));
    std::sort(all.begin(), all.end(), [](const Recommendation& a, const Recommendation& b) {
        if (a.candidate.year != b.candidate.year) return a.candidate.year > b.candidate.year;
        if (a.cosine_to_centroid.has_value() != b.cosine_to_centroid.has_value()) return a.cosine_to_centroid.has_value();
        if (a.cosine_to_centroid) {
            const auto qa = quantize_score(*a.cosine_to_centroid), qb = quantize_score(*b.cosine_to_centroid);
            if (qa != qb) return qa > qb;
        }
        return a.candidate.paper_id < b.candidate.paper_id;
    });
    for (std::size_t i = 0; i < all.size(); ++i) all[i].rank = i + 1;
    return all;
}

// Recomputes recommendations from the thread's current references.
inline RecommendationSet refresh(const Workspace& ws, const std::string& thread_id, MetadataClient& client,
                                 const DiscoveryOptions& options = {}) {
    CoverageResult coverage = collect_citing(ws, thread_id, client, options);
    RecommendationSet set;
    set.thread_id = thread_id;
    set.revision = ws.revision;
    set.references = coverage.references;
    set.warnings = coverage.warnings;
    const auto c = reference_centroid(coverage.references, client, &set.warnings);
    set.items = rank_recommendations(coverage, c, options.sample_size);
    return set;
}

// ---------------------------------------------------------------------------
// Overview

struct ReferenceGroup {
    std::optional<std::string> context_id;  // absent for the ungrouped tail
    std::string context_text;
    std::vector<PaperRef> papers;
};

struct OverviewEntry {
    std::string thread_id;
    std::string label;
    std::size_t depth = 0;  // 0 for the overview's root thread
    std::vector<Clip> clips;
    std::vector<ReferenceGroup> groups;
};

struct Overview {
    std::uint64_t revision = 0;
    std::vector<OverviewEntry> entries;  // pre-order
    std::optional<RecommendationSet> recommendations;
};

inline std::vector<ReferenceGroup> group_references(const Workspace& ws, const std::vector<PaperRef>& papers) {
    std::vector<ReferenceGroup> groups;
    ReferenceGroup ungrouped;
    std::map<std::string, std::size_t> index;
    for (const auto& p : papers) {
        if (!p.source_context) {
            ungrouped.papers.push_back(p);
            continue;
        }
        auto [it, inserted] = index.emplace(*p.source_context, groups.size());
        if (inserted) {
            ReferenceGroup g;
            g.context_id = *p.source_context;
            if (const ContextRecord* c = ws.find_context(*p.source_context)) g.context_text = c->text;
            groups.push_back(std::move(g));
        }
        groups[it->second].papers.push_back(p);
    }
    if (!ungrouped.papers.empty()) groups.push_back(std::move(ungrouped));
    return groups;
}

inline Overview build_overview(const Workspace& ws, const std::string& thread_id,
                               std::optional<RecommendationSet> recommendations = std::nullopt) {
    const Thread& root = require_thread(ws, thread_id);
    Overview ov;
    ov.revision = ws.revision;
    std::function<void(const Thread&, std::size_t)> walk = [&](const Thread& t, std::size_t depth) {
        ov.entries.push_back({t.thread_id, t.label, depth, t.clips, group_references(ws, t.papers)});
        for (const auto& c : t.children) walk(c, depth + 1);
    };
    walk(root, 0);
    ov.recommendations = std::move(recommendations);
    return ov;
}

inline nlohmann::ordered_json to_json(const Recommendation& r) {
    nlohmann::ordered_json j;
    j["rank"] = r.rank;
    j["paper"] = to_json(r.candidate);
    j["coverage"] = r.coverage.count;
    j["covered"] = r.coverage.covered;
    j["cosine_to_centroid"] = r.cosine_to_centroid ? nlohmann::ordered_json(*r.cosine_to_centroid) : nullptr;
    nlohmann::ordered_json snippets = nlohmann::ordered_json::array();
    for (const auto& c : r.candidate.citation_contexts)
        snippets.push_back({{"cited_paper_id", c.cited_paper_id}, {"snippet", c.snippet}, {"intent", c.intent}});
    j["citation_contexts"] = snippets;
    return j;
}

inline nlohmann::ordered_json to_json(const RecommendationSet& s) {
    nlohmann::ordered_json j;
    j["thread_id"] = s.thread_id;
    j["revision"] = s.revision;
    j["references"] = s.references;
    j["items"] = nlohmann::ordered_json::array();
    for (const auto& r : s.items) j["items"].push_back(to_json(r));
    j["warnings"] = s.warnings;
    return j;
}

inline nlohmann::ordered_json to_json(const Overview& ov) {
    nlohmann::ordered_json j;
    j["revision"] = ov.revision;
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : ov.entries) {
        nlohmann::ordered_json ej;
        ej["thread_id"] = e.thread_id;
        ej["label"] = e.label;
        ej["depth"] = e.depth;
        ej["clips"] = nlohmann::ordered_json::array();
        for (const auto& c : e.clips) ej["clips"].push_back(to_json(c));
        ej["reference_groups"] = nlohmann::ordered_json::array();
        for (const auto& g : e.groups) {
            nlohmann::ordered_json gj;
            gj["context_id"] = g.context_id ? nlohmann::ordered_json(*g.context_id) : nullptr;
            gj["context_text"] = g.context_text;
            gj["papers"] = nlohmann::ordered_json::array();
            for (const auto& p : g.papers) gj["papers"].push_back(to_json(p));
            ej["reference_groups"].push_back(std::move(gj));
        }
        j["entries"].push_back(std::move(ej));
    }
    j["recommendations"] = ov.recommendations ? to_json(*ov.recommendations) : nlohmann::ordered_json();
    return j;
}

// Plain-text rendering; two spaces of indentation per thread level.
inline std::string render_overview(const Overview& ov) {
    std::ostringstream out;
    auto year = [](int y) { return y ? " (" + std::to_string(y) + ")" : std::string(); };
    for (const auto& e : ov.entries) {
        const std::string pad(e.depth * 2, ' ');
        out << pad << "# " << e.label << "\n";
        for (const auto& c : e.clips) {
            out << pad << "  clip: ";
            if (c.kind == ClipKind::Text) {
                out << "\"" << c.text << "\"";
            } else {
                out << "[image " << c.mime << "]";
            }
            out << " (" << c.source.doc_id;
            if (c.source.page) out << " p." << *c.source.page + 1;
            out << ")\n";
        }
        for (const auto& g : e.groups) {
            if (g.context_id) {
                out << pad << "  context: \"" << g.context_text << "\"\n";
            } else {
                out << pad << "  other references:\n";
            }
            for (const auto& p : g.papers) {
                out << pad << "    - ";
                if (p.surface) out << *p.surface << " ";
                out << p.title << year(p.year) << "\n";
            }
        }
    }
    if (ov.recommendations) {
        const auto& rs = *ov.recommendations;
        out << "recommendations (revision " << rs.revision << ", " << rs.references.size() << " references)\n";
        for (const auto& r : rs.items) {
            out << "  " << r.rank << ". " << r.candidate.title << year(r.candidate.year) << " covers "
                << r.coverage.count << "/" << rs.references.size() << "\n";
            for (const auto& c : r.candidate.citation_contexts) {
                out << "     cites " << c.cited_paper_id;
                if (!c.intent.empty()) out << " [" << c.intent << "]";
                out << ": \"" << c.snippet << "\"\n";
            }
        }
    }
    return out.str();
}

}  // namespace threadloom
