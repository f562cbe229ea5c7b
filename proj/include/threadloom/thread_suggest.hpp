#pragma once

// Suggests where new content belongs: vertical chains of threads are scored
// against the content embedding by group similarity x cohesion, then the
// members of each chain are ranked by their own similarity.

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "threadloom/embedding.hpp"
#include "threadloom/errors.hpp"
#include "threadloom/thread_store.hpp"

namespace threadloom {

struct ThreadChain {
    std::vector<std::string> member_thread_ids;  // root to leaf
    EmbeddingVector centroid;

    friend bool operator==(const ThreadChain&, const ThreadChain&) = default;
};

struct MemberScore {
    std::string thread_id;
    double similarity = 0;

    friend bool operator==(const MemberScore&, const MemberScore&) = default;
};

struct RankedSuggestion {
    ThreadChain chain;
    double group_similarity = 0;
    double cohesion = 0;
    double objective = 0;
    std::vector<MemberScore> member_ranking;  // descending similarity
    std::int64_t latest_change = 0;
};

struct FlatSuggestion {
    std::string thread_id;
    std::string label;
    double similarity = 0;  // member vs target
    double objective = 0;   // of the chain it was taken from
    std::size_t chain_rank = 0;
};

inline constexpr std::size_t kDefaultSuggestions = 5;

// Scores closer than this are ties; keeps orderings stable against rounding
// noise (e.g. when every embedding is rescaled).
inline constexpr double kScoreResolution = 1e-9;

inline std::int64_t quantize_score(double v) { return std::llround(v / kScoreResolution); }

// Label embeddings keyed by label text, so a rename naturally misses the
// cache. Safe for concurrent use.
class LabelEmbeddings {
public:
    explicit LabelEmbeddings(const EmbeddingProvider& provider) : provider_(provider) {}

    EmbeddingVector get(const std::string& label) const {
        {
            std::lock_guard lock(mu_);
            auto it = cache_.find(label);
            if (it != cache_.end()) return it->second;
        }
        EmbeddingVector v = provider_.embed(label);
        std::lock_guard lock(mu_);
        return cache_.emplace(label, std::move(v)).first->second;
    }

    const EmbeddingProvider& provider() const { return provider_; }

private:
    const EmbeddingProvider& provider_;
    mutable std::mutex mu_;
    mutable std::unordered_map<std::string, EmbeddingVector> cache_;
};

// Every maximal root-to-leaf path, depth first, in drawer and child order.
// The unorganized thread is not part of any chain.
inline std::vector<std::vector<const Thread*>> chain_paths(const Workspace& ws) {
    std::vector<std::vector<const Thread*>> out;
    std::vector<const Thread*> path;
    std::function<void(const Thread&)> dfs = [&](const Thread& t) {
        path.push_back(&t);
        if (t.children.empty()) out.push_back(path);
        for (const auto& c : t.children) dfs(c);
        path.pop_back();
    };
    for (const auto& t : ws.threads)
        if (t.thread_id != kUnorganizedId) dfs(t);
    return out;
}

inline std::vector<ThreadChain> enumerate_chains(const Workspace& ws, const LabelEmbeddings& embeddings) {
    std::vector<ThreadChain> out;
    for (const auto& path : chain_paths(ws)) {
        ThreadChain c;
        std::vector<EmbeddingVector> members;
        for (const Thread* t : path) {
            c.member_thread_ids.push_back(t->thread_id);
            members.push_back(embeddings.get(t->label));
        }
        c.centroid = centroid(members);
        out.push_back(std::move(c));
    }
    return out;
}

// cosine(mean of members, target); throws ZeroVector on a zero norm.
inline double group_similarity(std::span<const EmbeddingVector> members, const EmbeddingVector& target) {
    if (members.empty()) throw InvalidArgument("chain has no members");
    return cosine(centroid(members), target);
}

// max over members of cosine(member, target); throws ZeroVector.
inline double cohesion(std::span<const EmbeddingVector> members, const EmbeddingVector& target) {
    if (members.empty()) throw InvalidArgument("chain has no members");
    double best = -1.0;
    for (const auto& m : members) best = std::max(best, cosine(m, target));
    return best;
}

// Chains by descending group_similarity x cohesion; ties go to the chain with
// the most recent additive change, then the smaller leaf id. Zero-norm
// embeddings score 0 instead of failing.
inline std::vector<RankedSuggestion> rank_chains(const Workspace& ws, const EmbeddingVector& target,
                                                 const LabelEmbeddings& embeddings) {
    std::vector<RankedSuggestion> out;
    for (const auto& path : chain_paths(ws)) {
        RankedSuggestion s;
        std::vector<EmbeddingVector> members;
        for (const Thread* t : path) {
            s.chain.member_thread_ids.push_back(t->thread_id);
            members.push_back(embeddings.get(t->label));
            s.latest_change = std::max(s.latest_change, t->last_additive_change);
        }
        s.chain.centroid = centroid(members);
        s.group_similarity = cosine_or_zero(s.chain.centroid, target);
        std::vector<std::pair<double, std::size_t>> sims;
        double best = 0;
        for (std::size_t i = 0; i < members.size(); ++i) {
            const double sim = cosine_or_zero(members[i], target);
            sims.push_back({sim, i});
            best = i == 0 ? sim : std::max(best, sim);
        }
        s.cohesion = best;
        s.objective = s.group_similarity * s.cohesion;
        std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
            return quantize_score(a.first) > quantize_score(b.first);
        });
        for (const auto& [sim, i] : sims) s.member_ranking.push_back({s.chain.member_thread_ids[i], sim});
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const RankedSuggestion& a, const RankedSuggestion& b) {
        const auto qa = quantize_score(a.objective), qb = quantize_score(b.objective);
        if (qa != qb) return qa > qb;
        if (a.latest_change != b.latest_change) return a.latest_change > b.latest_change;
        return a.chain.member_thread_ids.back() < b.chain.member_thread_ids.back();
    });
    return out;
}

inline std::vector<RankedSuggestion> rank_chains(const Workspace& ws, const std::string& target_text,
                                                 const LabelEmbeddings& embeddings) {
    return rank_chains(ws, embeddings.provider().embed(target_text), embeddings);
}

// Chains in rank order, each contributing its members best first; a thread
// reached through several chains keeps its first (best) appearance.
inline std::vector<FlatSuggestion> flatten(const Workspace& ws, const std::vector<RankedSuggestion>& ranked,
                                           std::size_t k = kDefaultSuggestions) {
    std::vector<FlatSuggestion> out;
    std::set<std::string> seen;
    for (std::size_t rank = 0; rank < ranked.size() && out.size() < k; ++rank) {
        for (const auto& m : ranked[rank].member_ranking) {
            if (out.size() >= k) break;
            if (!seen.insert(m.thread_id).second) continue;
            const Thread* t = ws.find_thread(m.thread_id);
            out.push_back({m.thread_id, t ? t->label : std::string(), m.similarity, ranked[rank].objective, rank});
        }
    }
    return out;
}

inline std::vector<FlatSuggestion> suggest_for_text(const Workspace& ws, const std::string& text,
                                                    const LabelEmbeddings& embeddings,
                                                    std::size_t k = kDefaultSuggestions) {
    return flatten(ws, rank_chains(ws, text, embeddings), k);
}

// Uses the tank's context text as the target; an image-only or empty tank
// has nothing to compare and yields no suggestions.
inline std::vector<FlatSuggestion> suggest_for_tank(const Workspace& ws, const HoldingTank& tank,
                                                    const LabelEmbeddings& embeddings,
                                                    std::size_t k = kDefaultSuggestions) {
    if (!tank.context) return {};
    return suggest_for_text(ws, tank.context->text, embeddings, k);
}

}  // namespace threadloom
