#pragma once

// Brute-force reference for chain ranking, written without the library's
// traversal or similarity helpers: chains are rebuilt leaf-up from a parent
// map, similarities use normalized dot products.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "threadloom/embedding.hpp"
#include "threadloom/thread_store.hpp"

namespace oracle {

struct Node {
    std::string id;
    std::string label;
    std::string parent;  // empty for roots
    std::int64_t stamp = 0;
    std::size_t order = 0;  // pre-order position, for member ties
};

struct ChainResult {
    std::vector<std::string> path;  // root first
    double objective = 0;
    std::vector<std::string> member_order;
};

inline std::vector<double> unit(const std::vector<double>& v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    std::vector<double> out(v.size(), 0.0);
    if (n == 0) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

inline double sim(const std::vector<double>& a, const std::vector<double>& b) {
    auto ua = unit(a), ub = unit(b);
    double d = 0;
    for (std::size_t i = 0; i < ua.size(); ++i) d += ua[i] * ub[i];
    return std::max(-1.0, std::min(1.0, d));
}

inline long long q(double v) { return std::llround(v / 1e-9); }

inline std::vector<Node> flatten(const threadloom::Workspace& ws) {
    std::vector<Node> nodes;
    std::function<void(const threadloom::Thread&, const std::string&)> walk = [&](const threadloom::Thread& t,
                                                                                const std::string& parent) {
        nodes.push_back({t.thread_id, t.label, parent, t.last_additive_change, nodes.size()});
        for (const auto& c : t.children) walk(c, t.thread_id);
    };
    for (const auto& t : ws.threads)
        if (t.thread_id != threadloom::kUnorganizedId) walk(t, "");
    return nodes;
}

// Ranked chains as computed straight from the definition.
inline std::vector<ChainResult> rank(const threadloom::Workspace& ws, const std::vector<double>& target,
                                     const threadloom::EmbeddingProvider& provider) {
    const auto nodes = flatten(ws);
    std::map<std::string, const Node*> by_id;
    std::map<std::string, int> child_count;
    for (const auto& n : nodes) {
        by_id[n.id] = &n;
        if (!n.parent.empty()) child_count[n.parent]++;
    }
    struct Scored {
        ChainResult r;
        std::int64_t latest;
        std::string leaf;
        std::size_t leaf_order;
    };
    std::vector<Scored> scored;
    for (const auto& n : nodes) {
        if (child_count.count(n.id)) continue;  // not a leaf
        std::vector<const Node*> path;
        for (const Node* cur = &n; cur; cur = cur->parent.empty() ? nullptr : by_id[cur->parent]) path.insert(path.begin(), cur);
        std::vector<std::vector<double>> embs;
        for (const Node* p : path) embs.push_back(provider.embed(p->label).values);
        std::vector<double> mean(target.size(), 0.0);
        for (const auto& e : embs)
            for (std::size_t i = 0; i < e.size(); ++i) mean[i] += e[i] / static_cast<double>(embs.size());
        const double group = sim(mean, target);
        double coh = -2;
        std::vector<std::pair<double, std::size_t>> member;
        for (std::size_t i = 0; i < embs.size(); ++i) {
            const double s = sim(embs[i], target);
            coh = std::max(coh, s);
            member.push_back({s, i});
        }
        // insertion sort keeps the root-first order among equal scores
        for (std::size_t i = 1; i < member.size(); ++i)
            for (std::size_t j = i; j > 0 && q(member[j].first) > q(member[j - 1].first); --j)
                std::swap(member[j], member[j - 1]);
        Scored s;
        for (const Node* p : path) s.r.path.push_back(p->id);
        s.r.objective = group * coh;
        for (const auto& [_, i] : member) s.r.member_order.push_back(path[i]->id);
        s.latest = 0;
        for (const Node* p : path) s.latest = std::max(s.latest, p->stamp);
        s.leaf = n.id;
        s.leaf_order = n.order;
        scored.push_back(std::move(s));
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (q(a.r.objective) != q(b.r.objective)) return q(a.r.objective) > q(b.r.objective);
        if (a.latest != b.latest) return a.latest > b.latest;
        return a.leaf < b.leaf;
    });
    std::vector<ChainResult> out;
    for (auto& s : scored) out.push_back(std::move(s.r));
    return out;
}

inline std::size_t leaf_count(const threadloom::Workspace& ws) {
    std::size_t leaves = 0;
    threadloom::for_each_thread(ws.threads, [&](const threadloom::Thread& t, std::size_t) {
        if (t.thread_id != threadloom::kUnorganizedId && t.children.empty()) ++leaves;
    });
    return leaves;
}

}  // namespace oracle
