#pragma once

// Random thread forests with labels from a small vocabulary, so label
// embeddings overlap and ties occur.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "threadloom/embedding.hpp"
#include "threadloom/thread_store.hpp"

namespace testsupport {

inline const std::vector<std::string>& label_vocabulary() {
    static const std::vector<std::string> words = {
        "citation", "graph",   "neural",   "reading", "interface", "summary", "coverage", "ranking",
        "thread",   "context", "embedding", "survey",  "parsing",   "pdf",     "notes",    "recommendation"};
    return words;
}

inline std::string random_label(std::mt19937_64& rng) {
    const auto& w = label_vocabulary();
    std::uniform_int_distribution<std::size_t> pick(0, w.size() - 1), len(1, 3);
    std::string s;
    const std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + w[pick(rng)];
    return s;
}

inline threadloom::Workspace random_workspace(std::mt19937_64& rng, std::size_t max_nodes = 50) {
    using namespace threadloom;
    Workspace ws = Workspace::fresh();
    std::uniform_int_distribution<std::size_t> count(0, max_nodes);
    std::uniform_int_distribution<std::int64_t> stamp(1, 40);  // small range, so ties happen
    const std::size_t n = count(rng);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
        Thread t;
        t.thread_id = "t" + std::to_string(i + 1);
        t.label = random_label(rng);
        t.created_at = t.last_additive_change = stamp(rng);
        ws.clock = std::max(ws.clock, t.last_additive_change);
        if (ids.empty() || rng() % 3 == 0) {
            ws.threads.push_back(std::move(t));
        } else {
            Thread* parent = ws.find_thread(ids[rng() % ids.size()]);
            parent->children.push_back(std::move(t));
        }
        ids.push_back("t" + std::to_string(i + 1));
    }
    sort_drawer(ws);
    return ws;
}

// Wraps a provider and multiplies every embedding by a fixed positive factor.
class ScaledProvider final : public threadloom::EmbeddingProvider {
public:
    ScaledProvider(const threadloom::EmbeddingProvider& inner, double k) : inner_(inner), k_(k) {}
    threadloom::EmbeddingVector embed(std::string_view text) const override { return inner_.embed(text).scaled(k_); }
    std::size_t dim() const override { return inner_.dim(); }
    std::string name() const override { return "scaled-" + inner_.name(); }

private:
    const threadloom::EmbeddingProvider& inner_;
    double k_;
};

// Fixed label -> vector table; unknown texts embed to zero.
class TableProvider final : public threadloom::EmbeddingProvider {
public:
    explicit TableProvider(std::map<std::string, std::vector<double>> table, std::size_t dim)
        : table_(std::move(table)), dim_(dim) {}
    threadloom::EmbeddingVector embed(std::string_view text) const override {
        auto it = table_.find(std::string(text));
        return threadloom::EmbeddingVector(it == table_.end() ? std::vector<double>(dim_, 0.0) : it->second);
    }
    std::size_t dim() const override { return dim_; }
    std::string name() const override { return "table"; }

private:
    std::map<std::string, std::vector<double>> table_;
    std::size_t dim_;
};

}  // namespace testsupport
