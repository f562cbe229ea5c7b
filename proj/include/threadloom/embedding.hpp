#pragma once

// Embedding vectors, cosine similarity, and the provider contract that
// thread suggestion runs on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "threadloom/detail/text.hpp"
#include "threadloom/errors.hpp"

namespace threadloom {

struct EmbeddingVector {
    std::vector<double> values;

    EmbeddingVector() = default;
    explicit EmbeddingVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t dim() const { return values.size(); }
    bool empty() const { return values.empty(); }

    double norm() const {
        double s = 0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }

    bool is_zero() const { return norm() == 0.0; }

    bool finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    EmbeddingVector scaled(double k) const {
        EmbeddingVector out = *this;
        for (double& v : out.values) v *= k;
        return out;
    }

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

inline void require_same_dim(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw DimensionMismatch("embedding dimensions differ: " + std::to_string(a.dim()) + " vs " +
                                std::to_string(b.dim()));
}

// Throws ZeroVector when either side has zero norm.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    require_same_dim(a, b);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0 || nb == 0) throw ZeroVector("cosine similarity of a zero-norm vector");
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(c, -1.0, 1.0);
}

// Zero-norm inputs score 0 instead of throwing.
inline double cosine_or_zero(const EmbeddingVector& a, const EmbeddingVector& b) {
    require_same_dim(a, b);
    if (a.is_zero() || b.is_zero()) return 0.0;
    return cosine(a, b);
}

inline EmbeddingVector centroid(std::span<const EmbeddingVector> members) {
    if (members.empty()) throw InvalidArgument("centroid of an empty set");
    EmbeddingVector c(std::vector<double>(members.front().dim(), 0.0));
    for (const auto& m : members) {
        require_same_dim(c, m);
        for (std::size_t i = 0; i < m.dim(); ++i) c.values[i] += m.values[i];
    }
    for (double& v : c.values) v /= static_cast<double>(members.size());
    return c;
}

// Implementations must be deterministic for a fixed configuration and safe
// for concurrent calls.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual EmbeddingVector embed(std::string_view text) const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::string name() const = 0;
};

// Hashed bag-of-words: folded tokens minus stop words, counted into `dim`
// buckets by seeded FNV-1a, then L2-normalised. Identical texts embed
// identically; stop-word-only text embeds as the zero vector.
class HashingEmbedder final : public EmbeddingProvider {
public:
    static constexpr std::size_t kDefaultDim = 64;
    static constexpr std::uint64_t kDefaultSeed = 0x5eed7417ULL;

    explicit HashingEmbedder(std::size_t dim = kDefaultDim, std::uint64_t seed = kDefaultSeed)
        : dim_(dim), seed_(seed) {
        if (dim_ == 0) throw InvalidArgument("embedding dimension must be positive");
    }

    EmbeddingVector embed(std::string_view text) const override {
        std::vector<double> v(dim_, 0.0);
        for (const auto& token : detail::tokenize(text)) {
            if (is_stop_word(token)) continue;
            const std::uint64_t h = detail::fnv1a64(token, 0xcbf29ce484222325ULL ^ seed_);
            v[h % dim_] += 1.0;
        }
        double n = 0;
        for (double x : v) n += x * x;
        if (n > 0) {
            n = std::sqrt(n);
            for (double& x : v) x /= n;
        }
        return EmbeddingVector(std::move(v));
    }

    std::size_t dim() const override { return dim_; }
    std::string name() const override { return "hashing"; }

    static bool is_stop_word(const std::string& token) {
        static const std::unordered_set<std::string> words = {
            "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it",
            "its", "of", "on", "or", "that", "the", "their", "this", "to", "was", "we", "were", "with"};
        return words.count(token) > 0;
    }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

}  // namespace threadloom
