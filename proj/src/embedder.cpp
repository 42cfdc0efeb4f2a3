#include "mop/embedder.hpp"

#include <cmath>

#include "mop/error.hpp"
#include "mop/hashing.hpp"

namespace mop {

Matrix Embedder::embed_batch(std::span<const std::string> texts) const {
    Matrix out(texts.size(), dim());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        std::vector<double> v;
        try {
            v = embed(texts[i]);
        } catch (const TransportError& e) {
            throw TransportError(e.endpoint(), e.attempts(), e.last_status(),
                                 std::string("embedding text #") + std::to_string(i) + " failed");
        }
        std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
}

HashingEmbedder::HashingEmbedder(std::size_t dim, std::size_t ngram) : dim_(dim), ngram_(ngram) {
    if (dim == 0 || ngram == 0) throw ValidationError("hashing embedder needs positive dim and n");
}

EmbedderFingerprint HashingEmbedder::fingerprint() const {
    const std::string cfg = "fnv1a64-signed;n=" + std::to_string(ngram_) + ";dim=" + std::to_string(dim_);
    return {"hashing-char-ngram", dim_, hex64(fnv1a64(cfg))};
}

std::pair<std::size_t, double> HashingEmbedder::bucket(std::string_view gram) const {
    const std::uint64_t h = fnv1a64(gram);
    return {static_cast<std::size_t>(h % dim_), (h >> 63) ? -1.0 : 1.0};
}

std::vector<double> HashingEmbedder::embed(const std::string& text) const {
    std::vector<double> v(dim_, 0.0);
    if (text.empty()) return v;

    const std::string_view s(text);
    const std::size_t n = std::min(ngram_, s.size());
    auto accumulate = [&](bool signed_buckets) {
        for (std::size_t i = 0; i + n <= s.size(); ++i) {
            const auto [b, sign] = bucket(s.substr(i, n));
            v[b] += signed_buckets ? sign : 1.0;
        }
    };
    accumulate(true);
    double norm2 = simd::dot(v.data(), v.data(), dim_);
    if (norm2 == 0.0) {
        accumulate(false);
        norm2 = simd::dot(v.data(), v.data(), dim_);
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

std::vector<double> MemoEmbedder::embed(const std::string& text) const {
    {
        std::lock_guard lock(mu_);
        if (auto it = memo_.find(text); it != memo_.end()) return it->second;
    }
    auto v = inner_->embed(text);
    std::lock_guard lock(mu_);
    memo_.emplace(text, v);
    return v;
}

Matrix MemoEmbedder::embed_batch(std::span<const std::string> texts) const {
    std::vector<std::string> missing;
    {
        std::lock_guard lock(mu_);
        for (const auto& t : texts) {
            if (!memo_.count(t)) missing.push_back(t);
        }
    }
    if (!missing.empty()) {
        const Matrix fresh = inner_->embed_batch(missing);
        std::lock_guard lock(mu_);
        for (std::size_t i = 0; i < missing.size(); ++i) {
            memo_.emplace(missing[i], std::vector<double>(fresh.row(i).begin(), fresh.row(i).end()));
        }
    }
    Matrix out(texts.size(), dim());
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto& v = memo_.at(texts[i]);
        std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace mop
