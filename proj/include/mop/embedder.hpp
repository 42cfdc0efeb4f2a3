#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "mop/matrix.hpp"

namespace mop {

struct EmbedderFingerprint {
    std::string name;
    std::size_t dim = 0;
    std::string config_hash;

    std::string str() const { return name + "/" + std::to_string(dim) + "/" + config_hash; }
    friend bool operator==(const EmbedderFingerprint&, const EmbedderFingerprint&) = default;
};

/// Sentence encoder interface. Every gate and metric consumes only this.
///
/// Vectors are unit-norm, except that the empty string maps to the zero vector.
class Embedder {
public:
    virtual ~Embedder() = default;

    virtual std::size_t dim() const = 0;
    virtual EmbedderFingerprint fingerprint() const = 0;
    virtual std::vector<double> embed(const std::string& text) const = 0;

    /// Row i equals embed(texts[i]).
    virtual Matrix embed_batch(std::span<const std::string> texts) const;
};

/// Character n-gram feature hashing with signed buckets, L2-normalized.
///
/// Each byte n-gram of the text (the whole text when shorter than n) is hashed
/// with 64-bit FNV-1a; the low bits pick bucket `h % dim` and the top bit picks
/// the sign. If signed collisions cancel every bucket of a non-empty text, the
/// unsigned counts are used instead so the result stays unit-norm.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dim = 256, std::size_t ngram = 3);

    std::size_t dim() const override { return dim_; }
    std::size_t ngram() const noexcept { return ngram_; }
    EmbedderFingerprint fingerprint() const override;
    std::vector<double> embed(const std::string& text) const override;

    /// (bucket, sign) of one n-gram.
    std::pair<std::size_t, double> bucket(std::string_view gram) const;

private:
    std::size_t dim_;
    std::size_t ngram_;
};

/// Caches embeddings of an inner embedder for the lifetime of the object.
class MemoEmbedder final : public Embedder {
public:
    explicit MemoEmbedder(std::shared_ptr<const Embedder> inner) : inner_(std::move(inner)) {}

    std::size_t dim() const override { return inner_->dim(); }
    EmbedderFingerprint fingerprint() const override { return inner_->fingerprint(); }
    std::vector<double> embed(const std::string& text) const override;
    Matrix embed_batch(std::span<const std::string> texts) const override;

private:
    std::shared_ptr<const Embedder> inner_;
    mutable std::mutex mu_;
    mutable std::map<std::string, std::vector<double>> memo_;
};

}  // namespace mop
