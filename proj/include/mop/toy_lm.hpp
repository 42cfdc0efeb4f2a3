#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mop/lm_backend.hpp"

namespace mop {

struct ToyLmConfig {
    /// Byte vocabulary. Bytes outside it are skipped by the tokenizer.
    std::string alphabet = default_alphabet();
    int order = 3;
    /// Additive smoothing of the static counts.
    double alpha = 0.1;
    /// Adds an end-of-text token (the last vocabulary id).
    bool end_token = true;
    /// Weight of one in-context n-gram occurrence. 0 gives a plain n-gram model.
    double cache_weight = 1.0;
    /// Pseudo-count of the static model inside the in-context estimate.
    double cache_prior = 2.0;
    /// Histories never seen in training fall back to their longest seen suffix
    /// instead of a uniform row.
    bool backoff = true;

    static std::string default_alphabet();
};

/// Character n-gram language model with additive smoothing, plus an in-context
/// cache: n-grams already present in the conditioning text (prompt followed by
/// the continuation so far) raise the probability of repeating them,
///
///   p(c | h) = (cache_weight * C(h, c) + cache_prior * p_static(c | h))
///              / (cache_weight * C(h) + cache_prior)
///   p_static(c | h) = (N(h, c) + alpha) / (N(h) + alpha * V)
///
/// where N counts the training corpus and C counts the conditioning text. With
/// backoff on, h in p_static is the longest suffix of the history seen in training.
/// Logits are log-probabilities, so every row normalizes exactly.
class ToyLanguageModel final : public LanguageModel {
public:
    ToyLanguageModel(ToyLmConfig config, const std::vector<std::string>& training_docs);

    std::string fingerprint() const override { return fingerprint_; }
    ScoreSheet score(const std::string& prompt, const std::string& continuation) const override;
    std::string generate(const std::string& prompt, double temperature, int max_tokens,
                         std::uint64_t seed) const override;

    const ToyLmConfig& config() const noexcept { return config_; }
    std::size_t vocab_size() const noexcept { return vocab_size_; }
    int end_id() const noexcept { return config_.end_token ? static_cast<int>(vocab_size_) - 1 : -1; }

    std::vector<int> tokenize(const std::string& text) const;
    std::string detokenize(const std::vector<int>& ids) const;

    /// Logits of the next token after `text` (whole text conditions, as in scoring).
    std::vector<double> next_logits(const std::string& text) const;

private:
    struct Counts {
        std::vector<double> by_token;
        double total = 0.0;
    };

    class Context;

    std::uint64_t history_key(const std::vector<int>& stream, std::size_t pos, int length) const;
    std::uint64_t history_key(const std::vector<int>& stream, std::size_t pos) const {
        return history_key(stream, pos, config_.order - 1);
    }
    const Counts* static_counts(const std::vector<int>& stream, std::size_t pos) const;
    void fill_logits(const std::vector<int>& stream, std::size_t pos, const Context& cache,
                     std::vector<double>& out) const;

    ToyLmConfig config_;
    std::size_t vocab_size_;
    int bos_id_;
    std::vector<int> byte_to_id_;
    std::vector<char> id_to_byte_;
    std::vector<std::unordered_map<std::uint64_t, Counts>> static_counts_;  // by history length
    std::string fingerprint_;
};

}  // namespace mop
