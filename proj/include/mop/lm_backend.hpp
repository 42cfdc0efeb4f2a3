#pragma once

// Language-model contract: per-token scores from which tempered sequence
// likelihoods are evaluated locally, and temperature-controlled sampling.

#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace mop {

/// Top-k form of one row. `rest_logsumexp` summarizes every logit outside the
/// top-k (-inf when the top-k already covers the vocabulary) and `rest_count`
/// is how many vocabulary entries it stands for.
struct TopKSupport {
    std::vector<int> ids;
    std::vector<double> logits;
    double rest_logsumexp = -std::numeric_limits<double>::infinity();
    double rest_count = 0.0;
};

struct TokenScoreRow {
    int target_token = 0;
    double target_logit = 0.0;
    /// Either the full logit vector over the vocabulary, or a top-k summary.
    std::variant<std::vector<double>, TopKSupport> support;
};

struct ScoreSheet {
    std::vector<TokenScoreRow> rows;
    std::uint64_t prompt_hash = 0;
    std::uint64_t continuation_hash = 0;
};

/// Tempered log-likelihood and its derivative in tau.
struct TemperedValue {
    double loglik = 0.0;
    double dtau = 0.0;
};

/// sum_t [ z_t(y_t)/tau - logsumexp_v z_t(v)/tau ], with the tau-derivative.
///
/// For top-k rows the rest mass is modelled as `rest_count` tokens of equal
/// logit (with the target taken out of the rest when it is not in the top-k).
/// That is exact at tau = 1 and whenever k covers the vocabulary; for other
/// temperatures it is an approximation.
TemperedValue tempered(const ScoreSheet& sheet, double tau);
double tempered_loglik(const ScoreSheet& sheet, double tau);
double tempered_loglik_dtau(const ScoreSheet& sheet, double tau);
TemperedValue tempered_row(const TokenScoreRow& row, double tau);

/// log sum_v exp(z_v) over a row's whole support.
double row_logsumexp(const TokenScoreRow& row);

class LanguageModel {
public:
    virtual ~LanguageModel() = default;

    /// Identifies the model; equal fingerprints promise identical scores.
    virtual std::string fingerprint() const = 0;

    /// One row per continuation token, conditioned on the prompt. Deterministic.
    virtual ScoreSheet score(const std::string& prompt, const std::string& continuation) const = 0;

    /// Sampled continuation of `prompt`. Stops at `max_tokens` or an end token.
    virtual std::string generate(const std::string& prompt, double temperature, int max_tokens,
                                 std::uint64_t seed) const = 0;
};

}  // namespace mop
