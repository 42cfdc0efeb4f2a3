#pragma once
// Synthetic stylistic populations for tests and the bundled fixture.
//
// Three styles with disjoint surface features:
//   sports   lowercase words, sentences end with '!'
//   finance  uppercase words and integers separated by ';'
//   science  Capitalized words with decimal numbers, sentences end with '.'
// Each style trains its own character n-gram model; population responses are
// sampled from these models, and titles (contexts) are drawn in the same style.
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mop/corpus.hpp"
#include "mop/random.hpp"
#include "mop/toy_lm.hpp"

namespace mop {

inline constexpr std::size_t kSyntheticStyles = 3;
const std::vector<std::string>& synthetic_style_names();

std::string style_document(std::size_t style, Rng& rng);
std::string style_title(std::size_t style, Rng& rng);
std::vector<std::string> style_corpus(std::size_t style, std::size_t docs, std::uint64_t seed);
/// Equal mix of all styles, interleaved.
std::vector<std::string> mixed_style_corpus(std::size_t docs_per_style, std::uint64_t seed);

/// Plain review-like English sharing no vocabulary with the styles: a stand-in for a
/// general-purpose base model's training text.
std::vector<std::string> generic_prose_corpus(std::size_t docs, std::uint64_t seed);

class SyntheticPopulation {
public:
    explicit SyntheticPopulation(std::uint64_t seed, std::size_t docs_per_style = 300, int max_tokens = 120);

    /// One record of population `style`: a styled title and a response sampled from the style's model.
    Record sample(std::size_t style, const std::string& id, Rng& rng) const;

    /// Exactly round(w_s * n) records of each style (the last style absorbs rounding), in shuffled order.
    /// Labels hold the style name.
    std::vector<Record> sample_mixture(const std::vector<double>& weights, std::size_t n, std::uint64_t seed,
                                       const std::string& id_prefix = "r") const;

    const ToyLanguageModel& model(std::size_t style) const { return *models_.at(style); }

private:
    std::vector<std::unique_ptr<ToyLanguageModel>> models_;
    int max_tokens_;
};

}  // namespace mop
