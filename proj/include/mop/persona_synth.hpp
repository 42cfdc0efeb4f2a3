#pragma once
// Persona synthesis: cluster response embeddings, then ask a generative backend
// to summarize each cluster's representative records.
#include <cstdint>
#include <string>
#include <vector>

#include "mop/corpus.hpp"
#include "mop/embedder.hpp"
#include "mop/kmeans.hpp"
#include "mop/lm_backend.hpp"
#include "mop/prompts.hpp"

namespace mop {

struct PersonaSynthConfig {
    std::size_t personas = 100;
    std::size_t representatives = 10;
    std::uint64_t seed = 0;
    KMeansOptions kmeans{100, 1e-6, 10};
    double temperature = 1.0;
    int max_tokens = 160;
    /// Extra generation attempts (with fresh seeds) before falling back to the stub.
    int retries = 2;
    std::size_t stub_terms = 5;
};

struct SynthesizedPersona {
    std::string description;
    bool fallback = false;
};

/// Renders the synthesis prompt over `examples`, generates, and returns the
/// description after the persona marker. Falls back to a stub listing the most
/// frequent terms of the examples when every attempt comes back empty.
SynthesizedPersona synthesize_persona(const std::vector<std::string>& examples, const LanguageModel& backend,
                                      const PromptTemplate& tpl, const PersonaSynthConfig& config,
                                      std::uint64_t seed);

/// Deterministic stub description: the most frequent words (3+ letters), ties alphabetical.
std::string stub_description(const std::vector<std::string>& examples, std::size_t terms);

inline constexpr const char* kUnknownLabel = "unknown";

/// Maps a classifier answer to one of `options`: a single option letter (A, B, ...)
/// standing alone, else a single option text contained in the answer, else "unknown".
std::string parse_label_answer(const std::string& answer, const std::vector<std::string>& options);

std::string label_persona(const Persona& persona, const TaskTemplates& templates, const LanguageModel& backend,
                          std::uint64_t seed, double temperature = 1.0);

struct PersonaSynthResult {
    std::vector<Persona> personas;
    ClusterAssignment clusters;
    std::size_t fallbacks = 0;
};

PersonaSynthResult synthesize_personas(const Dataset& records, const Embedder& embedder, const LanguageModel& backend,
                                       const TaskTemplates& templates, const PersonaSynthConfig& config);

/// {"K", "inertia", "sizes", "seed", "fallbacks"}
std::string serialize_cluster_report(const PersonaSynthResult& result, const PersonaSynthConfig& config);

}  // namespace mop
