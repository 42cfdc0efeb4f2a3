#pragma once
// Population simulation: sample a persona c ~ pi(x), an exemplar h ~ Omega_c(x),
// then a response from the backend prompted with (g_c, e_h, x) at temperature tau_c.
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mop/gating.hpp"
#include "mop/random.hpp"

namespace mop {

struct GenerationRecord {
    std::string text;
    int persona_id = -1;   // -1 for the zero-shot baseline and mixed personas
    int exemplar_id = -1;
    double tau_used = 1.0;
    std::string context;
    std::uint64_t seed = 0;
    std::string backend_fingerprint;
    std::optional<std::string> label;
    /// Filled for mixed-persona generations: the sampled (persona, exemplar) pairs.
    std::vector<std::pair<int, int>> mixed_pairs;
    std::string mixed_persona;
};

std::string serialize_generations(const std::vector<GenerationRecord>& records);
/// Generated texts as corpus records (id "gen-<i>", no label unless attached).
std::vector<Record> generations_as_records(const std::vector<GenerationRecord>& records);

/// Where input contexts come from.
struct ContextSource {
    enum class Kind { empty, cycle, sample };
    Kind kind = Kind::empty;
    std::vector<std::string> contexts;
    std::uint64_t seed = 0;

    static ContextSource empty_context() { return {}; }
    static ContextSource cycle_list(std::vector<std::string> contexts);
    static ContextSource sample_from(std::vector<std::string> contexts, std::uint64_t seed);
    /// Context of the i-th generation.
    std::string at(std::size_t i) const;
    std::string name() const;
};

struct SimulationOptions {
    int max_tokens = 64;
    /// Sentiment ("positive"/"negative") for steered tasks, or a persona label for topic tasks.
    std::optional<std::string> label;
    /// Number of personas to mix per generation; 0 disables mixing.
    std::size_t mix_l = 0;
    double mixing_temperature = 1.0;
};

struct Latent {
    std::size_t persona = 0;
    std::size_t exemplar = 0;
};

struct MixedPersona {
    std::string description;
    std::vector<SelectedPair> pairs;  // in sampled order
    double tau = 1.0;                 // pi-weighted mean of the sampled personas' tau
};

/// Holds one set of gating parameters and samples generations from it.
class Simulator {
public:
    Simulator(const std::vector<Persona>& personas, const ExemplarPool& pool, const GateState& state,
              const Embedder& embedder, const LanguageModel& backend, const GatingParams& params,
              TaskTemplates templates);

    /// pi(x) and Omega(x); memoized per distinct context.
    const GateEval& gates(const std::string& context) const;

    /// Samples (c, h). `allowed` restricts personas (renormalizing pi over them).
    Latent sample_latents(const std::string& context, Rng& rng,
                          const std::vector<std::size_t>* allowed = nullptr) const;

    GenerationRecord sample_generation(const std::string& context, std::uint64_t seed,
                                       const SimulationOptions& options = {}) const;

    std::vector<GenerationRecord> simulate(const ContextSource& source, std::size_t count, std::uint64_t seed,
                                           const SimulationOptions& options = {}) const;

    /// Samples L pairs with distinct personas by pi * Omega and asks the backend to merge them.
    MixedPersona mix_personas(const std::string& context, std::size_t l, std::uint64_t seed,
                              double temperature = 1.0) const;

    /// Steering text for a sentiment label on this task ("" when the task is topic-routed).
    std::string steering_text(const std::string& label, const std::string& context) const;
    /// Personas carrying `label`; throws when there are none.
    std::vector<std::size_t> personas_with_label(const std::string& label) const;

    const TaskTemplates& templates() const noexcept { return templates_; }

private:
    const std::vector<Persona>& personas_;
    const ExemplarPool& pool_;
    const Embedder& embedder_;
    const LanguageModel& backend_;
    const GatingParams& params_;
    TaskTemplates templates_;
    GateNetwork net_;
    mutable std::map<std::string, GateEval> gate_memo_;
};

/// Zero-shot baseline: no persona, no exemplar, the task's plain request at `temperature`.
std::vector<GenerationRecord> simulate_zero_shot(const LanguageModel& backend, const TaskTemplates& templates,
                                                 const ContextSource& source, std::size_t count, std::uint64_t seed,
                                                 double temperature, const SimulationOptions& options = {});

}  // namespace mop
