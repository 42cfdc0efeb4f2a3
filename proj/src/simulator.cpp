#include "mop/simulator.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <json.hpp>

#include "mop/error.hpp"
#include "mop/random.hpp"

namespace mop {

namespace {

// Seeds of one generation: gate sampling and backend sampling never share a stream.
std::uint64_t gate_seed(std::uint64_t seed) { return derive_seed(seed, 0x9a7e); }
std::uint64_t backend_seed(std::uint64_t seed) { return derive_seed(seed, 0xb4c7); }

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

void check_source(const ContextSource& source, const TaskTemplates& templates) {
    if (source.kind == ContextSource::Kind::empty && templates.requires_context()) {
        throw ValidationError("task " + templates.task + " needs input contexts, but the context source is empty");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Output

std::string serialize_generations(const std::vector<GenerationRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json o;
        o["text"] = r.text;
        o["persona_id"] = r.persona_id;
        o["exemplar_id"] = r.exemplar_id;
        o["tau_used"] = r.tau_used;
        o["context"] = r.context;
        o["seed"] = r.seed;
        o["backend_fingerprint"] = r.backend_fingerprint;
        if (r.label) o["label"] = *r.label;
        if (!r.mixed_pairs.empty()) {
            o["mixed_pairs"] = r.mixed_pairs;
            o["mixed_persona"] = r.mixed_persona;
        }
        out += o.dump() + "\n";
    }
    return out;
}

std::vector<Record> generations_as_records(const std::vector<GenerationRecord>& records) {
    std::vector<Record> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        out.push_back({"gen-" + std::to_string(i), records[i].context, records[i].text, records[i].label});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Contexts

ContextSource ContextSource::cycle_list(std::vector<std::string> contexts) {
    if (contexts.empty()) throw ValidationError("context list is empty");
    return {Kind::cycle, std::move(contexts), 0};
}

ContextSource ContextSource::sample_from(std::vector<std::string> contexts, std::uint64_t seed) {
    if (contexts.empty()) throw ValidationError("no contexts to sample from");
    return {Kind::sample, std::move(contexts), seed};
}

std::string ContextSource::at(std::size_t i) const {
    switch (kind) {
        case Kind::empty:
            return "";
        case Kind::cycle:
            return contexts[i % contexts.size()];
        case Kind::sample: {
            Rng rng(derive_seed(seed, i));
            return contexts[rng.below(contexts.size())];
        }
    }
    return "";
}

std::string ContextSource::name() const {
    switch (kind) {
        case Kind::empty:
            return "empty";
        case Kind::cycle:
            return "cycle";
        case Kind::sample:
            return "sample";
    }
    return "empty";
}

// ---------------------------------------------------------------------------
// Simulator

Simulator::Simulator(const std::vector<Persona>& personas, const ExemplarPool& pool, const GateState& state,
                     const Embedder& embedder, const LanguageModel& backend, const GatingParams& params,
                     TaskTemplates templates)
    : personas_(personas), pool_(pool), embedder_(embedder), backend_(backend), params_(params),
      templates_(std::move(templates)), net_(params, state) {
    if (state.personas() != personas.size() || state.exemplars() != pool.size()) {
        throw ValidationError("gate state does not match the personas / pool");
    }
}

const GateEval& Simulator::gates(const std::string& context) const {
    auto it = gate_memo_.find(context);
    if (it == gate_memo_.end()) it = gate_memo_.emplace(context, net_.evaluate(embedder_.embed(context))).first;
    return it->second;
}

Latent Simulator::sample_latents(const std::string& context, Rng& rng, const std::vector<std::size_t>* allowed) const {
    const GateEval& ev = gates(context);
    Latent out;
    if (allowed) {
        std::vector<double> w;
        w.reserve(allowed->size());
        for (auto k : *allowed) w.push_back(std::exp(ev.log_pi[k]));
        out.persona = (*allowed)[rng.categorical(w)];
    } else {
        std::vector<double> w(ev.log_pi.size());
        for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::exp(ev.log_pi[k]);
        out.persona = rng.categorical(w);
    }
    std::vector<double> omega(ev.log_omega.cols());
    for (std::size_t j = 0; j < omega.size(); ++j) omega[j] = std::exp(ev.log_omega(out.persona, j));
    out.exemplar = rng.categorical(omega);
    return out;
}

std::string Simulator::steering_text(const std::string& label, const std::string& context) const {
    if (templates_.steering_clause.empty()) return "";
    if (label != "positive" && label != "negative") {
        throw ValidationError("task " + templates_.task + " steers by sentiment; label must be positive or negative");
    }
    return replace_all(replace_all(templates_.steering_clause, "{context}", context), "{sentiment}", label);
}

std::vector<std::size_t> Simulator::personas_with_label(const std::string& label) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < personas_.size(); ++k) {
        if (personas_[k].label && *personas_[k].label == label) out.push_back(k);
    }
    if (out.empty()) throw ValidationError("no persona carries label '" + label + "'");
    return out;
}

MixedPersona Simulator::mix_personas(const std::string& context, std::size_t l, std::uint64_t seed,
                                     double temperature) const {
    const std::size_t K = personas_.size();
    if (l < 2 || l > K) {
        throw ValidationError("persona mixing needs 2 <= L <= K (L=" + std::to_string(l) + ", K=" + std::to_string(K) + ")");
    }
    const GateEval& ev = gates(context);
    Rng rng(gate_seed(seed));
    std::vector<double> pi(K);
    for (std::size_t k = 0; k < K; ++k) pi[k] = std::exp(ev.log_pi[k]);

    MixedPersona out;
    std::vector<std::string> descriptions, examples;
    double weight_sum = 0.0, tau_sum = 0.0;
    for (std::size_t step = 0; step < l; ++step) {
        // Persona marginal of pi * Omega over personas not yet taken, then the exemplar given it.
        const std::size_t k = rng.categorical(pi);
        std::vector<double> omega(ev.log_omega.cols());
        for (std::size_t j = 0; j < omega.size(); ++j) omega[j] = std::exp(ev.log_omega(k, j));
        const std::size_t j = rng.categorical(omega);
        out.pairs.push_back({k, j, pi[k] * omega[j], ev.log_weight(k, j)});
        descriptions.push_back(personas_[k].description);
        examples.push_back(pool_.exemplars[j].response);
        weight_sum += pi[k];
        tau_sum += pi[k] * params_.tau(k);
        pi[k] = 0.0;
    }
    out.tau = weight_sum > 0.0 ? tau_sum / weight_sum : params_.tau(out.pairs.front().k);

    const std::string prompt =
        templates_.mixing.render({{"personas", numbered_list(descriptions)}, {"examples", numbered_list(examples)}});
    std::string text = strip_persona_marker(backend_.generate(prompt, temperature, 64, backend_seed(seed)));
    out.description = trim(text.substr(0, text.find('\n')));
    if (out.description.empty()) {
        spdlog::warn("persona mixing produced no text; joining the sampled descriptions");
        for (const auto& d : descriptions) out.description += (out.description.empty() ? "" : " ") + d;
    }
    return out;
}

GenerationRecord Simulator::sample_generation(const std::string& context, std::uint64_t seed,
                                              const SimulationOptions& options) const {
    if (options.max_tokens <= 0) throw ValidationError("max_tokens must be positive");
    GenerationRecord rec;
    rec.context = context;
    rec.seed = seed;
    rec.backend_fingerprint = backend_.fingerprint();
    rec.label = options.label;

    PromptBundle bundle;
    bundle.context = context;
    std::vector<std::size_t> allowed;
    if (options.label) {
        bundle.steer = steering_text(*options.label, context);
        if (templates_.steering_clause.empty()) allowed = personas_with_label(*options.label);
    }

    std::string prompt;
    if (options.mix_l > 0) {
        if (!allowed.empty()) throw ValidationError("persona mixing cannot be combined with topic routing");
        const MixedPersona mixed = mix_personas(context, options.mix_l, seed, options.mixing_temperature);
        // The mixed persona is followed by all L exemplars, in sampled order.
        Persona p{-1, mixed.description, PersonaSource::synthesized, std::nullopt, std::nullopt};
        Observation combined;
        for (const auto& pair : mixed.pairs) {
            combined.response += (combined.response.empty() ? "" : "\n") + pool_.exemplars[pair.j].response;
            rec.mixed_pairs.emplace_back(static_cast<int>(pair.k), static_cast<int>(pair.j));
        }
        combined.context = pool_.exemplars[mixed.pairs.front().j].context;
        bundle.persona = &p;
        bundle.exemplar = &combined;
        prompt = build_prompt(templates_.generation, bundle);
        rec.mixed_persona = mixed.description;
        rec.tau_used = mixed.tau;
    } else {
        Rng rng(gate_seed(seed));
        const Latent z = sample_latents(context, rng, allowed.empty() ? nullptr : &allowed);
        rec.persona_id = static_cast<int>(z.persona);
        rec.exemplar_id = static_cast<int>(z.exemplar);
        rec.tau_used = params_.tau(z.persona);
        bundle.persona = &personas_[z.persona];
        bundle.exemplar = &pool_.exemplars[z.exemplar];
        prompt = build_prompt(templates_.generation, bundle);
    }
    try {
        rec.text = backend_.generate(prompt, rec.tau_used, options.max_tokens, backend_seed(seed));
    } catch (const TransportError& e) {
        throw TransportError(e.endpoint(), e.attempts(), e.last_status(),
                             "generation for (c=" + std::to_string(rec.persona_id) +
                                 ", h=" + std::to_string(rec.exemplar_id) + ") failed");
    }
    rec.text = trim(rec.text);
    return rec;
}

std::vector<GenerationRecord> Simulator::simulate(const ContextSource& source, std::size_t count, std::uint64_t seed,
                                                  const SimulationOptions& options) const {
    check_source(source, templates_);
    std::vector<GenerationRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample_generation(source.at(i), derive_seed(seed, i), options));
    return out;
}

std::vector<GenerationRecord> simulate_zero_shot(const LanguageModel& backend, const TaskTemplates& templates,
                                                 const ContextSource& source, std::size_t count, std::uint64_t seed,
                                                 double temperature, const SimulationOptions& options) {
    check_source(source, templates);
    std::vector<GenerationRecord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        GenerationRecord rec;
        rec.context = source.at(i);
        rec.seed = derive_seed(seed, i);
        rec.backend_fingerprint = backend.fingerprint();
        rec.tau_used = temperature;
        rec.label = options.label;
        std::string steer;
        if (options.label && !templates.steering_clause.empty()) {
            steer = replace_all(replace_all(templates.steering_clause, "{context}", rec.context), "{sentiment}",
                                *options.label);
        }
        const std::string prompt = templates.zero_shot.render({{"context", rec.context}, {"steer", steer}});
        rec.text = trim(backend.generate(prompt, temperature, options.max_tokens, backend_seed(rec.seed)));
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace mop
