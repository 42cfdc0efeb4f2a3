#include "mop/persona_synth.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <map>
#include <set>

#include "mop/error.hpp"
#include "mop/random.hpp"

namespace mop {

std::string stub_description(const std::vector<std::string>& examples, std::size_t terms) {
    std::map<std::string, std::size_t> freq;
    for (const auto& text : examples) {
        std::string word;
        for (std::size_t i = 0; i <= text.size(); ++i) {
            const unsigned char c = i < text.size() ? static_cast<unsigned char>(text[i]) : ' ';
            if (std::isalpha(c)) {
                word.push_back(static_cast<char>(std::tolower(c)));
            } else {
                if (word.size() >= 3) ++freq[word];
                word.clear();
            }
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::string out = "A writer whose texts often mention";
    if (ranked.empty()) return out + " short fragments.";
    for (std::size_t i = 0; i < std::min(terms, ranked.size()); ++i) out += (i == 0 ? ": " : ", ") + ranked[i].first;
    return out + ".";
}

SynthesizedPersona synthesize_persona(const std::vector<std::string>& examples, const LanguageModel& backend,
                                      const PromptTemplate& tpl, const PersonaSynthConfig& config,
                                      std::uint64_t seed) {
    if (examples.empty()) throw ValidationError("cannot synthesize a persona from an empty cluster");
    const std::string prompt = tpl.render({{"examples", numbered_list(examples)}});
    for (int attempt = 0; attempt <= config.retries; ++attempt) {
        const std::string text = backend.generate(prompt, config.temperature, config.max_tokens,
                                                  derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        // The description is the first non-empty line after any echoed marker.
        std::string desc = strip_persona_marker(text);
        desc = trim(desc.substr(0, desc.find('\n')));
        if (!desc.empty()) return {desc, false};
        spdlog::debug("persona synthesis attempt {} produced empty text", attempt + 1);
    }
    spdlog::warn("persona synthesis produced no text after {} attempts; using term stub", config.retries + 1);
    return {stub_description(examples, config.stub_terms), true};
}

std::string parse_label_answer(const std::string& answer, const std::vector<std::string>& options) {
    std::set<std::size_t> letters;
    for (std::size_t i = 0; i < answer.size(); ++i) {
        const char c = answer[i];
        if (c < 'A' || c >= static_cast<char>('A' + options.size())) continue;
        const bool left = i == 0 || !std::isalnum(static_cast<unsigned char>(answer[i - 1]));
        const bool right = i + 1 == answer.size() || !std::isalnum(static_cast<unsigned char>(answer[i + 1]));
        if (left && right) letters.insert(static_cast<std::size_t>(c - 'A'));
    }
    if (letters.size() == 1) return options[*letters.begin()];

    std::string lower(answer);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    std::vector<std::size_t> hits;
    for (std::size_t o = 0; o < options.size(); ++o) {
        std::string opt(options[o]);
        std::transform(opt.begin(), opt.end(), opt.begin(), [](unsigned char c) { return std::tolower(c); });
        if (lower.find(opt) != std::string::npos) hits.push_back(o);
    }
    if (hits.size() == 1) return options[hits.front()];
    return kUnknownLabel;
}

std::string label_persona(const Persona& persona, const TaskTemplates& templates, const LanguageModel& backend,
                          std::uint64_t seed, double temperature) {
    if (!templates.classification || templates.label_options.empty()) {
        throw ValidationError("task " + templates.task + " has no persona classification template");
    }
    const std::string prompt = templates.classification->render({{"persona", persona.description}});
    const std::string answer = backend.generate(prompt, temperature, 16, seed);
    const std::string label = parse_label_answer(answer, templates.label_options);
    if (label == kUnknownLabel) spdlog::warn("persona {}: unparseable label answer '{}'", persona.id, trim(answer));
    return label;
}

PersonaSynthResult synthesize_personas(const Dataset& records, const Embedder& embedder, const LanguageModel& backend,
                                       const TaskTemplates& templates, const PersonaSynthConfig& config) {
    if (config.personas == 0) throw ValidationError("K must be >= 1");
    if (config.representatives == 0) throw ValidationError("need at least one representative record");
    const auto responses = records.responses();
    const Matrix points = embedder.embed_batch(responses);

    PersonaSynthResult result;
    result.clusters = kmeans(points, config.personas, config.seed, config.kmeans);
    spdlog::info("clustered {} records into {} groups (inertia {:.4f})", records.size(), config.personas,
                 result.clusters.inertia);

    for (std::size_t c = 0; c < config.personas; ++c) {
        std::vector<std::string> examples;
        for (auto idx : nearest_to_centroid(points, result.clusters, c, config.representatives)) {
            examples.push_back(responses[idx]);
        }
        const auto synth = synthesize_persona(examples, backend, templates.persona_synthesis, config,
                                              derive_seed(config.seed, 0x5e00 + c));
        if (synth.fallback) ++result.fallbacks;
        Persona p;
        p.id = static_cast<int>(c);
        p.description = synth.description;
        p.source = PersonaSource::synthesized;
        p.cluster = static_cast<int>(c);
        result.personas.push_back(std::move(p));
    }
    return result;
}

std::string serialize_cluster_report(const PersonaSynthResult& result, const PersonaSynthConfig& config) {
    nlohmann::ordered_json o;
    o["K"] = config.personas;
    o["inertia"] = result.clusters.inertia;
    o["sizes"] = result.clusters.sizes();
    o["seed"] = config.seed;
    o["representatives"] = config.representatives;
    o["iterations"] = result.clusters.iterations;
    o["fallbacks"] = result.fallbacks;
    return o.dump(2) + "\n";
}

}  // namespace mop
