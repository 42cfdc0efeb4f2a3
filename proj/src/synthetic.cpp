#include "mop/synthetic.hpp"

#include <array>
#include <cctype>
#include <cmath>

#include "mop/error.hpp"
#include "mop/prompts.hpp"

namespace mop {

namespace {

const std::array<std::vector<std::string>, kSyntheticStyles> kLexicon = {{
    {"goal", "match", "team", "coach", "season", "striker", "keeper", "derby", "league", "fans", "win", "score",
     "final", "pitch", "kick", "cup", "title", "rally", "sprint", "crowd"},
    {"MARKET", "SHARES", "BOND", "YIELD", "STOCK", "FUND", "RATE", "PROFIT", "BANK", "INDEX", "TRADE", "ASSET",
     "DEBT", "EQUITY", "DIVIDEND", "BROKER", "CREDIT", "LOSS"},
    {"Quantum", "Protein", "Neuron", "Galaxy", "Enzyme", "Photon", "Genome", "Catalyst", "Isotope", "Plasma",
     "Molecule", "Crystal", "Orbit", "Fossil", "Spectrum", "Neutrino"},
}};

const std::vector<std::string> kSportsGlue = {"the", "a", "and", "again", "what", "so", "our", "we", "love", "that"};

const std::vector<std::string> kProseWords = {
    "the",   "a",     "movie", "film",  "story", "was",  "is",    "and",    "of",    "to",     "in",   "it",
    "this",  "that",  "with",  "for",   "as",    "but",  "not",   "very",   "good",  "great",  "bad",  "plot",
    "acting", "scene", "time", "people", "really", "just", "like", "about",  "some",  "there",  "one",  "from",
    "have",  "would", "could", "think", "watch", "saw",  "show",  "makes",  "little", "much",  "more", "well"};

const std::string& pick(const std::vector<std::string>& v, Rng& rng) { return v[rng.below(v.size())]; }

std::string sports_sentence(Rng& rng) {
    std::string s;
    const std::size_t words = 4 + rng.below(5);
    for (std::size_t i = 0; i < words; ++i) {
        if (i) s += ' ';
        s += rng.uniform() < 0.5 ? pick(kLexicon[0], rng) : pick(kSportsGlue, rng);
    }
    return s + "!";
}

std::string finance_clause(Rng& rng) {
    return pick(kLexicon[1], rng) + " " + pick(kLexicon[1], rng) + " " + std::to_string(1 + rng.below(99));
}

std::string science_sentence(Rng& rng) {
    const auto number = std::to_string(rng.below(10)) + "." + std::to_string(rng.below(10));
    return pick(kLexicon[2], rng) + " " + pick(kLexicon[2], rng) + " measured at " + number + " in " +
           pick(kLexicon[2], rng) + " Trial " + std::to_string(1 + rng.below(9)) + ".";
}

}  // namespace

std::vector<std::string> generic_prose_corpus(std::size_t docs, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x9e0));
    std::vector<std::string> out;
    out.reserve(docs);
    for (std::size_t d = 0; d < docs; ++d) {
        std::string doc;
        const std::size_t sentences = 2 + rng.below(3);
        for (std::size_t s = 0; s < sentences; ++s) {
            const std::size_t words = 5 + rng.below(8);
            for (std::size_t w = 0; w < words; ++w) {
                std::string word = pick(kProseWords, rng);
                if (w == 0) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
                doc += (s || w ? " " : "") + word;
            }
            doc += rng.uniform() < 0.8 ? "." : ",";
        }
        out.push_back(doc);
    }
    return out;
}

const std::vector<std::string>& synthetic_style_names() {
    static const std::vector<std::string> names = {"sports", "finance", "science"};
    return names;
}

std::string style_document(std::size_t style, Rng& rng) {
    std::string doc;
    const std::size_t parts = 3 + rng.below(3);
    for (std::size_t i = 0; i < parts; ++i) {
        switch (style) {
            case 0:
                doc += (i ? " " : "") + sports_sentence(rng);
                break;
            case 1:
                doc += (i ? "; " : "") + finance_clause(rng);
                break;
            case 2:
                doc += (i ? " " : "") + science_sentence(rng);
                break;
            default:
                throw ValidationError("unknown synthetic style");
        }
    }
    return style == 1 ? doc + ";" : doc;
}

std::string style_title(std::size_t style, Rng& rng) {
    switch (style) {
        case 0:
            return pick(kLexicon[0], rng) + " " + pick(kLexicon[0], rng) + " night";
        case 1:
            return pick(kLexicon[1], rng) + " WEEK " + std::to_string(1 + rng.below(52));
        case 2:
            return pick(kLexicon[2], rng) + " Study " + std::to_string(1 + rng.below(9));
        default:
            throw ValidationError("unknown synthetic style");
    }
}

std::vector<std::string> style_corpus(std::size_t style, std::size_t docs, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x57e0 + style));
    std::vector<std::string> out;
    out.reserve(docs);
    for (std::size_t i = 0; i < docs; ++i) out.push_back(style_document(style, rng));
    return out;
}

std::vector<std::string> mixed_style_corpus(std::size_t docs_per_style, std::uint64_t seed) {
    std::array<std::vector<std::string>, kSyntheticStyles> parts;
    for (std::size_t s = 0; s < kSyntheticStyles; ++s) parts[s] = style_corpus(s, docs_per_style, seed);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < docs_per_style; ++i) {
        for (std::size_t s = 0; s < kSyntheticStyles; ++s) out.push_back(parts[s][i]);
    }
    return out;
}

SyntheticPopulation::SyntheticPopulation(std::uint64_t seed, std::size_t docs_per_style, int max_tokens)
    : max_tokens_(max_tokens) {
    // Sharp plain n-gram models, so samples stay inside their style.
    ToyLmConfig cfg;
    cfg.order = 4;
    cfg.alpha = 1e-3;
    cfg.cache_weight = 0.0;
    for (std::size_t s = 0; s < kSyntheticStyles; ++s) {
        models_.push_back(std::make_unique<ToyLanguageModel>(cfg, style_corpus(s, docs_per_style, seed)));
    }
}

Record SyntheticPopulation::sample(std::size_t style, const std::string& id, Rng& rng) const {
    Record r;
    r.id = id;
    r.context = style_title(style, rng);
    r.label = synthetic_style_names().at(style);
    for (int attempt = 0; r.response.empty(); ++attempt) {
        if (attempt > 16) throw Error("synthetic population model keeps producing empty text");
        r.response = trim(models_.at(style)->generate("", 1.0, max_tokens_, rng.next()));
    }
    return r;
}

std::vector<Record> SyntheticPopulation::sample_mixture(const std::vector<double>& weights, std::size_t n,
                                                        std::uint64_t seed, const std::string& id_prefix) const {
    if (weights.size() != kSyntheticStyles) throw ValidationError("need one weight per synthetic style");
    std::vector<std::size_t> styles;
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < kSyntheticStyles; ++s) {
        const std::size_t c = s + 1 == kSyntheticStyles
                                  ? n - assigned
                                  : std::min(n - assigned, static_cast<std::size_t>(std::llround(weights[s] * static_cast<double>(n))));
        styles.insert(styles.end(), c, s);
        assigned += c;
    }
    Rng rng(derive_seed(seed, 0x313));
    rng.shuffle(styles);
    std::vector<Record> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(styles[i], id_prefix + std::to_string(i), rng));
    return out;
}

}  // namespace mop
