#include "mop/toy_lm.hpp"

#include <cmath>

#include "mop/error.hpp"
#include "mop/hashing.hpp"
#include "mop/random.hpp"

namespace mop {

std::string ToyLmConfig::default_alphabet() {
    std::string a = "\n";
    for (char c = ' '; c <= '~'; ++c) a.push_back(c);
    return a;
}

class ToyLanguageModel::Context {
public:
    explicit Context(std::size_t vocab) : vocab_(vocab) {}

    void add(std::uint64_t key, int token) {
        auto& c = counts_[key];
        if (c.by_token.empty()) c.by_token.assign(vocab_, 0.0);
        c.by_token[static_cast<std::size_t>(token)] += 1.0;
        c.total += 1.0;
    }

    const Counts* find(std::uint64_t key) const {
        auto it = counts_.find(key);
        return it == counts_.end() ? nullptr : &it->second;
    }

private:
    std::size_t vocab_;
    std::unordered_map<std::uint64_t, Counts> counts_;
};

ToyLanguageModel::ToyLanguageModel(ToyLmConfig config, const std::vector<std::string>& training_docs)
    : config_(std::move(config)), byte_to_id_(256, -1) {
    if (config_.order < 1) throw ValidationError("toy LM order must be >= 1");
    if (!(config_.alpha > 0.0)) throw ValidationError("toy LM smoothing must be positive");
    if (config_.cache_weight < 0.0 || !(config_.cache_prior > 0.0)) {
        throw ValidationError("toy LM cache weight must be >= 0 and prior > 0");
    }
    int next = 0;
    for (unsigned char c : config_.alphabet) {
        if (byte_to_id_[c] < 0) {
            byte_to_id_[c] = next++;
            id_to_byte_.push_back(static_cast<char>(c));
        }
    }
    if (next == 0) throw ValidationError("toy LM alphabet is empty");
    vocab_size_ = static_cast<std::size_t>(next) + (config_.end_token ? 1 : 0);
    bos_id_ = static_cast<int>(vocab_size_);
    static_counts_.resize(static_cast<std::size_t>(config_.order));

    std::uint64_t data_hash = fnv1a64("");
    for (const auto& doc : training_docs) {
        std::vector<int> stream = tokenize(doc);
        if (config_.end_token) stream.push_back(end_id());
        for (std::size_t t = 0; t < stream.size(); ++t) {
            for (int len = 0; len < config_.order; ++len) {
                auto& c = static_counts_[static_cast<std::size_t>(len)][history_key(stream, t, len)];
                if (c.by_token.empty()) c.by_token.assign(vocab_size_, 0.0);
                c.by_token[static_cast<std::size_t>(stream[t])] += 1.0;
                c.total += 1.0;
            }
        }
        data_hash = fnv1a64(doc, data_hash);
        data_hash = fnv1a64("\x1e", data_hash);
    }

    char cfg[192];
    std::snprintf(cfg, sizeof cfg, "order=%d;alpha=%.17g;end=%d;cw=%.17g;cp=%.17g;bo=%d;", config_.order,
                  config_.alpha, config_.end_token ? 1 : 0, config_.cache_weight, config_.cache_prior,
                  config_.backoff ? 1 : 0);
    fingerprint_ = "toy-char-ngram/" + hex64(fnv1a64(config_.alphabet, fnv1a64(cfg))) + "/" + hex64(data_hash);
}

std::vector<int> ToyLanguageModel::tokenize(const std::string& text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) {
        if (byte_to_id_[c] >= 0) ids.push_back(byte_to_id_[c]);
    }
    return ids;
}

std::string ToyLanguageModel::detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id >= 0 && static_cast<std::size_t>(id) < id_to_byte_.size()) out.push_back(id_to_byte_[id]);
    }
    return out;
}

// Key of the `length` tokens preceding position `pos`, padded with BOS.
std::uint64_t ToyLanguageModel::history_key(const std::vector<int>& stream, std::size_t pos, int length) const {
    std::uint64_t key = 0;
    const std::uint64_t base = vocab_size_ + 1;
    for (int back = length; back >= 1; --back) {
        const int tok = pos >= static_cast<std::size_t>(back) ? stream[pos - static_cast<std::size_t>(back)] : bos_id_;
        key = key * base + static_cast<std::uint64_t>(tok);
    }
    return key;
}

const ToyLanguageModel::Counts* ToyLanguageModel::static_counts(const std::vector<int>& stream,
                                                                std::size_t pos) const {
    const int shortest = config_.backoff ? 0 : config_.order - 1;
    for (int len = config_.order - 1; len >= shortest; --len) {
        const auto& table = static_counts_[static_cast<std::size_t>(len)];
        const auto it = table.find(history_key(stream, pos, len));
        if (it != table.end()) return &it->second;
    }
    return nullptr;
}

void ToyLanguageModel::fill_logits(const std::vector<int>& stream, std::size_t pos, const Context& cache,
                                   std::vector<double>& out) const {
    out.resize(vocab_size_);
    const double v = static_cast<double>(vocab_size_);
    const Counts* stat = static_counts(stream, pos);
    const Counts* dyn = config_.cache_weight > 0.0 ? cache.find(history_key(stream, pos)) : nullptr;
    const double stat_den = (stat ? stat->total : 0.0) + config_.alpha * v;
    const double dyn_den = config_.cache_weight * (dyn ? dyn->total : 0.0) + config_.cache_prior;
    for (std::size_t c = 0; c < vocab_size_; ++c) {
        const double p_static = ((stat ? stat->by_token[c] : 0.0) + config_.alpha) / stat_den;
        double p = p_static;
        if (dyn) p = (config_.cache_weight * dyn->by_token[c] + config_.cache_prior * p_static) / dyn_den;
        out[c] = std::log(p);
    }
}

ScoreSheet ToyLanguageModel::score(const std::string& prompt, const std::string& continuation) const {
    std::vector<int> stream = tokenize(prompt);
    const std::size_t prompt_len = stream.size();
    const std::vector<int> cont = tokenize(continuation);
    if (cont.empty()) throw ValidationError("continuation tokenizes to zero tokens");
    stream.insert(stream.end(), cont.begin(), cont.end());

    ScoreSheet sheet;
    sheet.prompt_hash = fnv1a64(prompt);
    sheet.continuation_hash = fnv1a64(continuation);
    sheet.rows.reserve(cont.size());

    Context cache(vocab_size_);
    for (std::size_t t = 0; t < stream.size(); ++t) {
        const std::uint64_t key = history_key(stream, t);
        if (t >= prompt_len) {
            std::vector<double> logits;
            fill_logits(stream, t, cache, logits);
            TokenScoreRow row;
            row.target_token = stream[t];
            row.target_logit = logits[static_cast<std::size_t>(stream[t])];
            row.support = std::move(logits);
            sheet.rows.push_back(std::move(row));
        }
        cache.add(key, stream[t]);
    }
    return sheet;
}

std::vector<double> ToyLanguageModel::next_logits(const std::string& text) const {
    std::vector<int> stream = tokenize(text);
    Context cache(vocab_size_);
    for (std::size_t t = 0; t < stream.size(); ++t) cache.add(history_key(stream, t), stream[t]);
    std::vector<double> logits;
    fill_logits(stream, stream.size(), cache, logits);
    return logits;
}

std::string ToyLanguageModel::generate(const std::string& prompt, double temperature, int max_tokens,
                                       std::uint64_t seed) const {
    if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
    if (max_tokens <= 0) throw ValidationError("max_tokens must be positive");

    std::vector<int> stream = tokenize(prompt);
    Context cache(vocab_size_);
    for (std::size_t t = 0; t < stream.size(); ++t) cache.add(history_key(stream, t), stream[t]);

    Rng rng(seed);
    std::vector<int> produced;
    std::vector<double> logits, weights(vocab_size_);
    for (int step = 0; step < max_tokens; ++step) {
        const std::uint64_t key = history_key(stream, stream.size());
        fill_logits(stream, stream.size(), cache, logits);
        double top = logits[0];
        for (double z : logits) top = std::max(top, z);
        for (std::size_t c = 0; c < vocab_size_; ++c) weights[c] = std::exp((logits[c] - top) / temperature);
        const int tok = static_cast<int>(rng.categorical(weights));
        if (tok == end_id()) break;
        cache.add(key, tok);
        stream.push_back(tok);
        produced.push_back(tok);
    }
    return detokenize(produced);
}

}  // namespace mop
