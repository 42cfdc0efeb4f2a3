#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "mop/error.hpp"
#include "mop/gating.hpp"
#include "mop/toy_lm.hpp"
#include "support.hpp"

using namespace mop;

namespace {

ToyLmConfig plain(const std::string& alphabet, int order) {
    ToyLmConfig c;
    c.alphabet = alphabet;
    c.order = order;
    c.end_token = false;
    c.cache_weight = 0.0;
    return c;
}

}  // namespace

TEST_CASE("untrained model over four symbols is uniform") {
    const ToyLanguageModel lm(plain("abcd", 3), {});
    CHECK(lm.vocab_size() == 4);
    const auto sheet = lm.score("ab", "cd");
    REQUIRE(sheet.rows.size() == 2);
    for (const auto& row : sheet.rows) {
        const auto& z = std::get<std::vector<double>>(row.support);
        REQUIRE(z.size() == 4);
        for (double v : z) CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-15));
    }
    CHECK(tempered_loglik(sheet, 0.7) == doctest::Approx(2.0 * std::log(0.25)).epsilon(1e-14));
}

TEST_CASE("bigram probabilities match direct counting") {
    const std::vector<std::string> docs{"abab", "abba", "aacb"};
    const double alpha = 0.1;
    auto cfg = plain("abc", 2);
    cfg.alpha = alpha;
    const ToyLanguageModel lm(cfg, docs);

    // Count bigrams by hand, with a start symbol before each document.
    std::map<std::pair<char, char>, double> pair_counts;
    std::map<char, double> hist_counts;
    for (const auto& d : docs) {
        char prev = '^';
        for (char c : d) {
            pair_counts[{prev, c}] += 1.0;
            hist_counts[prev] += 1.0;
            prev = c;
        }
    }
    for (char h : std::string("ab")) {
        const auto logits = lm.next_logits(std::string(1, h));
        for (char c : std::string("abc")) {
            const double p = (pair_counts[{h, c}] + alpha) / (hist_counts[h] + alpha * 3.0);
            CHECK(logits[static_cast<std::size_t>(c - 'a')] == doctest::Approx(std::log(p)).epsilon(1e-14));
        }
    }
    // First token of a continuation with an empty prompt conditions on the start symbol.
    const auto sheet = lm.score("", "a");
    const double p_a = (pair_counts[{'^', 'a'}] + alpha) / (hist_counts['^'] + alpha * 3.0);
    CHECK(sheet.rows[0].target_logit == doctest::Approx(std::log(p_a)).epsilon(1e-14));
}

TEST_CASE("in-context cache follows its formula") {
    auto cfg = plain("ab", 2);
    cfg.cache_weight = 3.0;
    cfg.cache_prior = 2.0;
    const ToyLanguageModel stat(plain("ab", 2), {"ab"});
    const ToyLanguageModel lm(cfg, {"ab"});
    // Prompt "aab": history 'b' never followed by anything, history 'a' followed by 'a' once and 'b' once.
    const auto p_static = stat.next_logits("aaba");
    const auto got = lm.next_logits("aaba");
    for (std::size_t c = 0; c < 2; ++c) {
        const double cache_count = 1.0;  // 'a' -> 'a' once, 'a' -> 'b' once
        const double want = (3.0 * cache_count + 2.0 * std::exp(p_static[c])) / (3.0 * 2.0 + 2.0);
        CHECK(got[c] == doctest::Approx(std::log(want)).epsilon(1e-14));
    }
}

TEST_CASE("every row normalizes") {
    const ToyLanguageModel lm(test::small_toy_config(), test::small_corpus());
    for (const auto& [p, c] : std::vector<std::pair<std::string, std::string>>{
             {"the cat", " sat on a hat"}, {"", "zzz qq"}, {"market: ", "bank shares rose. the cup"}}) {
        const auto sheet = lm.score(p, c);
        CHECK(sheet.rows.size() == lm.tokenize(c).size());
        for (const auto& row : sheet.rows) {
            const auto& z = std::get<std::vector<double>>(row.support);
            double s = 0.0;
            for (double v : z) s += std::exp(v);
            CHECK(std::abs(s - 1.0) <= 1e-12);
            CHECK(std::abs(row_logsumexp(row)) <= 1e-12);
        }
    }
}

TEST_CASE("scoring is deterministic and rejects empty continuations") {
    const ToyLanguageModel lm(test::small_toy_config(), test::small_corpus());
    const auto a = lm.score("prompt", "cont");
    const auto b = lm.score("prompt", "cont");
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].target_logit == b.rows[i].target_logit);
        CHECK(std::get<std::vector<double>>(a.rows[i].support) == std::get<std::vector<double>>(b.rows[i].support));
    }
    CHECK_THROWS_AS(lm.score("p", ""), ValidationError);
    CHECK_THROWS_AS(lm.score("p", "\x01\x02"), ValidationError);  // nothing in the alphabet
}

TEST_CASE("generation") {
    const ToyLanguageModel lm(test::small_toy_config(), test::small_corpus());
    CHECK(lm.generate("the ", 1.0, 40, 3) == lm.generate("the ", 1.0, 40, 3));
    CHECK(lm.generate("the ", 1.0, 40, 3) != lm.generate("the ", 1.0, 40, 4));
    CHECK_THROWS_AS(lm.generate("x", 1.0, 0, 1), ValidationError);
    CHECK_THROWS_AS(lm.generate("x", 0.0, 5, 1), ValidationError);

    auto cfg = test::small_toy_config();
    cfg.end_token = false;
    const ToyLanguageModel no_end(cfg, test::small_corpus());
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(no_end.generate("the c", 1.0, 1, seed).size() == 1);
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(lm.generate("the c", 1.0, 1, seed).size() <= 1);
}

TEST_CASE("near-zero temperature decodes greedily") {
    const ToyLanguageModel lm(test::small_toy_config(), test::small_corpus());
    for (const std::string prompt : {"the ", "a good ", "scientists "}) {
        // Ties are broken by the sampler, so each step only has to pick a maximal token.
        const std::string out = lm.generate(prompt, 0.01, 30, 99);
        std::string text = prompt;
        for (const char ch : out) {
            const auto z = lm.next_logits(text);
            const double best = *std::max_element(z.begin(), z.end());
            const auto tok = lm.tokenize(std::string(1, ch));
            REQUIRE(tok.size() == 1);
            CHECK(z[static_cast<std::size_t>(tok[0])] >= best - 0.2);
            text += ch;
        }
    }
}

TEST_CASE("fingerprint covers configuration and data") {
    const ToyLanguageModel a(test::small_toy_config(), test::small_corpus());
    const ToyLanguageModel b(test::small_toy_config(), test::small_corpus());
    CHECK(a.fingerprint() == b.fingerprint());
    auto cfg = test::small_toy_config();
    cfg.cache_weight = 2.0;
    CHECK(ToyLanguageModel(cfg, test::small_corpus()).fingerprint() != a.fingerprint());
    CHECK(ToyLanguageModel(test::small_toy_config(), {"other"}).fingerprint() != a.fingerprint());
}

TEST_CASE("configuration errors") {
    auto cfg = test::small_toy_config();
    cfg.order = 0;
    CHECK_THROWS_AS(ToyLanguageModel(cfg, {}), ValidationError);
    cfg = test::small_toy_config();
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(ToyLanguageModel(cfg, {}), ValidationError);
    cfg = test::small_toy_config();
    cfg.alphabet = "";
    CHECK_THROWS_AS(ToyLanguageModel(cfg, {}), ValidationError);
}

TEST_CASE("tokenizer skips bytes outside the alphabet") {
    const ToyLanguageModel lm(plain("ab", 2), {});
    CHECK(lm.tokenize("a-b\tb") == std::vector<int>{0, 1, 1});
    CHECK(lm.detokenize({1, 0, 7}) == "ba");
}
