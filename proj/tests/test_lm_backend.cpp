#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "mop/error.hpp"
#include "mop/lm_backend.hpp"
#include "mop/random.hpp"
#include "mop/score_cache.hpp"
#include "support.hpp"

using namespace mop;

namespace {

TokenScoreRow full_row(std::vector<double> logits, int target) {
    TokenScoreRow r;
    r.target_token = target;
    r.target_logit = logits[static_cast<std::size_t>(target)];
    r.support = std::move(logits);
    return r;
}

ScoreSheet random_sheet(Rng& rng, std::size_t rows, std::size_t vocab, bool argmax_target = false) {
    ScoreSheet s;
    for (std::size_t t = 0; t < rows; ++t) {
        std::vector<double> z(vocab);
        for (double& v : z) v = 2.0 * rng.normal();
        int target = static_cast<int>(rng.below(vocab));
        if (argmax_target) target = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
        s.rows.push_back(full_row(std::move(z), target));
    }
    return s;
}

// Direct definition: sum_t z_t(y)/tau - log sum_v exp(z_t(v)/tau).
double direct(const ScoreSheet& s, double tau) {
    double total = 0.0;
    for (const auto& row : s.rows) {
        const auto& z = std::get<std::vector<double>>(row.support);
        double acc = 0.0;
        for (double v : z) acc += std::exp(v / tau);
        total += row.target_logit / tau - std::log(acc);
    }
    return total;
}

TokenScoreRow as_topk(const TokenScoreRow& full, std::size_t k) {
    const auto& z = std::get<std::vector<double>>(full.support);
    std::vector<int> order(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return z[a] > z[b]; });
    TopKSupport t;
    double rest = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < k) {
            t.ids.push_back(order[i]);
            t.logits.push_back(z[order[i]]);
        } else {
            rest += std::exp(z[order[i]]);
        }
    }
    t.rest_count = static_cast<double>(z.size() - std::min(k, z.size()));
    t.rest_logsumexp = rest > 0.0 ? std::log(rest) : -std::numeric_limits<double>::infinity();
    TokenScoreRow r;
    r.target_token = full.target_token;
    r.target_logit = full.target_logit;
    r.support = t;
    return r;
}

}  // namespace

TEST_CASE("uniform rows are temperature invariant") {
    ScoreSheet s;
    s.rows.push_back(full_row({0.3, 0.3, 0.3, 0.3}, 1));
    s.rows.push_back(full_row({0.3, 0.3, 0.3, 0.3}, 3));
    for (double tau : {0.05, 0.6, 1.0, 3.0}) {
        CHECK(tempered_loglik(s, tau) == doctest::Approx(2.0 * std::log(0.25)).epsilon(1e-14));
        CHECK(tempered_loglik_dtau(s, tau) == doctest::Approx(0.0).epsilon(1e-14));
    }
    CHECK(tempered_loglik(s, 1.0) == doctest::Approx(-2.7726).epsilon(1e-4));
}

TEST_CASE("two-logit row by hand") {
    ScoreSheet s;
    s.rows.push_back(full_row({1.0, 0.0}, 0));
    const double want = std::log(1.0 / (1.0 + std::exp(-1.0)));
    CHECK(tempered_loglik(s, 1.0) == doctest::Approx(want).epsilon(1e-15));
    CHECK(tempered_loglik(s, 1.0) == doctest::Approx(-0.3133).epsilon(1e-4));
    const double h = 1e-5;
    const double fd = (tempered_loglik(s, 1.0 + h) - tempered_loglik(s, 1.0 - h)) / (2 * h);
    CHECK(tempered_loglik_dtau(s, 1.0) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("tempered loglik matches the direct formula and its derivative") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = random_sheet(rng, 1 + rng.below(6), 2 + rng.below(30));
        const double tau = 0.2 + 2.0 * rng.uniform();
        CHECK(tempered_loglik(s, tau) == doctest::Approx(direct(s, tau)).epsilon(1e-12));
        const double h = 1e-5 * tau;
        const double fd = (tempered_loglik(s, tau + h) - tempered_loglik(s, tau - h)) / (2 * h);
        const double an = tempered_loglik_dtau(s, tau);
        CHECK(std::abs(an - fd) <= 1e-5 * std::max({std::abs(an), std::abs(fd), 1e-3}));
    }
}

TEST_CASE("argmax targets give a non-positive temperature derivative") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = random_sheet(rng, 1 + rng.below(5), 2 + rng.below(20), true);
        CHECK(tempered_loglik_dtau(s, 0.1 + 3.0 * rng.uniform()) <= 0.0);
    }
}

TEST_CASE("top-k rows") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t V = 3 + rng.below(20);
        ScoreSheet full = random_sheet(rng, 3, V);
        // k = V is exact at every temperature.
        ScoreSheet whole;
        for (const auto& r : full.rows) whole.rows.push_back(as_topk(r, V));
        for (double tau : {0.3, 1.0, 2.5}) CHECK(tempered_loglik(whole, tau) == doctest::Approx(tempered_loglik(full, tau)).epsilon(1e-12));
        // Any k is exact at tau = 1, whether the target is inside the top-k or not.
        {
            ScoreSheet t;
            for (const auto& r : full.rows) t.rows.push_back(as_topk(r, 1 + rng.below(V - 1)));
            CHECK(tempered_loglik(t, 1.0) == doctest::Approx(tempered_loglik(full, 1.0)).epsilon(1e-10));
            for (std::size_t i = 0; i < t.rows.size(); ++i) {
                CHECK(row_logsumexp(t.rows[i]) == doctest::Approx(row_logsumexp(full.rows[i])).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("invalid temperatures") {
    ScoreSheet s;
    s.rows.push_back(full_row({1.0, 0.0}, 0));
    CHECK_THROWS_AS(tempered_loglik(s, 0.0), ValidationError);
    CHECK_THROWS_AS(tempered_loglik(s, -1.0), ValidationError);
    CHECK_THROWS_AS(tempered_loglik(s, std::nan("")), ValidationError);
}

TEST_CASE("score cache memoizes by backend, prompt and continuation") {
    const ToyLanguageModel a(test::small_toy_config(), test::small_corpus());
    auto cfg = test::small_toy_config();
    cfg.alpha = 0.5;
    const ToyLanguageModel b(cfg, test::small_corpus());
    ScoreCache cache;
    const auto s1 = cache.score(a, "the cat", " sat");
    const auto s2 = cache.score(a, "the cat", " sat");
    CHECK(s1.get() == s2.get());
    CHECK(cache.stats().backend_calls == 1);
    CHECK(cache.stats().hits == 1);
    cache.score(b, "the cat", " sat");
    cache.score(a, "the dog", " sat");
    cache.score(a, "the cat", " sits");
    CHECK(cache.stats().backend_calls == 4);
    CHECK(cache.size() == 4);
    CHECK(tempered_loglik(*s1, 1.0) == tempered_loglik(a.score("the cat", " sat"), 1.0));
    cache.clear();
    CHECK(cache.size() == 0);
}
