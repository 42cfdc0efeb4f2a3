#include "doctest.h"

#include <cmath>
#include <map>
#include <set>

#include "mop/embedder.hpp"
#include "mop/error.hpp"
#include "mop/hashing.hpp"
#include "mop/random.hpp"

using namespace mop;

namespace {

// Independent statement of the hashing definition.
std::vector<double> oracle(const std::string& s, std::size_t dim, std::size_t n) {
    std::vector<double> v(dim, 0.0);
    if (s.empty()) return v;
    n = std::min(n, s.size());
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::size_t c = i; c < i + n; ++c) {
            h ^= static_cast<unsigned char>(s[c]);
            h *= 0x100000001b3ULL;
        }
        v[h % dim] += (h >> 63) ? -1.0 : 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    for (double& x : v) x /= std::sqrt(norm);
    return v;
}

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::string random_text(Rng& rng) {
    static const std::string chars = "abcdefghij klmnop.,!XYZ0123";
    std::string s;
    const std::size_t n = 1 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i) s += chars[rng.below(chars.size())];
    return s;
}

}  // namespace

TEST_CASE("hashing embedder follows its definition") {
    const HashingEmbedder e(256, 3);
    for (const std::string s : {"hello world", "ab", "x", "the cat sat on the mat", "RATE 42; BANK"}) {
        const auto v = e.embed(s);
        const auto w = oracle(s, 256, 3);
        REQUIRE(v.size() == 256);
        for (std::size_t i = 0; i < 256; ++i) CHECK(v[i] == doctest::Approx(w[i]).epsilon(1e-15));
        CHECK(norm(v) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("empty text maps to the zero vector") {
    const HashingEmbedder e;
    const auto v = e.embed("");
    CHECK(v.size() == 256);
    CHECK(norm(v) == 0.0);
}

TEST_CASE("texts without shared n-grams have cosine 0") {
    const HashingEmbedder e(256, 3);
    const std::string a = "abcabcabc", b = "xyzxyzxyz";
    std::set<std::size_t> ba, bb;
    for (std::size_t i = 0; i + 3 <= a.size(); ++i) ba.insert(e.bucket(a.substr(i, 3)).first);
    for (std::size_t i = 0; i + 3 <= b.size(); ++i) bb.insert(e.bucket(b.substr(i, 3)).first);
    for (std::size_t x : ba) REQUIRE(bb.count(x) == 0);
    const auto va = e.embed(a), vb = e.embed(b);
    double dot = 0.0;
    for (std::size_t i = 0; i < 256; ++i) dot += va[i] * vb[i];
    CHECK(dot == 0.0);
}

TEST_CASE("signed collisions that cancel fall back to unsigned counts") {
    // With one bucket every n-gram collides; find a 4-byte text whose two trigrams carry opposite signs.
    const HashingEmbedder e(1, 3);
    std::string text;
    for (char c = 'a'; c <= 'z' && text.empty(); ++c) {
        const std::string t{'a', 'b', 'c', c};
        if (e.bucket(t.substr(0, 3)).second == -e.bucket(t.substr(1, 3)).second) text = t;
    }
    REQUIRE_FALSE(text.empty());
    CHECK(e.embed(text) == std::vector<double>{1.0});
}

TEST_CASE("fingerprints identify configuration") {
    const HashingEmbedder a(256, 3), b(256, 3), c(128, 3), d(256, 4);
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK_FALSE(a.fingerprint() == c.fingerprint());
    CHECK_FALSE(a.fingerprint() == d.fingerprint());
    CHECK(a.fingerprint().dim == 256);
    CHECK(a.embed("same text") == b.embed("same text"));
    CHECK_THROWS_AS(HashingEmbedder(0, 3), ValidationError);
}

TEST_CASE("batch embedding equals the loop") {
    const HashingEmbedder e;
    Rng rng(4);
    std::vector<std::string> texts;
    for (int i = 0; i < 50; ++i) texts.push_back(random_text(rng));
    const Matrix m = e.embed_batch(texts);
    REQUIRE(m.rows() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
        const auto v = e.embed(texts[i]);
        for (std::size_t c = 0; c < e.dim(); ++c) CHECK(m(i, c) == v[c]);
    }
    CHECK(e.embed_batch(std::vector<std::string>{}).rows() == 0);
    CHECK(e.embed_batch(std::vector<std::string>{}).cols() == e.dim());
}

TEST_CASE("permuting inputs permutes rows") {
    const HashingEmbedder e;
    std::vector<std::string> texts{"first text", "second", "third one here"};
    const Matrix m = e.embed_batch(texts);
    std::swap(texts[0], texts[2]);
    const Matrix p = e.embed_batch(texts);
    for (std::size_t c = 0; c < e.dim(); ++c) {
        CHECK(p(0, c) == m(2, c));
        CHECK(p(1, c) == m(1, c));
        CHECK(p(2, c) == m(0, c));
    }
}

TEST_CASE("memo embedder is transparent") {
    auto inner = std::make_shared<HashingEmbedder>(64, 3);
    const MemoEmbedder memo(inner);
    CHECK(memo.fingerprint() == inner->fingerprint());
    CHECK(memo.dim() == 64);
    const std::vector<std::string> texts{"a b c", "d e f", "a b c"};
    const Matrix m = memo.embed_batch(texts);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto v = inner->embed(texts[i]);
        for (std::size_t c = 0; c < 64; ++c) CHECK(m(i, c) == v[c]);
    }
    CHECK(memo.embed("d e f") == inner->embed("d e f"));
}
