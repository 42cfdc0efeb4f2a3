#include "doctest.h"

#include <algorithm>
#include <set>

#include "mop/corpus.hpp"
#include "mop/error.hpp"
#include "mop/hashing.hpp"
#include "support.hpp"

using namespace mop;

namespace {

Dataset numbered(std::size_t n) {
    std::vector<Record> rs;
    for (std::size_t i = 0; i < n; ++i) rs.push_back({"r" + std::to_string(i), "c", "resp " + std::to_string(i), std::nullopt});
    return Dataset(std::move(rs));
}

std::set<std::string> ids(const Dataset& d) {
    std::set<std::string> out;
    for (const auto& r : d.records()) out.insert(r.id);
    return out;
}

}  // namespace

TEST_CASE("record files parse line by line") {
    const std::string text =
        "{\"id\":\"a\",\"context\":\"t1\",\"response\":\"one\",\"label\":\"x\"}\n"
        "{\"id\":7,\"response\":\"two\"}\n"
        "\n"
        "{\"response\":\"three\",\"context\":null}\n";
    const auto d = parse_dataset(text, "mem");
    REQUIRE(d.size() == 3);
    CHECK(d[0] == Record{"a", "t1", "one", std::string("x")});
    CHECK(d[1].id == "7");
    CHECK(d[1].context.empty());
    CHECK_FALSE(d[1].label.has_value());
    CHECK(d[2].id == "4");  // auto ids are line numbers
    CHECK(d.provenance().source == "mem");
    CHECK(d.provenance().loaded_at.size() == 20);
}

TEST_CASE("record file errors") {
    CHECK_THROWS_WITH_AS(parse_dataset("", "f"), "f: empty dataset", ValidationError);
    CHECK_THROWS_WITH_AS(parse_dataset("\n\n", "f"), "f: empty dataset", ValidationError);
    try {
        parse_dataset("{\"response\":\"ok\"}\n{\"context\":\"no response\"}\n", "f.jsonl");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("f.jsonl:2") == 0);
        CHECK(std::string(e.what()).find("response") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_dataset("{not json}\n", "f"), ParseError);
    CHECK_THROWS_AS(parse_dataset("[1,2]\n", "f"), ParseError);
    CHECK_THROWS_AS(parse_dataset("{\"response\":\"\"}\n", "f"), ParseError);
    CHECK_THROWS_AS(parse_dataset("{\"response\":\"a\",\"id\":1.5}\n", "f"), ParseError);
    CHECK_THROWS_AS(parse_dataset("{\"response\":\"a\",\"label\":3}\n", "f"), ParseError);
    // Duplicate explicit ids are a validation error, not a parse error.
    try {
        parse_dataset("{\"id\":\"x\",\"response\":\"a\"}\n{\"id\":\"x\",\"response\":\"b\"}\n", "f");
        FAIL("expected a validation error");
    } catch (const ParseError&) {
        FAIL("duplicate id reported as a parse error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("duplicate id 'x'") != std::string::npos);
    }
}

TEST_CASE("dataset invariants") {
    CHECK_THROWS_AS(Dataset({}), ValidationError);
    CHECK_THROWS_AS(Dataset({{"a", "", "", std::nullopt}}), ValidationError);
    CHECK_THROWS_AS(Dataset({{"a", "", "x", std::nullopt}, {"a", "", "y", std::nullopt}}), ValidationError);
}

TEST_CASE("canonical record files round-trip byte for byte") {
    test::TempDir dir("corpus-roundtrip");
    std::vector<Record> rs{{"1", "a title", "a \"quoted\" response\nwith newline", std::string("pos")},
                           {"2", "", "\xc3\xa9t\xc3\xa9", std::nullopt}};
    const std::string canonical = serialize_records(rs);
    write_dataset(dir.file("d.jsonl"), rs);
    CHECK(read_file(dir.file("d.jsonl")) == canonical);
    const auto d = load_dataset(dir.file("d.jsonl"));
    CHECK(d.records() == rs);
    CHECK(serialize_records(d.records()) == canonical);
}

TEST_CASE("sidecars pin content") {
    test::TempDir dir("corpus-sidecar");
    const std::string p = dir.file("d.jsonl");
    write_dataset(p, {{"1", "", "x", std::nullopt}});
    CHECK(std::filesystem::exists(sidecar_path(p)));
    CHECK_NOTHROW(load_dataset(p));
    write_file(p, "{\"id\":\"1\",\"response\":\"tampered\"}\n");
    CHECK_THROWS_WITH_AS(load_dataset(p), doctest::Contains("sidecar sha256"), ValidationError);
    // Files without a sidecar load as-is.
    std::filesystem::remove(sidecar_path(p));
    CHECK(load_dataset(p)[0].response == "tampered");
}

TEST_CASE("splits") {
    const auto d = numbered(100);
    const auto [train, held] = split_dataset(d, 0.2, 7);
    CHECK(train.size() == 80);
    CHECK(held.size() == 20);
    const auto [train2, held2] = split_dataset(d, 0.2, 7);
    CHECK(train.records() == train2.records());
    CHECK(held.records() == held2.records());
    // Disjoint and exhaustive; original order kept inside each side.
    auto all = ids(train);
    for (const auto& id : ids(held)) CHECK(all.insert(id).second);
    CHECK(all.size() == 100);
    CHECK(std::is_sorted(train.records().begin(), train.records().end(),
                         [](const Record& a, const Record& b) { return std::stoi(a.id.substr(1)) < std::stoi(b.id.substr(1)); }));

    CHECK_THROWS_WITH_AS(split_dataset(numbered(2), 0.999, 1), "empty train split", ValidationError);
    CHECK_THROWS_AS(split_dataset(d, 0.0, 1), ValidationError);
    CHECK_THROWS_AS(split_dataset(d, 1.0, 1), ValidationError);
    CHECK_THROWS_AS(split_dataset(d, -0.5, 1), ValidationError);

    const auto ten = numbered(10);
    CHECK(ids(split_dataset(ten, 0.5, 1).second) != ids(split_dataset(ten, 0.5, 2).second));
}

TEST_CASE("exemplar pools") {
    const auto d = numbered(30);
    const auto full = sample_exemplar_pool(d, 30, 4);
    std::set<std::string> seen(full.origin_ids.begin(), full.origin_ids.end());
    CHECK(seen == ids(d));
    for (std::size_t j = 0; j < full.size(); ++j) CHECK(full.exemplars[j].id == full.origin_ids[j]);

    const auto a = sample_exemplar_pool(d, 5, 4), b = sample_exemplar_pool(d, 5, 4);
    CHECK(a.exemplars == b.exemplars);
    CHECK(a.index_of(a.origin_ids[3]) == std::optional<std::size_t>(3));
    CHECK_FALSE(a.index_of("nope").has_value());
    CHECK_THROWS_AS(sample_exemplar_pool(d, 31, 4), ValidationError);
    CHECK_THROWS_AS(sample_exemplar_pool(d, 0, 4), ValidationError);

    // Training-set scale used for the real tasks: 1,000 exemplars out of 96,000 records.
    CHECK(sample_exemplar_pool(numbered(96000), 1000, 1).size() == 1000);
}

TEST_CASE("pools keep the j to record mapping through a file") {
    test::TempDir dir("corpus-pool");
    const auto pool = sample_exemplar_pool(numbered(40), 12, 8);
    write_pool(dir.file("pool.jsonl"), pool);
    const auto back = load_pool(dir.file("pool.jsonl"));
    CHECK(back.origin_ids == pool.origin_ids);
    CHECK(back.exemplars == pool.exemplars);
    CHECK(pool_hash(back) == pool_hash(pool));
}

TEST_CASE("persona files") {
    test::TempDir dir("corpus-personas");
    std::vector<Persona> ps{{0, "a careful reviewer", PersonaSource::synthesized, std::string("sports"), 2},
                            {1, "a casual fan", PersonaSource::user_defined, std::nullopt, std::nullopt}};
    write_personas(dir.file("p.json"), ps);
    const auto back = load_personas(dir.file("p.json"));
    CHECK(back == ps);
    CHECK(personas_hash(back) == personas_hash(ps));

    CHECK_THROWS_WITH_AS(load_personas(dir.file("missing.json")), doctest::Contains("personas not found"), ValidationError);
    CHECK_THROWS_AS(parse_personas("[]", "p"), ValidationError);
    CHECK_THROWS_AS(parse_personas("[{\"id\":0,\"description\":\"\"}]", "p"), ValidationError);
    CHECK_THROWS_AS(parse_personas("[{\"id\":1,\"description\":\"x\"}]", "p"), ValidationError);
    CHECK_THROWS_AS(parse_personas("[{\"id\":0,\"description\":\"x\",\"source\":\"magic\"}]", "p"), ValidationError);
    CHECK(parse_personas("[{\"id\":0,\"description\":\"x\"}]", "p")[0].source == PersonaSource::user_defined);
}

TEST_CASE("observations drop labels") {
    const Record r{"i", "c", "r", std::string("secret")};
    const Observation o = observe(r);
    CHECK(o == Observation{"i", "c", "r"});
}
