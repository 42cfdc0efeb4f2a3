#include "doctest.h"

#include "mop/error.hpp"
#include "mop/prompts.hpp"

using namespace mop;

TEST_CASE("placeholder rendering") {
    const PromptTemplate t("{persona} says {{hi}} about {context}.");
    CHECK(t.uses("persona"));
    CHECK(t.uses("context"));
    CHECK_FALSE(t.uses("example"));
    CHECK(t.render({{"persona", "P"}, {"context", "C"}}) == "P says {hi} about C.");
    CHECK_THROWS_AS(t.render({{"persona", "P"}}), ValidationError);
    CHECK_THROWS_WITH_AS(PromptTemplate("{nope}"), doctest::Contains("unknown placeholder"), ValidationError);
    CHECK_THROWS_AS(PromptTemplate("{persona"), ValidationError);
    // Substituted values are not re-expanded.
    CHECK(t.render({{"persona", "{context}"}, {"context", "x"}}) == "{context} says {hi} about x.");
}

TEST_CASE("news blurb template places persona before exemplar") {
    const auto t = task_templates("agnews", TemplateFormat::llama3_chat);
    const Persona p{0, "P-description", PersonaSource::user_defined, std::nullopt, std::nullopt};
    const Observation e{"e", "", "E-blurb"};
    const std::string s = build_prompt(t.generation, {&p, &e, "", ""});
    const auto at_p = s.find("P-description");
    const auto at_e = s.find("You have written the following news blurb: E-blurb");
    REQUIRE(at_p != std::string::npos);
    REQUIRE(at_e != std::string::npos);
    CHECK(at_p < at_e);
    CHECK_FALSE(t.requires_context());
    CHECK(s.find("<|begin_of_text|>") == 0);
}

TEST_CASE("every task renders all of its templates") {
    for (const auto& task : known_tasks()) {
        for (auto fmt : {TemplateFormat::plain, TemplateFormat::llama3_chat}) {
            const auto t = task_templates(task, fmt);
            const Persona p{0, "persona text", PersonaSource::synthesized, std::nullopt, std::nullopt};
            const Observation e{"e", "ctx", "example text"};
            const std::string gen = build_prompt(t.generation, {&p, &e, "the title", ""});
            CHECK(gen.find("persona text") != std::string::npos);
            CHECK(gen.find("example text") != std::string::npos);
            CHECK(build_prompt(t.zero_shot, {nullptr, nullptr, "the title", ""}).find("persona text") == std::string::npos);
            const std::string synth = t.persona_synthesis.render({{"examples", numbered_list({"r1", "r2"})}});
            CHECK(synth.find("1. r1\n2. r2") != std::string::npos);
            CHECK(synth.size() >= std::string(kPersonaMarker).size());
            CHECK(synth.substr(synth.size() - std::string(kPersonaMarker).size()) == kPersonaMarker);
            const std::string mix = t.mixing.render({{"personas", "1. a"}, {"examples", "1. b"}});
            CHECK(mix.find("List of persona descriptions") != std::string::npos);
            CHECK(t.requires_context() == (task == "yelp" || task == "imdb"));
        }
    }
    CHECK_THROWS_AS(task_templates("squad", TemplateFormat::plain), ValidationError);
    CHECK_THROWS_AS(parse_template_format("chatml"), ValidationError);
}

TEST_CASE("steering clauses") {
    CHECK(task_templates("agnews", TemplateFormat::plain).steering_clause.empty());
    for (const std::string task : {"yelp", "sst2", "imdb"}) {
        const auto clause = task_templates(task, TemplateFormat::plain).steering_clause;
        CHECK(clause.find("had {sentiment} impression") != std::string::npos);
    }
}

TEST_CASE("topic classification prompt") {
    const auto t = task_templates("agnews", TemplateFormat::plain);
    REQUIRE(t.classification.has_value());
    CHECK(t.label_options == std::vector<std::string>{"world news", "sports news", "business news", "sci/tech news"});
    const std::string s = t.classification->render({{"persona", "You cover chips."}});
    CHECK(s.find("D. sci/tech news") != std::string::npos);
    CHECK(s.find("Answer: D") != std::string::npos);  // the worked example
    CHECK(s.find("Persona description: You cover chips.") != std::string::npos);
    CHECK_FALSE(task_templates("imdb", TemplateFormat::plain).classification.has_value());
}

TEST_CASE("persona marker stripping") {
    CHECK(strip_persona_marker("blah The short persona is:  You love goals. ") == "You love goals.");
    CHECK(strip_persona_marker("The short persona is: a The short persona is: b") == "b");
    CHECK(strip_persona_marker("  no marker\n") == "no marker");
    CHECK(trim(" \t\n") == "");
    CHECK(numbered_list({}) == "");
}
