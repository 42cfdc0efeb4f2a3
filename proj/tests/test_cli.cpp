#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "doctest.h"
#include "mop/cli.hpp"
#include "mop/error.hpp"
#include "support.hpp"

using namespace mop;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "mop");
    args.push_back("--log-level");
    args.push_back("off");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// The bundled fixture, shrunk so the whole pipeline runs in a few seconds.
struct MiniRun {
    test::TempDir dir{"cli"};
    std::string config;

    MiniRun() {
        const fs::path src = fs::path(MOP_SOURCE_DIR) / "fixtures" / "mini";
        for (const char* f : {"train.jsonl", "golden.jsonl", "backend_corpus.txt"}) fs::copy_file(src / f, dir.path() / f);
        json c = json::parse(slurp(src / "config.json"));
        c["personas"]["K"] = 3;
        c["gating"]["N"] = 12;
        c["gating"]["d"] = 16;
        c["train"]["max_epochs"] = 2;
        c["generate"]["count"] = 40;
        c["generate"]["max_tokens"] = 24;
        c["metrics"]["mauve_clusters"] = 4;
        config = dir.file("config.json");
        std::ofstream(config) << c.dump(2);
    }
    std::string out() const { return dir.file("out"); }
};

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run_cli({}) == 2);
    CHECK(run_cli({"frobnicate"}) == 2);
    CHECK(run_cli({"train"}) == 2);
}

TEST_CASE("config problems are validation errors") {
    MiniRun r;
    CHECK(run_cli({"train", "-c", r.dir.file("missing.json")}) == 2);

    const std::string bad = r.dir.file("bad.json");
    std::ofstream(bad) << R"({"task": "imdb", "gating": {"Q": 1}})";
    CHECK(run_cli({"train", "-c", bad}) == 2);
    std::ofstream(bad, std::ios::trunc) << R"({"task": "imdb", "gating": {"N": "many"}})";
    CHECK(run_cli({"train", "-c", bad}) == 2);

    CHECK(run_cli({"train", "-c", r.config, "--set", "gating.nope=3"}) == 2);
    CHECK(run_cli({"train", "-c", r.config, "--set", "personas.K=0"}) == 2);
    // Training before persona synthesis has no personas to read.
    CHECK(run_cli({"train", "-c", r.config, "-o", r.out()}) == 2);
}

TEST_CASE("config overrides and manifests") {
    cli::RunConfig c = cli::load_config(MiniRun().config);
    c.apply_override("gating.M=8");
    CHECK(c.top_m == 8);
    c.apply_override("generate.contexts=golden");
    CHECK(c.context_source == "golden");
    CHECK_THROWS_AS(c.apply_override("gating.M"), ValidationError);
    CHECK_THROWS_AS(c.apply_override("gating.M=-1"), ValidationError);

    cli::RunConfig d;
    d.apply(c.to_json(), "", "roundtrip");
    CHECK(d.to_json() == c.to_json());
}

TEST_CASE("pipeline runs end to end and replays from a manifest") {
    MiniRun r;
    const std::string out = r.out();
    REQUIRE(run_cli({"synth-personas", "-c", r.config, "-o", out}) == 0);
    const json personas = json::parse(slurp(fs::path(out) / "personas.json"));
    CHECK(personas.size() == 3);

    REQUIRE(run_cli({"train", "-c", r.config, "-o", out}) == 0);
    for (const char* f : {"pool.jsonl", "checkpoint_best.json", "checkpoint_final.json", "train_report.json",
                          "train_manifest.json"}) {
        CHECK_MESSAGE(fs::exists(fs::path(out) / f), f);
    }

    REQUIRE(run_cli({"generate", "-c", r.config, "-o", out}) == 0);
    std::size_t lines = 0;
    {
        std::ifstream in(fs::path(out) / "generations.jsonl");
        for (std::string line; std::getline(in, line);) {
            const json g = json::parse(line);
            CHECK(g.contains("text"));
            ++lines;
        }
    }
    CHECK(lines == 40);
    REQUIRE(run_cli({"generate", "-c", r.config, "-o", out, "--baseline", "zero-shot"}) == 0);
    CHECK(fs::exists(fs::path(out) / "baseline_generations.jsonl"));
    CHECK(run_cli({"generate", "-c", r.config, "-o", out, "--baseline", "few-shot"}) == 2);

    REQUIRE(run_cli({"evaluate", "-c", r.config, "-o", out}) == 0);
    const json report = json::parse(slurp(fs::path(out) / "eval_report.json"));
    CHECK(report.at("fid").get<double>() >= 0.0);
    CHECK(report.at("mauve").get<double>() <= 1.0);

    const std::string csv = r.dir.file("gates.csv");
    REQUIRE(run_cli({"inspect", "-c", r.config, "-o", out, "--context", "Heat", "--output", csv}) == 0);
    CHECK(slurp(csv).rfind("gate,persona,exemplar,probability\n", 0) == 0);

    // The generate manifest replays to byte-identical generations.
    const fs::path manifest = fs::path(out) / "generate_manifest.json";
    const json m = json::parse(slurp(manifest));
    CHECK(m.at("format") == "mop-manifest");
    const std::string before = slurp(fs::path(out) / "generations.jsonl");
    const std::string replay = r.dir.file("replay.jsonl");
    REQUIRE(run_cli({"generate", "-c", manifest.string(), "--output", replay}) == 0);
    CHECK(slurp(replay) == before);
}
