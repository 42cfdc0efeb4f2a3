#pragma once
// Shared fixtures for the unit tests.
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <unistd.h>

#include "mop/corpus.hpp"
#include "mop/embedder.hpp"
#include "mop/gating.hpp"
#include "mop/matrix.hpp"
#include "mop/prompts.hpp"
#include "mop/random.hpp"
#include "mop/score_cache.hpp"
#include "mop/toy_lm.hpp"

namespace mop::test {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    Matrix m(rows, cols);
    Rng rng(seed);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() / ("mop-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline const std::vector<std::string>& small_corpus() {
    static const std::vector<std::string> docs = {
        "the cat sat on the mat. the dog sat on the log.",
        "a good movie with a great cast and a fine plot.",
        "the market rallied as bank shares rose sharply today.",
        "the team won the cup after a late goal in the final.",
        "scientists measured the reaction at high temperature.",
    };
    return docs;
}

inline ToyLmConfig small_toy_config() {
    ToyLmConfig c;
    c.order = 3;
    c.alpha = 0.1;
    return c;
}

/// Backend whose generations come from a callback and whose scores come from a
/// toy model. Records every generation prompt.
class ScriptedLm final : public LanguageModel {
public:
    using Reply = std::function<std::string(const std::string& prompt, std::uint64_t seed)>;

    explicit ScriptedLm(Reply reply, std::string name = "scripted")
        : reply_(std::move(reply)), name_(std::move(name)), scorer_(small_toy_config(), small_corpus()) {}

    std::string fingerprint() const override { return name_; }
    ScoreSheet score(const std::string& prompt, const std::string& continuation) const override {
        return scorer_.score(prompt, continuation);
    }
    std::string generate(const std::string& prompt, double, int, std::uint64_t seed) const override {
        std::lock_guard lock(mu_);
        prompts_.push_back(prompt);
        return reply_(prompt, seed);
    }

    std::vector<std::string> prompts() const {
        std::lock_guard lock(mu_);
        return prompts_;
    }

private:
    Reply reply_;
    std::string name_;
    ToyLanguageModel scorer_;
    mutable std::mutex mu_;
    mutable std::vector<std::string> prompts_;
};

/// A complete random mixture instance small enough for finite differences.
struct Instance {
    std::vector<Persona> personas;
    ExemplarPool pool;
    std::vector<Observation> records;
    std::unique_ptr<HashingEmbedder> embedder;
    std::unique_ptr<ToyLanguageModel> backend;
    GateState state;
    ScoreCache cache;
    std::unique_ptr<Mixture> mixture;
    GatingParams params;

    Instance(std::size_t K, std::size_t N, std::size_t d, std::size_t d_in, std::uint64_t seed,
             std::size_t n_records = 4) {
        static const char* words[] = {"good", "bad", "plot", "cast", "cup", "goal", "bank", "rate",
                                      "cell", "test", "slow", "fast", "warm", "cold", "long", "short"};
        Rng rng(seed);
        auto phrase = [&](std::size_t n) {
            std::string s;
            for (std::size_t i = 0; i < n; ++i) {
                if (i) s += ' ';
                s += words[rng.below(16)];
            }
            return s;
        };
        for (std::size_t k = 0; k < K; ++k) {
            personas.push_back({static_cast<int>(k), "a reviewer who likes " + phrase(3), PersonaSource::user_defined,
                                std::nullopt, std::nullopt});
        }
        for (std::size_t j = 0; j < N; ++j) {
            pool.exemplars.push_back({"ex" + std::to_string(j), phrase(2), phrase(4)});
            pool.origin_ids.push_back("ex" + std::to_string(j));
        }
        for (std::size_t i = 0; i < n_records; ++i) {
            records.push_back({"rec" + std::to_string(i), phrase(2), phrase(3)});
        }
        embedder = std::make_unique<HashingEmbedder>(d_in, 3);
        backend = std::make_unique<ToyLanguageModel>(small_toy_config(), small_corpus());
        state = GateState::build(*embedder, personas, pool);
        mixture = std::make_unique<Mixture>(personas, pool, state, *embedder, *backend, cache,
                                            task_templates("imdb", TemplateFormat::plain).generation);
        params = GatingParams::initialize(K, d_in, d, derive_seed(seed, 1));
        // Spread the temperatures so the rho gradients differ per persona.
        for (std::size_t k = 0; k < K; ++k) params.rho[k] += 0.3 * rng.normal();
        for (double& v : params.w_context.data()) v *= 2.0;
    }
};

}  // namespace mop::test
