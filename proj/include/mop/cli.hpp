#pragma once
// Operator commands over one JSON run configuration.
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mop/embedder.hpp"
#include "mop/lm_backend.hpp"
#include "mop/remote.hpp"
#include "mop/toy_lm.hpp"

namespace mop::cli {

struct BackendSpec {
    std::string kind = "toy";  // toy | remote
    std::string corpus;        // toy: one training document per line
    ToyLmConfig toy;
    RemoteConfig remote;
};

struct EmbedderSpec {
    std::string kind = "hashing";  // hashing | remote
    std::size_t dim = 256;
    std::size_t ngram = 3;
    RemoteConfig remote;
};

struct RunConfig {
    std::string task = "agnews";
    std::string template_format = "plain";

    std::string train_path;
    std::string golden_path;
    double heldout_fraction = 0.2;
    std::uint64_t split_seed = 0;

    BackendSpec backend;
    std::string backend_flavor = "full-logit";
    EmbedderSpec embedder;

    std::size_t personas = 100;
    std::size_t representatives = 10;
    std::uint64_t persona_seed = 0;
    int persona_max_tokens = 160;
    bool label_personas = false;

    std::size_t exemplars = 1000;
    std::size_t top_m = 4;
    std::size_t hidden_dim = 128;
    double tau_init = 0.6;
    double tau_min = 0.05;
    std::string exemplar_text = "response";
    std::uint64_t pool_seed = 0;
    std::uint64_t init_seed = 0;
    std::string init = "tied";
    std::string mask = "exclude-self";
    double mask_probability = 0.5;

    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    int max_epochs = 20;
    int patience = 5;
    std::uint64_t train_seed = 0;

    std::size_t count = 5000;
    std::uint64_t generate_seed = 0;
    int max_tokens = 64;
    std::string context_source = "auto";  // auto | empty | train | golden | list
    std::vector<std::string> context_list;
    double baseline_temperature = 1.0;
    double mixing_temperature = 1.0;

    std::size_t mauve_clusters = 500;
    double mauve_scaling = 1.0;
    std::size_t mauve_grid = 100;
    std::size_t kl_bins = 100;
    double kl_epsilon = 1e-8;
    std::uint64_t metric_seed = 0;

    std::string output_dir = "out";

    /// Applies a JSON document; unknown keys and wrong types are validation errors.
    /// Relative paths are resolved against `base_dir`.
    void apply(const std::string& json_text, const std::string& base_dir, const std::string& source);
    /// `section.key=value` with a JSON (or bare string) value, e.g. "gating.M=8".
    void apply_override(const std::string& assignment);
    void validate() const;
    /// Canonical JSON of every field, the form stored in manifests.
    std::string to_json() const;
};

RunConfig load_config(const std::string& path);

std::unique_ptr<LanguageModel> make_backend(const BackendSpec& spec);
std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec);

/// Runs the command line; returns the process exit code (0 ok, 1 runtime, 2 validation).
int run(int argc, char** argv);

}  // namespace mop::cli
