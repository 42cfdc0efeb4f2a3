#pragma once
// HTTP clients for remote language models and encoders.
//
// Two scoring flavors:
//   full-logit       POST /v1/score with exact rest_logsumexp (the model-shim protocol)
//   topk-logprobs    OpenAI-style POST /v1/completions with echo + logprobs. The rest
//                    mass is approximated as log(max(1e-10, 1 - sum of top-k probs)),
//                    so tempered likelihoods away from tau = 1 are approximate.
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mop/embedder.hpp"
#include "mop/lm_backend.hpp"

namespace mop {

enum class RemoteFlavor { full_logit, topk_logprobs };
RemoteFlavor parse_remote_flavor(const std::string& s);
std::string remote_flavor_name(RemoteFlavor f);

/// Environment variable holding the bearer token sent to remote backends.
inline constexpr const char* kTokenEnv = "MOP_BACKEND_TOKEN";

struct RemoteConfig {
    std::string url;  // scheme://host:port
    RemoteFlavor flavor = RemoteFlavor::full_logit;
    int top_k = 64;   // 0 asks for the full row
    std::string model;  // model name sent to completions servers
    /// Vocabulary size assumed by the top-k logprob adapter (servers do not report it).
    int vocab_size = 32000;
    int retries = 3;
    int backoff_ms = 200;
    int timeout_s = 60;
    /// Bearer token; read from kTokenEnv when empty.
    std::string token;
};

struct ScoreResponse {
    ScoreSheet sheet;
    int vocab_size = 0;
    std::string model_fingerprint;
};

/// Floats on the wire are numbers or decimal strings ("-inf", "1e-3"); null is -inf.
double wire_double(const std::string& json_value);

/// Parses a /v1/score response body.
ScoreResponse parse_score_response(const std::string& body, const std::string& source = "score response");
/// Parses a /v1/completions echo response; tokens starting at or after `prompt_chars` form the continuation.
ScoreSheet parse_logprobs_response(const std::string& body, std::size_t prompt_chars, int vocab_size,
                                   const std::string& source = "completions response");
Matrix parse_embed_response(const std::string& body, std::size_t expected_rows,
                            const std::string& source = "embed response");

class HttpChannel {
public:
    explicit HttpChannel(RemoteConfig config);
    /// POSTs JSON, retrying transport failures, 429 and 5xx; returns the body of a 200.
    std::string post(const std::string& path, const std::string& body) const;
    std::string get(const std::string& path) const;
    const RemoteConfig& config() const noexcept { return config_; }

private:
    template <class Call>
    std::string with_retries(const std::string& path, Call&& call) const;
    RemoteConfig config_;
};

class RemoteLanguageModel final : public LanguageModel {
public:
    explicit RemoteLanguageModel(RemoteConfig config);
    /// From GET /v1/health (full-logit) or the configured model name (top-k logprobs); fetched once.
    std::string fingerprint() const override;
    ScoreSheet score(const std::string& prompt, const std::string& continuation) const override;
    std::string generate(const std::string& prompt, double temperature, int max_tokens,
                         std::uint64_t seed) const override;

private:
    HttpChannel channel_;
    mutable std::once_flag fp_once_;
    mutable std::string fingerprint_;
};

class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(RemoteConfig config, std::size_t batch = 64);
    std::size_t dim() const override;
    EmbedderFingerprint fingerprint() const override;
    std::vector<double> embed(const std::string& text) const override;
    Matrix embed_batch(std::span<const std::string> texts) const override;

private:
    void fetch_health() const;
    HttpChannel channel_;
    std::size_t batch_;
    mutable std::once_flag health_once_;
    mutable EmbedderFingerprint fingerprint_;
};

}  // namespace mop
