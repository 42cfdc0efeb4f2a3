#pragma once

// Two-level contextual gates over (persona, exemplar) pairs and the sparse
// mixture likelihood they define.
//
//   u     = W_x h(x)              persona logits  a_k  = u . g_k
//   g_k   = W_g h(g_k)            exemplar logits b_kj = (u + g_k) . e_j
//   e_j   = W_e h(e_j)            pi = softmax(a),  Omega_k = softmax_j(b_k)
//
//   log p(y | x) ~= log sum_{(k,j) in top-M} pi_k Omega_kj p_LM^{tau_k}(y | g_k, x_j, y_j, x)
//
// The W matrices map the encoder space R^{d'} into the gate space R^{d}.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mop/corpus.hpp"
#include "mop/embedder.hpp"
#include "mop/lm_backend.hpp"
#include "mop/matrix.hpp"
#include "mop/prompts.hpp"
#include "mop/score_cache.hpp"

namespace mop {

double softplus(double x);
double sigmoid(double x);
/// Inverse of softplus for y > 0.
double softplus_inverse(double y);

inline constexpr double kDefaultTauInit = 0.6;
inline constexpr double kDefaultTauMin = 0.05;

/// How the three projections start. `tied` draws one matrix and uses it for all
/// three, so initial gate logits follow encoder similarity; `independent` draws each.
enum class GateInit { independent, tied };

GateInit parse_gate_init(const std::string& s);
std::string gate_init_name(GateInit g);

struct GatingParams {
    Matrix w_context;   // d x d'
    Matrix w_persona;   // d x d'
    Matrix w_exemplar;  // d x d'
    std::vector<double> rho;  // tau_k = softplus(rho_k) + tau_min
    double tau_min = kDefaultTauMin;

    /// Entries drawn from N(0, 1/d'), temperatures set to tau_init.
    static GatingParams initialize(std::size_t personas, std::size_t input_dim, std::size_t hidden_dim,
                                   std::uint64_t seed, double tau_init = kDefaultTauInit,
                                   double tau_min = kDefaultTauMin, GateInit scheme = GateInit::independent);
    /// All-zero projections: uniform gates for every input.
    static GatingParams uniform(std::size_t personas, std::size_t input_dim, std::size_t hidden_dim,
                                double tau_init = kDefaultTauInit, double tau_min = kDefaultTauMin);

    std::size_t personas() const noexcept { return rho.size(); }
    std::size_t input_dim() const noexcept { return w_context.cols(); }
    std::size_t hidden_dim() const noexcept { return w_context.rows(); }
    double tau(std::size_t k) const { return softplus(rho[k]) + tau_min; }
    std::vector<double> taus() const;

    /// Flat view over every learnable coordinate, in the order
    /// w_context, w_persona, w_exemplar, rho.
    std::size_t parameter_count() const;
    double& coordinate(std::size_t i);
    double coordinate(std::size_t i) const;

    void validate() const;
};

/// What text represents an exemplar to the encoder.
enum class ExemplarText { response, context_and_response };

ExemplarText parse_exemplar_text(const std::string& s);
std::string exemplar_text_name(ExemplarText t);
std::string exemplar_embedding_text(const Observation& e, ExemplarText mode);

/// Encoder outputs for the fixed personas and exemplars.
struct GateState {
    Matrix persona_raw;   // K x d'
    Matrix exemplar_raw;  // N x d'
    EmbedderFingerprint embedder;

    static GateState build(const Embedder& embedder, const std::vector<Persona>& personas,
                           const ExemplarPool& pool, ExemplarText mode = ExemplarText::response);

    std::size_t personas() const noexcept { return persona_raw.rows(); }
    std::size_t exemplars() const noexcept { return exemplar_raw.rows(); }
};

/// Gate values for one input context.
struct GateEval {
    std::vector<double> u;        // W_x h(x)
    std::vector<double> log_pi;   // K
    Matrix log_omega;             // K x N

    double log_weight(std::size_t k, std::size_t j) const { return log_pi[k] + log_omega(k, j); }
};

/// Projections of personas and exemplars under one parameter setting,
/// reusable across every record evaluated with those parameters.
class GateNetwork {
public:
    GateNetwork(const GatingParams& params, const GateState& state);

    GateEval evaluate(std::span<const double> x_raw) const;

    const GatingParams& params() const noexcept { return params_; }
    const GateState& state() const noexcept { return state_; }
    const Matrix& projected_personas() const noexcept { return g_; }
    const Matrix& projected_exemplars() const noexcept { return e_; }

private:
    const GatingParams& params_;
    const GateState& state_;
    Matrix g_;   // K x d
    Matrix e_;   // N x d
    Matrix ge_;  // K x N, g_k . e_j
};

/// pi(x): softmax over personas.
std::vector<double> persona_gate(std::span<const double> x_raw, const GatingParams& params, const GateState& state);
/// Omega_k(x): softmax over exemplars for persona k.
std::vector<double> exemplar_gate(std::span<const double> x_raw, std::size_t k, const GatingParams& params,
                                  const GateState& state);

std::vector<double> log_softmax(std::span<const double> logits);
double logsumexp(std::span<const double> v);

struct SelectedPair {
    std::size_t k = 0;
    std::size_t j = 0;
    double weight = 0.0;      // pi_k * Omega_kj
    double log_weight = 0.0;
};

/// The M pairs with largest pi_k * Omega_kj, skipping exemplar `mask`; ties go
/// to the smaller (k, j). Returns every unmasked pair when M exceeds their count.
std::vector<SelectedPair> joint_top_m(std::span<const double> pi, const Matrix& omega, std::size_t m,
                                      std::optional<std::size_t> mask = std::nullopt);
/// Same selection on log-weights.
std::vector<SelectedPair> top_pairs(const GateEval& eval, std::size_t m, std::optional<std::size_t> mask);

struct MaskRule {
    enum class Kind { none, exclude_self, random };
    Kind kind = Kind::exclude_self;
    /// Masking probability for Kind::random.
    double probability = 0.5;
    std::uint64_t seed = 0;

    static MaskRule parse(const std::string& s, double probability = 0.5, std::uint64_t seed = 0);
    std::string name() const;
};

/// Exemplar index to exclude when scoring `record`, if any.
std::optional<std::size_t> resolve_mask(const MaskRule& rule, const Observation& record, const ExemplarPool& pool,
                                        std::uint64_t salt = 0);

struct GatingGradient {
    Matrix w_context;
    Matrix w_persona;
    Matrix w_exemplar;
    std::vector<double> rho;
    /// Mean negative log-likelihood of the batch.
    double objective = 0.0;

    double coordinate(std::size_t i) const;
};

/// The fixed pieces of a mixture: personas, pool, encoder, backend and prompt.
class Mixture {
public:
    Mixture(const std::vector<Persona>& personas, const ExemplarPool& pool, const GateState& state,
            const Embedder& embedder, const LanguageModel& backend, ScoreCache& cache, PromptTemplate prompt);

    std::string prompt_for(std::size_t k, std::size_t j, const std::string& context) const;

    /// Sheet for (persona k, exemplar j) scoring `record`'s response.
    std::shared_ptr<const ScoreSheet> sheet(std::size_t k, std::size_t j, const Observation& record) const;

    /// Sparse log-likelihood of one record (log-space, max subtracted).
    double loglik(const Observation& record, const GatingParams& params, std::size_t m,
                  const MaskRule& mask = {}) const;
    /// Mean sparse log-likelihood over records; gate projections computed once.
    double mean_loglik(std::span<const Observation> records, const GatingParams& params, std::size_t m,
                       const MaskRule& mask = {}) const;

    /// Gradient of the batch mean negative log-likelihood. Top-M selection and
    /// masks are held fixed; accumulation runs in (record, k, j) order.
    GatingGradient gradient(std::span<const Observation> batch, const GatingParams& params, std::size_t m,
                            const MaskRule& mask = {}, std::uint64_t mask_salt = 0) const;

    std::vector<double> embed_context(const std::string& context) const { return embedder_.embed(context); }

    const std::vector<Persona>& personas() const noexcept { return personas_; }
    const ExemplarPool& pool() const noexcept { return pool_; }
    const GateState& state() const noexcept { return state_; }
    const Embedder& embedder() const noexcept { return embedder_; }
    const LanguageModel& backend() const noexcept { return backend_; }
    ScoreCache& cache() const noexcept { return cache_; }
    const PromptTemplate& prompt_template() const noexcept { return prompt_; }

private:
    double record_loglik(const GateNetwork& net, const Observation& record, std::size_t m,
                         std::optional<std::size_t> mask) const;

    const std::vector<Persona>& personas_;
    const ExemplarPool& pool_;
    const GateState& state_;
    const Embedder& embedder_;
    const LanguageModel& backend_;
    ScoreCache& cache_;
    PromptTemplate prompt_;
};

/// Versioned on-disk container for trained gates.
struct Checkpoint {
    GatingParams params;
    std::string personas_hash;
    std::string pool_hash;
    EmbedderFingerprint embedder;
    std::string backend_fingerprint;
    ExemplarText exemplar_text = ExemplarText::response;
};

std::string serialize_checkpoint(const Checkpoint& c);
Checkpoint parse_checkpoint(const std::string& content, const std::string& source);
void write_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

struct CheckpointExpectations {
    std::string personas_hash;
    std::string pool_hash;
    EmbedderFingerprint embedder;
    std::string backend_fingerprint;
    /// Reusing gates with a different frozen backend is legitimate (plug-and-play).
    bool allow_backend_swap = false;
};

/// Throws ValidationError on any mismatch unless `force`.
void verify_checkpoint(const Checkpoint& c, const CheckpointExpectations& expected, bool force = false);

}  // namespace mop
