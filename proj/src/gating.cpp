#include "mop/gating.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "mop/error.hpp"
#include "mop/hashing.hpp"
#include "mop/random.hpp"

namespace mop {

using ojson = nlohmann::ordered_json;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw ValidationError("softplus inverse needs a positive argument");
    return y > 30.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

// ---------------------------------------------------------------------------
// Parameters

GateInit parse_gate_init(const std::string& s) {
    if (s == "independent") return GateInit::independent;
    if (s == "tied") return GateInit::tied;
    throw ValidationError("unknown gate init '" + s + "' (expected independent or tied)");
}

std::string gate_init_name(GateInit g) { return g == GateInit::tied ? "tied" : "independent"; }

GatingParams GatingParams::initialize(std::size_t personas, std::size_t input_dim, std::size_t hidden_dim,
                                      std::uint64_t seed, double tau_init, double tau_min, GateInit scheme) {
    GatingParams p = uniform(personas, input_dim, hidden_dim, tau_init, tau_min);
    Rng rng(derive_seed(seed, 0x6a7e));
    const double sd = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (Matrix* m : {&p.w_context, &p.w_persona, &p.w_exemplar}) {
        if (scheme == GateInit::tied && m != &p.w_context) {
            *m = p.w_context;
            continue;
        }
        for (double& v : m->data()) v = sd * rng.normal();
    }
    return p;
}

GatingParams GatingParams::uniform(std::size_t personas, std::size_t input_dim, std::size_t hidden_dim,
                                   double tau_init, double tau_min) {
    if (personas == 0 || input_dim == 0 || hidden_dim == 0) throw ValidationError("gating dimensions must be positive");
    if (!(tau_min > 0.0) || !(tau_init > tau_min)) throw ValidationError("need tau_init > tau_min > 0");
    GatingParams p;
    p.w_context = Matrix(hidden_dim, input_dim);
    p.w_persona = Matrix(hidden_dim, input_dim);
    p.w_exemplar = Matrix(hidden_dim, input_dim);
    p.rho.assign(personas, softplus_inverse(tau_init - tau_min));
    p.tau_min = tau_min;
    return p;
}

std::vector<double> GatingParams::taus() const {
    std::vector<double> out(rho.size());
    for (std::size_t k = 0; k < rho.size(); ++k) out[k] = tau(k);
    return out;
}

std::size_t GatingParams::parameter_count() const {
    return w_context.size() + w_persona.size() + w_exemplar.size() + rho.size();
}

double& GatingParams::coordinate(std::size_t i) {
    for (Matrix* m : {&w_context, &w_persona, &w_exemplar}) {
        if (i < m->size()) return m->data()[i];
        i -= m->size();
    }
    return rho.at(i);
}

double GatingParams::coordinate(std::size_t i) const { return const_cast<GatingParams*>(this)->coordinate(i); }

void GatingParams::validate() const {
    const std::size_t d = hidden_dim(), din = input_dim();
    for (const Matrix* m : {&w_persona, &w_exemplar}) {
        if (m->rows() != d || m->cols() != din) throw ValidationError("gating projection shapes disagree");
    }
    if (rho.empty()) throw ValidationError("no personas in gating parameters");
    if (!(tau_min > 0.0)) throw ValidationError("tau_min must be positive");
    for (const Matrix* m : {&w_context, &w_persona, &w_exemplar}) {
        for (double v : m->data()) {
            if (!std::isfinite(v)) throw NumericalError("non-finite gating weight");
        }
    }
    for (double r : rho) {
        if (!std::isfinite(r)) throw NumericalError("non-finite temperature parameter");
    }
}

double GatingGradient::coordinate(std::size_t i) const {
    for (const Matrix* m : {&w_context, &w_persona, &w_exemplar}) {
        if (i < m->size()) return m->data()[i];
        i -= m->size();
    }
    return rho.at(i);
}

// ---------------------------------------------------------------------------
// Encoder state

ExemplarText parse_exemplar_text(const std::string& s) {
    if (s == "response") return ExemplarText::response;
    if (s == "context+response") return ExemplarText::context_and_response;
    throw ValidationError("unknown exemplar text mode '" + s + "' (expected response or context+response)");
}

std::string exemplar_text_name(ExemplarText t) {
    return t == ExemplarText::response ? "response" : "context+response";
}

std::string exemplar_embedding_text(const Observation& e, ExemplarText mode) {
    if (mode == ExemplarText::response || e.context.empty()) return e.response;
    return e.context + "\n" + e.response;
}

GateState GateState::build(const Embedder& embedder, const std::vector<Persona>& personas, const ExemplarPool& pool,
                           ExemplarText mode) {
    if (personas.empty()) throw ValidationError("no personas");
    if (pool.size() == 0) throw ValidationError("empty exemplar pool");
    std::vector<std::string> persona_text, exemplar_text;
    for (const auto& p : personas) persona_text.push_back(p.description);
    for (const auto& e : pool.exemplars) exemplar_text.push_back(exemplar_embedding_text(e, mode));
    return {embedder.embed_batch(persona_text), embedder.embed_batch(exemplar_text), embedder.fingerprint()};
}

// ---------------------------------------------------------------------------
// Gates

double logsumexp(std::span<const double> v) {
    double top = -std::numeric_limits<double>::infinity();
    for (double x : v) top = std::max(top, x);
    if (!std::isfinite(top)) return top;
    double s = 0.0;
    for (double x : v) s += std::exp(x - top);
    return top + std::log(s);
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double lse = logsumexp(logits);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

GateNetwork::GateNetwork(const GatingParams& params, const GateState& state)
    : params_(params), state_(state) {
    params.validate();
    if (state.persona_raw.cols() != params.input_dim() || state.exemplar_raw.cols() != params.input_dim()) {
        throw ValidationError("encoder dimension " + std::to_string(state.persona_raw.cols()) +
                              " does not match gating input dimension " + std::to_string(params.input_dim()));
    }
    if (state.personas() != params.personas()) {
        throw ValidationError("gating parameters are for " + std::to_string(params.personas()) + " personas, state has " +
                              std::to_string(state.personas()));
    }
    g_ = project_rows(params.w_persona, state.persona_raw);
    e_ = project_rows(params.w_exemplar, state.exemplar_raw);
    ge_ = Matrix(g_.rows(), e_.rows());
    for (std::size_t k = 0; k < g_.rows(); ++k) {
        for (std::size_t j = 0; j < e_.rows(); ++j) ge_(k, j) = dot(g_.row(k), e_.row(j));
    }
}

GateEval GateNetwork::evaluate(std::span<const double> x_raw) const {
    if (x_raw.size() != params_.input_dim()) {
        throw ValidationError("context embedding has dimension " + std::to_string(x_raw.size()) + ", expected " +
                              std::to_string(params_.input_dim()));
    }
    const std::size_t K = g_.rows(), N = e_.rows();
    GateEval out;
    out.u.resize(params_.hidden_dim());
    matvec(params_.w_context, x_raw, out.u);

    std::vector<double> a(K);
    for (std::size_t k = 0; k < K; ++k) a[k] = dot(out.u, g_.row(k));
    out.log_pi = log_softmax(a);

    std::vector<double> ue(N);
    for (std::size_t j = 0; j < N; ++j) ue[j] = dot(out.u, e_.row(j));
    out.log_omega = Matrix(K, N);
    std::vector<double> b(N);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < N; ++j) b[j] = ue[j] + ge_(k, j);
        const auto lo = log_softmax(b);
        std::copy(lo.begin(), lo.end(), out.log_omega.row(k).begin());
    }
    return out;
}

std::vector<double> persona_gate(std::span<const double> x_raw, const GatingParams& params, const GateState& state) {
    const GateEval ev = GateNetwork(params, state).evaluate(x_raw);
    std::vector<double> pi(ev.log_pi.size());
    for (std::size_t k = 0; k < pi.size(); ++k) pi[k] = std::exp(ev.log_pi[k]);
    return pi;
}

std::vector<double> exemplar_gate(std::span<const double> x_raw, std::size_t k, const GatingParams& params,
                                  const GateState& state) {
    if (k >= state.personas()) throw ValidationError("persona index out of range");
    const GateEval ev = GateNetwork(params, state).evaluate(x_raw);
    std::vector<double> omega(state.exemplars());
    for (std::size_t j = 0; j < omega.size(); ++j) omega[j] = std::exp(ev.log_omega(k, j));
    return omega;
}

// ---------------------------------------------------------------------------
// Sparse selection

namespace {

struct Candidate {
    double log_weight;
    std::size_t k;
    std::size_t j;
};

bool better(const Candidate& a, const Candidate& b) {
    if (a.log_weight != b.log_weight) return a.log_weight > b.log_weight;
    if (a.k != b.k) return a.k < b.k;
    return a.j < b.j;
}

template <class LogWeight>
std::vector<SelectedPair> select(std::size_t K, std::size_t N, std::size_t m, std::optional<std::size_t> mask,
                                 LogWeight&& log_weight) {
    if (m == 0) throw ValidationError("top-M needs M >= 1");
    const std::size_t unmasked = K * (N - (mask && *mask < N ? 1 : 0));
    if (m > unmasked) {
        spdlog::debug("top-M: M={} exceeds {} unmasked pairs; using all of them", m, unmasked);
        m = unmasked;
    }
    std::vector<Candidate> best;
    best.reserve(m + 1);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < N; ++j) {
            if (mask && j == *mask) continue;
            const Candidate c{log_weight(k, j), k, j};
            if (best.size() == m && !better(c, best.back())) continue;
            best.insert(std::upper_bound(best.begin(), best.end(), c, better), c);
            if (best.size() > m) best.pop_back();
        }
    }
    std::vector<SelectedPair> out;
    out.reserve(best.size());
    for (const auto& c : best) out.push_back({c.k, c.j, std::exp(c.log_weight), c.log_weight});
    return out;
}

}  // namespace

std::vector<SelectedPair> joint_top_m(std::span<const double> pi, const Matrix& omega, std::size_t m,
                                      std::optional<std::size_t> mask) {
    if (omega.rows() != pi.size()) throw ValidationError("pi and Omega disagree on the persona count");
    auto out = select(pi.size(), omega.cols(), m, mask,
                      [&](std::size_t k, std::size_t j) { return std::log(pi[k] * omega(k, j)); });
    for (auto& p : out) p.weight = pi[p.k] * omega(p.k, p.j);
    return out;
}

std::vector<SelectedPair> top_pairs(const GateEval& eval, std::size_t m, std::optional<std::size_t> mask) {
    return select(eval.log_pi.size(), eval.log_omega.cols(), m, mask,
                  [&](std::size_t k, std::size_t j) { return eval.log_weight(k, j); });
}

MaskRule MaskRule::parse(const std::string& s, double probability, std::uint64_t seed) {
    MaskRule r;
    r.probability = probability;
    r.seed = seed;
    if (s == "none") {
        r.kind = Kind::none;
    } else if (s == "exclude-self") {
        r.kind = Kind::exclude_self;
    } else if (s == "random") {
        r.kind = Kind::random;
        if (!(probability >= 0.0 && probability <= 1.0)) throw ValidationError("mask probability must lie in [0, 1]");
    } else {
        throw ValidationError("unknown mask rule '" + s + "' (expected none, exclude-self or random)");
    }
    return r;
}

std::string MaskRule::name() const {
    switch (kind) {
        case Kind::none:
            return "none";
        case Kind::exclude_self:
            return "exclude-self";
        case Kind::random:
            return "random";
    }
    return "none";
}

std::optional<std::size_t> resolve_mask(const MaskRule& rule, const Observation& record, const ExemplarPool& pool,
                                        std::uint64_t salt) {
    if (rule.kind == MaskRule::Kind::none) return std::nullopt;
    const auto j = pool.index_of(record.id);
    if (!j) return std::nullopt;
    if (rule.kind == MaskRule::Kind::random) {
        Rng rng(derive_seed(rule.seed ^ fnv1a64(record.id), salt));
        if (rng.uniform() >= rule.probability) return std::nullopt;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Mixture likelihood

Mixture::Mixture(const std::vector<Persona>& personas, const ExemplarPool& pool, const GateState& state,
                 const Embedder& embedder, const LanguageModel& backend, ScoreCache& cache, PromptTemplate prompt)
    : personas_(personas), pool_(pool), state_(state), embedder_(embedder), backend_(backend), cache_(cache),
      prompt_(std::move(prompt)) {
    if (state.personas() != personas.size() || state.exemplars() != pool.size()) {
        throw ValidationError("gate state does not match the personas / pool");
    }
    if (!(state.embedder == embedder.fingerprint())) {
        throw ValidationError("gate state was built with embedder " + state.embedder.str() + ", not " +
                              embedder.fingerprint().str());
    }
}

std::string Mixture::prompt_for(std::size_t k, std::size_t j, const std::string& context) const {
    PromptBundle b;
    b.persona = &personas_.at(k);
    b.exemplar = &pool_.exemplars.at(j);
    b.context = context;
    return build_prompt(prompt_, b);
}

std::shared_ptr<const ScoreSheet> Mixture::sheet(std::size_t k, std::size_t j, const Observation& record) const {
    try {
        return cache_.score(backend_, prompt_for(k, j, record.context), record.response);
    } catch (const TransportError& e) {
        throw TransportError(e.endpoint(), e.attempts(), e.last_status(),
                             "scoring pair (k=" + std::to_string(k) + ", j=" + std::to_string(j) + ") failed");
    }
}

double Mixture::record_loglik(const GateNetwork& net, const Observation& record, std::size_t m,
                              std::optional<std::size_t> mask) const {
    const auto x = embed_context(record.context);
    const GateEval ev = net.evaluate(x);
    const auto pairs = top_pairs(ev, m, mask);
    std::vector<double> terms;
    terms.reserve(pairs.size());
    for (const auto& p : pairs) {
        terms.push_back(p.log_weight + tempered_loglik(*sheet(p.k, p.j, record), net.params().tau(p.k)));
    }
    return logsumexp(terms);
}

double Mixture::loglik(const Observation& record, const GatingParams& params, std::size_t m,
                       const MaskRule& mask) const {
    const GateNetwork net(params, state_);
    return record_loglik(net, record, m, resolve_mask(mask, record, pool_));
}

double Mixture::mean_loglik(std::span<const Observation> records, const GatingParams& params, std::size_t m,
                            const MaskRule& mask) const {
    if (records.empty()) throw ValidationError("no records to evaluate");
    const GateNetwork net(params, state_);
    double total = 0.0;
    for (const auto& r : records) total += record_loglik(net, r, m, resolve_mask(mask, r, pool_));
    return total / static_cast<double>(records.size());
}

GatingGradient Mixture::gradient(std::span<const Observation> batch, const GatingParams& params, std::size_t m,
                                 const MaskRule& mask, std::uint64_t mask_salt) const {
    if (batch.empty()) throw ValidationError("empty batch");
    const GateNetwork net(params, state_);
    const std::size_t K = state_.personas(), N = state_.exemplars(), d = params.hidden_dim();
    const Matrix& G = net.projected_personas();
    const Matrix& E = net.projected_exemplars();
    const double scale = -1.0 / static_cast<double>(batch.size());

    GatingGradient grad;
    grad.w_context = Matrix(d, params.input_dim());
    grad.w_persona = Matrix(d, params.input_dim());
    grad.w_exemplar = Matrix(d, params.input_dim());
    grad.rho.assign(K, 0.0);
    Matrix dG(K, d), dE(N, d);

    std::vector<double> du(d), delta_b(N), u_plus_g(d);
    for (const auto& record : batch) {
        const auto x = embed_context(record.context);
        const GateEval ev = net.evaluate(x);
        const auto pairs = top_pairs(ev, m, resolve_mask(mask, record, pool_, mask_salt));

        std::vector<double> terms(pairs.size()), dtau(pairs.size());
        for (std::size_t s = 0; s < pairs.size(); ++s) {
            const TemperedValue tv = tempered(*sheet(pairs[s].k, pairs[s].j, record), params.tau(pairs[s].k));
            terms[s] = pairs[s].log_weight + tv.loglik;
            dtau[s] = tv.dtau;
        }
        const double L = logsumexp(terms);
        if (!std::isfinite(L)) throw NumericalError("non-finite log-likelihood for record '" + record.id + "'");
        grad.objective += scale * L;

        // Responsibilities of the selected pairs, summed per persona.
        std::vector<double> resp(pairs.size()), R(K, 0.0);
        for (std::size_t s = 0; s < pairs.size(); ++s) {
            resp[s] = std::exp(terms[s] - L);
            R[pairs[s].k] += resp[s];
        }

        // dL/da_k = R_k - pi_k
        std::fill(du.begin(), du.end(), 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            const double da = R[k] - std::exp(ev.log_pi[k]);
            if (da == 0.0) continue;
            simd::axpy(da, G.row(k).data(), du.data(), d);
            simd::axpy(scale * da, ev.u.data(), dG.row(k).data(), d);
        }

        // dL/db_kj = r_kj - Omega_kj R_k, non-zero only for personas with a selected pair.
        for (std::size_t k = 0; k < K; ++k) {
            if (R[k] == 0.0) continue;
            for (std::size_t j = 0; j < N; ++j) delta_b[j] = -std::exp(ev.log_omega(k, j)) * R[k];
            for (std::size_t s = 0; s < pairs.size(); ++s) {
                if (pairs[s].k == k) delta_b[pairs[s].j] += resp[s];
            }
            for (std::size_t c = 0; c < d; ++c) u_plus_g[c] = ev.u[c] + G(k, c);
            for (std::size_t j = 0; j < N; ++j) {
                const double db = delta_b[j];
                if (db == 0.0) continue;
                simd::axpy(db, E.row(j).data(), du.data(), d);
                simd::axpy(scale * db, E.row(j).data(), dG.row(k).data(), d);
                simd::axpy(scale * db, u_plus_g.data(), dE.row(j).data(), d);
            }
            // dL/dtau_k through the tempered likelihood, then the softplus.
            double dtau_k = 0.0;
            for (std::size_t s = 0; s < pairs.size(); ++s) {
                if (pairs[s].k == k) dtau_k += resp[s] * dtau[s];
            }
            grad.rho[k] += scale * dtau_k * sigmoid(params.rho[k]);
        }

        add_outer(grad.w_context, scale, du, x);
    }

    for (std::size_t k = 0; k < K; ++k) add_outer(grad.w_persona, 1.0, dG.row(k), state_.persona_raw.row(k));
    for (std::size_t j = 0; j < N; ++j) add_outer(grad.w_exemplar, 1.0, dE.row(j), state_.exemplar_raw.row(j));

    for (std::size_t i = 0; i < params.parameter_count(); ++i) {
        if (!std::isfinite(grad.coordinate(i))) {
            throw NumericalError("non-finite gradient in batch starting with record '" + batch.front().id + "'");
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

ojson matrix_json(const Matrix& m) { return ojson(m.data()); }

Matrix matrix_from(const ojson& j, std::size_t rows, std::size_t cols, const std::string& name) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != rows * cols) throw ValidationError("checkpoint matrix " + name + " has the wrong size");
    Matrix m(rows, cols);
    m.data() = std::move(v);
    return m;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    ojson o;
    o["format"] = "mop-checkpoint";
    o["format_version"] = kFormatVersion;
    o["hidden_dim"] = c.params.hidden_dim();
    o["input_dim"] = c.params.input_dim();
    o["personas"] = c.params.personas();
    o["exemplars"] = nullptr;
    o["tau_min"] = c.params.tau_min;
    o["personas_hash"] = c.personas_hash;
    o["pool_hash"] = c.pool_hash;
    o["embedder"] = {{"name", c.embedder.name}, {"dim", c.embedder.dim}, {"config_hash", c.embedder.config_hash}};
    o["backend_fingerprint"] = c.backend_fingerprint;
    o["exemplar_text"] = exemplar_text_name(c.exemplar_text);
    o["rho"] = c.params.rho;
    o["w_context"] = matrix_json(c.params.w_context);
    o["w_persona"] = matrix_json(c.params.w_persona);
    o["w_exemplar"] = matrix_json(c.params.w_exemplar);
    return o.dump() + "\n";
}

Checkpoint parse_checkpoint(const std::string& content, const std::string& source) {
    ojson o;
    try {
        o = ojson::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(source + ": invalid JSON: " + e.what());
    }
    try {
        if (o.value("format", std::string()) != "mop-checkpoint") throw ValidationError(source + ": not a checkpoint");
        if (o.value("format_version", -1) != kFormatVersion) {
            throw ValidationError(source + ": unsupported checkpoint version");
        }
        Checkpoint c;
        const auto d = o.at("hidden_dim").get<std::size_t>();
        const auto din = o.at("input_dim").get<std::size_t>();
        c.params.rho = o.at("rho").get<std::vector<double>>();
        if (c.params.rho.size() != o.at("personas").get<std::size_t>()) {
            throw ValidationError(source + ": persona count disagrees with rho");
        }
        c.params.tau_min = o.at("tau_min").get<double>();
        c.params.w_context = matrix_from(o.at("w_context"), d, din, "w_context");
        c.params.w_persona = matrix_from(o.at("w_persona"), d, din, "w_persona");
        c.params.w_exemplar = matrix_from(o.at("w_exemplar"), d, din, "w_exemplar");
        c.personas_hash = o.at("personas_hash").get<std::string>();
        c.pool_hash = o.at("pool_hash").get<std::string>();
        const auto& emb = o.at("embedder");
        c.embedder = {emb.at("name").get<std::string>(), emb.at("dim").get<std::size_t>(),
                      emb.at("config_hash").get<std::string>()};
        c.backend_fingerprint = o.at("backend_fingerprint").get<std::string>();
        c.exemplar_text = parse_exemplar_text(o.value("exemplar_text", std::string("response")));
        c.params.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(source + ": malformed checkpoint: " + e.what());
    }
}

void write_checkpoint(const std::string& path, const Checkpoint& c) {
    write_with_sidecar(path, serialize_checkpoint(c));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_with_sidecar(path), path); }

void verify_checkpoint(const Checkpoint& c, const CheckpointExpectations& expected, bool force) {
    std::vector<std::string> problems;
    if (c.personas_hash != expected.personas_hash) problems.push_back("persona list differs");
    if (c.pool_hash != expected.pool_hash) problems.push_back("exemplar pool differs");
    if (!(c.embedder == expected.embedder)) {
        problems.push_back("embedder " + c.embedder.str() + " != " + expected.embedder.str());
    }
    if (!expected.allow_backend_swap && c.backend_fingerprint != expected.backend_fingerprint) {
        problems.push_back("backend " + c.backend_fingerprint + " != " + expected.backend_fingerprint);
    }
    if (problems.empty()) return;
    std::string msg = "checkpoint mismatch:";
    for (const auto& p : problems) msg += " " + p + ";";
    if (!force) throw ValidationError(msg);
    spdlog::warn("{} (forced)", msg);
}

}  // namespace mop
