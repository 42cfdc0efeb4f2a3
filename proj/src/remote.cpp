#include "mop/remote.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <thread>

#include "mop/error.hpp"
#include "mop/hashing.hpp"

namespace mop {

using json = nlohmann::json;

RemoteFlavor parse_remote_flavor(const std::string& s) {
    if (s == "full-logit") return RemoteFlavor::full_logit;
    if (s == "topk-logprobs") return RemoteFlavor::topk_logprobs;
    throw ValidationError("unknown remote flavor '" + s + "' (expected full-logit or topk-logprobs)");
}

std::string remote_flavor_name(RemoteFlavor f) {
    return f == RemoteFlavor::full_logit ? "full-logit" : "topk-logprobs";
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kRestFloor = 1e-10;

double to_double(const json& v, const std::string& source, const char* field) {
    if (v.is_null()) return kNegInf;
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "-inf" || s == "-Infinity") return kNegInf;
        if (s == "inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
        char* end = nullptr;
        const double d = std::strtod(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0') throw ValidationError(source + ": field " + field + " is not a number");
        return d;
    }
    throw ValidationError(source + ": field " + field + " is not a number");
}

json parse_body(const std::string& body, const std::string& source) {
    try {
        return json::parse(body);
    } catch (const json::parse_error& e) {
        throw ValidationError(source + ": invalid JSON: " + e.what());
    }
}

}  // namespace

double wire_double(const std::string& json_value) {
    return to_double(parse_body(json_value, "wire value"), "wire value", "value");
}

ScoreResponse parse_score_response(const std::string& body, const std::string& source) {
    const json j = parse_body(body, source);
    try {
        ScoreResponse out;
        out.vocab_size = j.at("vocab_size").get<int>();
        out.model_fingerprint = j.value("model_fingerprint", std::string());
        if (out.vocab_size <= 0) throw ValidationError(source + ": vocab_size must be positive");
        for (const auto& t : j.at("tokens")) {
            TokenScoreRow row;
            row.target_token = t.at("target_id").get<int>();
            row.target_logit = to_double(t.at("target_logit"), source, "target_logit");
            TopKSupport topk;
            topk.ids = t.at("topk_ids").get<std::vector<int>>();
            for (const auto& z : t.at("topk_logits")) topk.logits.push_back(to_double(z, source, "topk_logits"));
            if (topk.ids.size() != topk.logits.size()) {
                throw ValidationError(source + ": topk_ids and topk_logits differ in length");
            }
            topk.rest_logsumexp = to_double(t.contains("rest_logsumexp") ? t.at("rest_logsumexp") : json(nullptr),
                                            source, "rest_logsumexp");
            topk.rest_count = static_cast<double>(out.vocab_size) - static_cast<double>(topk.ids.size());
            if (topk.rest_count < 0.0) throw ValidationError(source + ": more top-k entries than vocabulary");
            row.support = std::move(topk);
            if (!std::isfinite(row_logsumexp(row))) throw ValidationError(source + ": row logsumexp is not finite");
            out.sheet.rows.push_back(std::move(row));
        }
        return out;
    } catch (const json::exception& e) {
        throw ValidationError(source + ": malformed payload: " + e.what());
    }
}

ScoreSheet parse_logprobs_response(const std::string& body, std::size_t prompt_chars, int vocab_size,
                                   const std::string& source) {
    const json j = parse_body(body, source);
    try {
        const auto& lp = j.at("choices").at(0).at("logprobs");
        const auto& tokens = lp.at("tokens");
        const auto& token_lp = lp.at("token_logprobs");
        const auto& top = lp.at("top_logprobs");
        const auto& offsets = lp.at("text_offset");
        ScoreSheet sheet;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (offsets.at(i).get<std::size_t>() < prompt_chars) continue;
            // Top-k alternatives only carry strings; ids are positions in this row,
            // with the target getting the id of its matching alternative (or -1).
            TokenScoreRow row;
            const auto target = tokens.at(i).get<std::string>();
            row.target_logit = to_double(token_lp.at(i), source, "token_logprobs");
            row.target_token = -1;
            TopKSupport topk;
            double covered = 0.0;
            int id = 0;
            for (const auto& [tok, v] : top.at(i).items()) {
                const double z = to_double(v, source, "top_logprobs");
                if (tok == target) row.target_token = id;
                topk.ids.push_back(id++);
                topk.logits.push_back(z);
                covered += std::exp(z);
            }
            topk.rest_logsumexp = std::log(std::max(kRestFloor, 1.0 - covered));
            topk.rest_count = std::max(1.0, static_cast<double>(vocab_size) - static_cast<double>(topk.ids.size()));
            row.support = std::move(topk);
            sheet.rows.push_back(std::move(row));
        }
        return sheet;
    } catch (const json::exception& e) {
        throw ValidationError(source + ": malformed payload: " + e.what());
    }
}

Matrix parse_embed_response(const std::string& body, std::size_t expected_rows, const std::string& source) {
    const json j = parse_body(body, source);
    try {
        const auto& vectors = j.at("vectors");
        const auto dim = j.at("dim").get<std::size_t>();
        if (vectors.size() != expected_rows) {
            throw ValidationError(source + ": expected " + std::to_string(expected_rows) + " vectors, got " +
                                  std::to_string(vectors.size()));
        }
        Matrix m(expected_rows, dim);
        for (std::size_t i = 0; i < expected_rows; ++i) {
            if (vectors[i].size() != dim) throw ValidationError(source + ": vector " + std::to_string(i) + " has wrong dimension");
            for (std::size_t c = 0; c < dim; ++c) m(i, c) = to_double(vectors[i][c], source, "vectors");
        }
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(source + ": malformed payload: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Transport

HttpChannel::HttpChannel(RemoteConfig config) : config_(std::move(config)) {
    if (config_.url.empty()) throw ValidationError("remote url is empty");
    if (config_.retries < 0) throw ValidationError("retries must be >= 0");
    if (config_.token.empty()) {
        if (const char* t = std::getenv(kTokenEnv)) config_.token = t;
    }
}

template <class Call>
std::string HttpChannel::with_retries(const std::string& path, Call&& call) const {
    httplib::Client client(config_.url);
    client.set_connection_timeout(config_.timeout_s);
    client.set_read_timeout(config_.timeout_s);
    client.set_write_timeout(config_.timeout_s);
    httplib::Headers headers;
    if (!config_.token.empty()) headers.emplace("Authorization", "Bearer " + config_.token);

    const std::string endpoint = config_.url + path;
    int status = -1;
    std::string last_error = "no attempt";
    const int attempts = config_.retries + 1;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        auto res = call(client, headers);
        if (res) {
            status = res->status;
            if (status == 200) return res->body;
            last_error = "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200);
            const bool retriable = status == 429 || status >= 500;
            if (!retriable) throw TransportError(endpoint, attempt, status, last_error);
        } else {
            status = -1;
            last_error = httplib::to_string(res.error());
        }
        if (attempt < attempts) {
            spdlog::warn("{}: attempt {}/{} failed ({}); retrying", endpoint, attempt, attempts, last_error);
            std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms * (1 << (attempt - 1))));
        }
    }
    throw TransportError(endpoint, attempts, status, last_error);
}

std::string HttpChannel::post(const std::string& path, const std::string& body) const {
    return with_retries(path, [&](httplib::Client& c, const httplib::Headers& h) {
        return c.Post(path, h, body, "application/json");
    });
}

std::string HttpChannel::get(const std::string& path) const {
    return with_retries(path, [&](httplib::Client& c, const httplib::Headers& h) { return c.Get(path, h); });
}

// ---------------------------------------------------------------------------
// Language model

RemoteLanguageModel::RemoteLanguageModel(RemoteConfig config) : channel_(std::move(config)) {
    const auto& c = channel_.config();
    if (c.top_k < 0) throw ValidationError("top_k must be >= 0");
    if (c.flavor == RemoteFlavor::topk_logprobs && c.top_k == 0) {
        throw ValidationError("topk-logprobs flavor needs top_k >= 1");
    }
}

std::string RemoteLanguageModel::fingerprint() const {
    std::call_once(fp_once_, [&] {
        const auto& c = channel_.config();
        if (c.flavor == RemoteFlavor::topk_logprobs) {
            fingerprint_ = "openai-topk/" + c.model + "/" + std::to_string(c.top_k) + "@" + c.url;
            return;
        }
        const json h = parse_body(channel_.get("/v1/health"), c.url + "/v1/health");
        fingerprint_ = h.value("model_fingerprint", std::string());
        if (fingerprint_.empty()) throw ValidationError(c.url + "/v1/health: missing model_fingerprint");
        fingerprint_ += "/k" + std::to_string(c.top_k);
    });
    return fingerprint_;
}

ScoreSheet RemoteLanguageModel::score(const std::string& prompt, const std::string& continuation) const {
    if (continuation.empty()) throw ValidationError("continuation is empty");
    const auto& c = channel_.config();
    ScoreSheet sheet;
    if (c.flavor == RemoteFlavor::full_logit) {
        const json req = {{"prompt", prompt}, {"continuation", continuation}, {"top_k", c.top_k}};
        auto resp = parse_score_response(channel_.post("/v1/score", req.dump()), c.url + "/v1/score");
        const std::string expected = fingerprint();
        if (!resp.model_fingerprint.empty() && expected.rfind(resp.model_fingerprint, 0) != 0) {
            throw TransportError(c.url + "/v1/score", 1, 200,
                                 "server fingerprint changed to " + resp.model_fingerprint);
        }
        sheet = std::move(resp.sheet);
    } else {
        const json req = {{"model", c.model},  {"prompt", prompt + continuation}, {"max_tokens", 0},
                          {"echo", true},      {"logprobs", c.top_k},           {"temperature", 1.0}};
        sheet = parse_logprobs_response(channel_.post("/v1/completions", req.dump()), prompt.size(), c.vocab_size,
                                        c.url + "/v1/completions");
    }
    if (sheet.rows.empty()) throw ValidationError("continuation tokenizes to zero tokens");
    sheet.prompt_hash = fnv1a64(prompt);
    sheet.continuation_hash = fnv1a64(continuation);
    return sheet;
}

std::string RemoteLanguageModel::generate(const std::string& prompt, double temperature, int max_tokens,
                                          std::uint64_t seed) const {
    if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
    if (max_tokens <= 0) throw ValidationError("max_tokens must be positive");
    const auto& c = channel_.config();
    if (c.flavor == RemoteFlavor::full_logit) {
        const json req = {{"prompt", prompt}, {"temperature", temperature}, {"max_tokens", max_tokens}, {"seed", seed}};
        const json r = parse_body(channel_.post("/v1/generate", req.dump()), c.url + "/v1/generate");
        if (!r.contains("text") || !r["text"].is_string()) throw ValidationError(c.url + "/v1/generate: missing text");
        return r["text"].get<std::string>();
    }
    const json req = {{"model", c.model},          {"prompt", prompt}, {"max_tokens", max_tokens},
                      {"temperature", temperature}, {"seed", seed}};
    const json r = parse_body(channel_.post("/v1/completions", req.dump()), c.url + "/v1/completions");
    try {
        return r.at("choices").at(0).at("text").get<std::string>();
    } catch (const json::exception& e) {
        throw ValidationError(c.url + "/v1/completions: malformed payload: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Embedder

RemoteEmbedder::RemoteEmbedder(RemoteConfig config, std::size_t batch) : channel_(std::move(config)), batch_(batch) {
    if (batch_ == 0) throw ValidationError("embed batch size must be positive");
}

void RemoteEmbedder::fetch_health() const {
    std::call_once(health_once_, [&] {
        const auto& c = channel_.config();
        const json h = parse_body(channel_.get("/v1/health"), c.url + "/v1/health");
        fingerprint_.name = "remote:" + h.value("encoder_fingerprint", std::string("unknown"));
        fingerprint_.dim = h.value("dim", std::size_t{0});
        if (fingerprint_.dim == 0) throw ValidationError(c.url + "/v1/health: missing dim");
        fingerprint_.config_hash = hex64(fnv1a64(c.url));
    });
}

std::size_t RemoteEmbedder::dim() const {
    fetch_health();
    return fingerprint_.dim;
}

EmbedderFingerprint RemoteEmbedder::fingerprint() const {
    fetch_health();
    return fingerprint_;
}

std::vector<double> RemoteEmbedder::embed(const std::string& text) const {
    const std::string one[] = {text};
    const Matrix m = embed_batch(one);
    return {m.row(0).begin(), m.row(0).end()};
}

Matrix RemoteEmbedder::embed_batch(std::span<const std::string> texts) const {
    const std::size_t d = dim();
    Matrix out(texts.size(), d);
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (!texts[i].empty()) pending.push_back(i);  // the empty string stays the zero vector
    }
    const auto& c = channel_.config();
    for (std::size_t start = 0; start < pending.size(); start += batch_) {
        const std::size_t stop = std::min(pending.size(), start + batch_);
        json req = {{"texts", json::array()}};
        for (std::size_t p = start; p < stop; ++p) req["texts"].push_back(texts[pending[p]]);
        Matrix part;
        try {
            part = parse_embed_response(channel_.post("/v1/embed", req.dump()), stop - start, c.url + "/v1/embed");
        } catch (const TransportError& e) {
            throw TransportError(e.endpoint(), e.attempts(), e.last_status(),
                                 "embedding text " + std::to_string(pending[start]) + " failed");
        }
        if (part.cols() != d) throw ValidationError(c.url + "/v1/embed: dimension changed");
        for (std::size_t p = start; p < stop; ++p) {
            auto src = part.row(p - start);
            std::copy(src.begin(), src.end(), out.row(pending[p]).begin());
        }
    }
    return out;
}

}  // namespace mop
