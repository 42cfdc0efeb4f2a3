#include <httplib.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "mop/error.hpp"
#include "mop/remote.hpp"

using namespace mop;
using json = nlohmann::json;

namespace {

std::string wire(const std::string& name) {
    std::ifstream in(std::string(MOP_WIRE_DIR) + "/" + name);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double lse(std::initializer_list<double> v) {
    double m = -INFINITY;
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// In-process model-shim and completions server on an ephemeral port.
class MockServer {
public:
    std::atomic<int> fail_next{0};
    std::atomic<int> fail_status{503};
    std::atomic<int> requests{0};
    std::atomic<int> embed_calls{0};
    std::string fingerprint = "mock-lm-1";
    std::string last_auth;
    json last_body;

    MockServer() {
        auto guard = [this](const httplib::Request& req, httplib::Response& res) {
            ++requests;
            last_auth = req.get_header_value("Authorization");
            if (!req.body.empty()) last_body = json::parse(req.body);
            if (fail_next > 0) {
                --fail_next;
                res.status = fail_status;
                res.set_content("busy", "text/plain");
                return false;
            }
            return true;
        };
        server_.Get("/v1/health", [this, guard](const httplib::Request& req, httplib::Response& res) {
            if (!guard(req, res)) return;
            json h = json::parse(wire("health.json"));
            h["model_fingerprint"] = fingerprint;
            res.set_content(h.dump(), "application/json");
        });
        server_.Post("/v1/score", [guard](const httplib::Request& req, httplib::Response& res) {
            if (!guard(req, res)) return;
            res.set_content(wire("score_response.json"), "application/json");
        });
        server_.Post("/v1/generate", [guard](const httplib::Request& req, httplib::Response& res) {
            if (!guard(req, res)) return;
            const json b = json::parse(req.body);
            res.set_content(json{{"text", "seed " + std::to_string(b.at("seed").get<std::uint64_t>())}}.dump(),
                            "application/json");
        });
        server_.Post("/v1/embed", [this, guard](const httplib::Request& req, httplib::Response& res) {
            if (!guard(req, res)) return;
            ++embed_calls;
            const json b = json::parse(req.body);
            json vectors = json::array();
            for (const auto& t : b.at("texts")) {
                const double n = static_cast<double>(t.get<std::string>().size());
                const double norm = std::sqrt(n * n + 1.0);
                vectors.push_back({n / norm, 1.0 / norm, 0.0});
            }
            res.set_content(json{{"dim", 3}, {"vectors", vectors}}.dump(), "application/json");
        });
        server_.Post("/v1/completions", [guard](const httplib::Request& req, httplib::Response& res) {
            if (!guard(req, res)) return;
            const json b = json::parse(req.body);
            if (b.value("echo", false)) {
                res.set_content(wire("completions_logprobs.json"), "application/json");
            } else {
                res.set_content(json{{"choices", {{{"text", "completion"}}}}}.dump(), "application/json");
            }
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }

    RemoteConfig config(RemoteFlavor flavor = RemoteFlavor::full_logit) const {
        RemoteConfig c;
        c.url = "http://127.0.0.1:" + std::to_string(port_);
        c.flavor = flavor;
        c.model = "mock";
        c.backoff_ms = 1;
        c.timeout_s = 5;
        return c;
    }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace

TEST_CASE("wire doubles accept numbers, strings and null") {
    CHECK(wire_double("1.5") == 1.5);
    CHECK(wire_double("\"1e-3\"") == 1e-3);
    CHECK(std::isinf(wire_double("\"-inf\"")));
    CHECK(wire_double("\"-inf\"") < 0);
    CHECK(std::isinf(wire_double("null")));
    CHECK_THROWS_AS(wire_double("\"abc\""), ValidationError);
    CHECK_THROWS_AS(wire_double("[1]"), ValidationError);
}

TEST_CASE("score response fixture parses into top-k rows") {
    const auto r = parse_score_response(wire("score_response.json"));
    CHECK(r.vocab_size == 5);
    CHECK(r.model_fingerprint == "mock-lm-1");
    REQUIRE(r.sheet.rows.size() == 2);
    const auto& t0 = std::get<TopKSupport>(r.sheet.rows[0].support);
    CHECK(t0.ids == std::vector<int>{2, 0});
    CHECK(t0.rest_count == 3.0);
    CHECK(t0.rest_logsumexp == 0.2);
    const auto& t1 = std::get<TopKSupport>(r.sheet.rows[1].support);
    CHECK(std::isinf(t1.rest_logsumexp));
    CHECK(r.sheet.rows[1].target_logit == -0.5);
    CHECK(t1.logits[0] == 2.5);

    const double direct = (1.0 - lse({1.0, 0.5, 0.2})) + (-0.5 - lse({2.5, -0.5}));
    CHECK(tempered_loglik(r.sheet, 1.0) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("malformed score responses are rejected") {
    CHECK_THROWS_AS(parse_score_response("not json"), ValidationError);
    CHECK_THROWS_AS(parse_score_response(R"({"tokens": []})"), ValidationError);
    CHECK_THROWS_AS(parse_score_response(R"({"vocab_size": 0, "tokens": []})"), ValidationError);
    CHECK_THROWS_AS(parse_score_response(
                        R"({"vocab_size": 3, "tokens": [{"target_id": 0, "target_logit": 0, "topk_ids": [0, 1],
                            "topk_logits": [0], "rest_logsumexp": 0}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_score_response(
                        R"({"vocab_size": 1, "tokens": [{"target_id": 0, "target_logit": 0, "topk_ids": [0, 1],
                            "topk_logits": [0, 1], "rest_logsumexp": null}]})"),
                    ValidationError);
}

TEST_CASE("completions logprobs keep only continuation tokens") {
    const auto sheet = parse_logprobs_response(wire("completions_logprobs.json"), 2, 100);
    REQUIRE(sheet.rows.size() == 2);
    const auto& t0 = std::get<TopKSupport>(sheet.rows[0].support);
    CHECK(sheet.rows[0].target_token == 0);
    CHECK(sheet.rows[0].target_logit == -0.5);
    CHECK(t0.rest_logsumexp == doctest::Approx(std::log(1.0 - std::exp(-0.5) - std::exp(-1.5))).epsilon(1e-12));
    CHECK(t0.rest_count == 98.0);
    // At tau = 1 the tempered value reduces to the reported log-probabilities.
    CHECK(std::abs(tempered_loglik(sheet, 1.0) - (-0.5 - 1.2)) <= 1e-4);
    CHECK(parse_logprobs_response(wire("completions_logprobs.json"), 9, 100).rows.empty());
}

TEST_CASE("embed response fixture parses") {
    const Matrix m = parse_embed_response(wire("embed_response.json"), 2);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(0, 1) == 0.8);
    CHECK(m(1, 0) == 1.0);
    CHECK_THROWS_AS(parse_embed_response(wire("embed_response.json"), 3), ValidationError);
    CHECK_THROWS_AS(parse_embed_response(R"({"dim": 2, "vectors": [[1, 2, 3]]})", 1), ValidationError);
}

TEST_CASE("flavor names round-trip") {
    for (auto f : {RemoteFlavor::full_logit, RemoteFlavor::topk_logprobs}) {
        CHECK(parse_remote_flavor(remote_flavor_name(f)) == f);
    }
    CHECK_THROWS_AS(parse_remote_flavor("grpc"), ValidationError);
}

TEST_CASE("full-logit backend scores, generates and sends the bearer token") {
    MockServer server;
    auto cfg = server.config();
    cfg.token = "secret";
    cfg.top_k = 8;
    RemoteLanguageModel lm(cfg);
    CHECK(lm.fingerprint() == "mock-lm-1/k8");
    CHECK(server.last_auth == "Bearer secret");

    const auto sheet = lm.score("prompt", "cont");
    CHECK(server.last_body.at("top_k") == 8);
    CHECK(server.last_body.at("continuation") == "cont");
    CHECK(sheet.rows.size() == 2);
    const auto direct = parse_score_response(wire("score_response.json")).sheet;
    CHECK(std::abs(tempered_loglik(sheet, 1.0) - tempered_loglik(direct, 1.0)) <= 1e-4);
    CHECK(std::abs(tempered_loglik(sheet, 0.7) - tempered_loglik(direct, 0.7)) <= 1e-12);

    CHECK(lm.generate("p", 0.9, 10, 42) == "seed 42");
    CHECK_THROWS_AS(lm.generate("p", 0.0, 10, 1), ValidationError);
    CHECK_THROWS_AS(lm.score("p", ""), ValidationError);
}

TEST_CASE("a changed server fingerprint is a transport error") {
    MockServer server;
    server.fingerprint = "other-model";
    RemoteLanguageModel lm(server.config());
    CHECK_THROWS_AS(lm.score("p", "c"), TransportError);
}

TEST_CASE("topk-logprobs backend uses echo completions") {
    MockServer server;
    auto cfg = server.config(RemoteFlavor::topk_logprobs);
    cfg.top_k = 5;
    cfg.vocab_size = 100;
    RemoteLanguageModel lm(cfg);
    const auto sheet = lm.score("Hi", " there!");
    CHECK(server.last_body.at("echo") == true);
    CHECK(server.last_body.at("logprobs") == 5);
    CHECK(server.last_body.at("prompt") == "Hi there!");
    CHECK(std::abs(tempered_loglik(sheet, 1.0) - (-1.7)) <= 1e-4);
    CHECK(lm.generate("x", 1.0, 5, 3) == "completion");
    CHECK(lm.fingerprint().rfind("openai-topk/mock/5@", 0) == 0);

    cfg.top_k = 0;
    CHECK_THROWS_AS(RemoteLanguageModel{cfg}, ValidationError);
}

TEST_CASE("retriable failures are retried and then reported") {
    MockServer server;
    auto cfg = server.config();
    cfg.retries = 3;
    HttpChannel channel(cfg);

    server.fail_next = 2;
    server.fail_status = 503;
    CHECK_NOTHROW(channel.post("/v1/score", "{}"));
    CHECK(server.requests == 3);

    server.fail_next = 2;
    server.fail_status = 429;
    CHECK_NOTHROW(channel.get("/v1/health"));

    server.fail_next = 10;
    server.fail_status = 500;
    try {
        channel.post("/v1/score", "{}");
        FAIL("expected a transport error");
    } catch (const TransportError& e) {
        CHECK(e.attempts() == 4);
        CHECK(e.last_status() == 500);
        CHECK(e.endpoint().find("/v1/score") != std::string::npos);
    }

    server.fail_next = 1;
    server.fail_status = 400;
    const int before = server.requests;
    try {
        channel.post("/v1/score", "{}");
        FAIL("expected a transport error");
    } catch (const TransportError& e) {
        CHECK(e.attempts() == 1);
        CHECK(e.last_status() == 400);
    }
    CHECK(server.requests == before + 1);
}

TEST_CASE("unreachable servers fail with no status") {
    RemoteConfig cfg;
    cfg.url = "http://127.0.0.1:1";
    cfg.retries = 1;
    cfg.backoff_ms = 1;
    cfg.timeout_s = 1;
    HttpChannel channel(cfg);
    try {
        channel.get("/v1/health");
        FAIL("expected a transport error");
    } catch (const TransportError& e) {
        CHECK(e.attempts() == 2);
        CHECK(e.last_status() == -1);
    }
    cfg.url.clear();
    CHECK_THROWS_AS(HttpChannel{cfg}, ValidationError);
}

TEST_CASE("remote embedder batches, keeps empty texts at zero and reads the fingerprint") {
    MockServer server;
    RemoteEmbedder emb(server.config(), 2);
    CHECK(emb.dim() == 3);
    CHECK(emb.fingerprint().name == "remote:mock-enc");

    const std::vector<std::string> texts{"a", "", "abc", "ab", "abcd"};
    const Matrix m = emb.embed_batch(texts);
    CHECK(server.embed_calls == 2);
    REQUIRE(m.rows() == 5);
    for (std::size_t c = 0; c < 3; ++c) CHECK(m(1, c) == 0.0);
    for (std::size_t i : {0, 2, 3, 4}) {
        double n = 0.0;
        for (std::size_t c = 0; c < 3; ++c) n += m(i, c) * m(i, c);
        CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(m(i, 0) / m(i, 1) == doctest::Approx(static_cast<double>(texts[i].size())));
    }
    const auto one = emb.embed("abc");
    CHECK(one[0] == m(2, 0));
}
