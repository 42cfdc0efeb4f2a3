#include "mop/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mop/corpus.hpp"
#include "mop/error.hpp"
#include "mop/gating.hpp"
#include "mop/hashing.hpp"
#include "mop/metrics.hpp"
#include "mop/persona_synth.hpp"
#include "mop/prompts.hpp"
#include "mop/score_cache.hpp"
#include "mop/simulator.hpp"
#include "mop/trainer.hpp"

namespace mop::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

enum class Kind { str, path, u64, size, integer, real, boolean, str_list };

struct Field {
    const char* key;
    Kind kind;
    void* ptr;
};

// Every configurable value, keyed by its dotted JSON path. The order here is the
// order of the canonical JSON.
std::vector<Field> fields(RunConfig& c) {
    return {
        {"task", Kind::str, &c.task},
        {"template_format", Kind::str, &c.template_format},
        {"data.train", Kind::path, &c.train_path},
        {"data.golden", Kind::path, &c.golden_path},
        {"data.heldout_fraction", Kind::real, &c.heldout_fraction},
        {"data.split_seed", Kind::u64, &c.split_seed},
        {"backend.kind", Kind::str, &c.backend.kind},
        {"backend.corpus", Kind::path, &c.backend.corpus},
        {"backend.order", Kind::integer, &c.backend.toy.order},
        {"backend.alpha", Kind::real, &c.backend.toy.alpha},
        {"backend.cache_weight", Kind::real, &c.backend.toy.cache_weight},
        {"backend.cache_prior", Kind::real, &c.backend.toy.cache_prior},
        {"backend.backoff", Kind::boolean, &c.backend.toy.backoff},
        {"backend.url", Kind::str, &c.backend.remote.url},
        {"backend.flavor", Kind::str, &c.backend_flavor},
        {"backend.top_k", Kind::integer, &c.backend.remote.top_k},
        {"backend.model", Kind::str, &c.backend.remote.model},
        {"backend.vocab_size", Kind::integer, &c.backend.remote.vocab_size},
        {"backend.retries", Kind::integer, &c.backend.remote.retries},
        {"backend.backoff_ms", Kind::integer, &c.backend.remote.backoff_ms},
        {"backend.timeout_s", Kind::integer, &c.backend.remote.timeout_s},
        {"embedder.kind", Kind::str, &c.embedder.kind},
        {"embedder.dim", Kind::size, &c.embedder.dim},
        {"embedder.ngram", Kind::size, &c.embedder.ngram},
        {"embedder.url", Kind::str, &c.embedder.remote.url},
        {"personas.K", Kind::size, &c.personas},
        {"personas.representatives", Kind::size, &c.representatives},
        {"personas.seed", Kind::u64, &c.persona_seed},
        {"personas.max_tokens", Kind::integer, &c.persona_max_tokens},
        {"personas.label", Kind::boolean, &c.label_personas},
        {"gating.N", Kind::size, &c.exemplars},
        {"gating.M", Kind::size, &c.top_m},
        {"gating.d", Kind::size, &c.hidden_dim},
        {"gating.tau_init", Kind::real, &c.tau_init},
        {"gating.tau_min", Kind::real, &c.tau_min},
        {"gating.exemplar_text", Kind::str, &c.exemplar_text},
        {"gating.pool_seed", Kind::u64, &c.pool_seed},
        {"gating.init_seed", Kind::u64, &c.init_seed},
        {"gating.init", Kind::str, &c.init},
        {"gating.mask", Kind::str, &c.mask},
        {"gating.mask_probability", Kind::real, &c.mask_probability},
        {"train.batch_size", Kind::size, &c.batch_size},
        {"train.learning_rate", Kind::real, &c.learning_rate},
        {"train.max_epochs", Kind::integer, &c.max_epochs},
        {"train.patience", Kind::integer, &c.patience},
        {"train.seed", Kind::u64, &c.train_seed},
        {"generate.count", Kind::size, &c.count},
        {"generate.seed", Kind::u64, &c.generate_seed},
        {"generate.max_tokens", Kind::integer, &c.max_tokens},
        {"generate.contexts", Kind::str, &c.context_source},
        {"generate.context_list", Kind::str_list, &c.context_list},
        {"generate.baseline_temperature", Kind::real, &c.baseline_temperature},
        {"generate.mixing_temperature", Kind::real, &c.mixing_temperature},
        {"metrics.mauve_clusters", Kind::size, &c.mauve_clusters},
        {"metrics.mauve_scaling", Kind::real, &c.mauve_scaling},
        {"metrics.mauve_grid", Kind::size, &c.mauve_grid},
        {"metrics.kl_bins", Kind::size, &c.kl_bins},
        {"metrics.kl_epsilon", Kind::real, &c.kl_epsilon},
        {"metrics.seed", Kind::u64, &c.metric_seed},
        {"output_dir", Kind::path, &c.output_dir},
    };
}

std::string resolve(const std::string& p, const std::string& base) {
    if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base) / p).lexically_normal().string();
}

void assign(const Field& f, const ojson& v, const std::string& base, const std::string& where) {
    auto bad = [&](const char* want) {
        throw ValidationError(where + ": " + f.key + " must be " + want + ", got " + v.dump());
    };
    switch (f.kind) {
        case Kind::str:
        case Kind::path:
            if (!v.is_string()) bad("a string");
            *static_cast<std::string*>(f.ptr) = f.kind == Kind::path ? resolve(v.get<std::string>(), base)
                                                                      : v.get<std::string>();
            break;
        case Kind::u64:
        case Kind::size:
            if (!v.is_number_unsigned()) bad("a non-negative integer");
            if (f.kind == Kind::u64)
                *static_cast<std::uint64_t*>(f.ptr) = v.get<std::uint64_t>();
            else
                *static_cast<std::size_t*>(f.ptr) = v.get<std::size_t>();
            break;
        case Kind::integer:
            if (!v.is_number_integer()) bad("an integer");
            *static_cast<int*>(f.ptr) = v.get<int>();
            break;
        case Kind::real:
            if (!v.is_number()) bad("a number");
            *static_cast<double*>(f.ptr) = v.get<double>();
            break;
        case Kind::boolean:
            if (!v.is_boolean()) bad("a boolean");
            *static_cast<bool*>(f.ptr) = v.get<bool>();
            break;
        case Kind::str_list: {
            if (!v.is_array()) bad("an array of strings");
            std::vector<std::string> out;
            for (const auto& e : v) {
                if (!e.is_string()) bad("an array of strings");
                out.push_back(e.get<std::string>());
            }
            *static_cast<std::vector<std::string>*>(f.ptr) = std::move(out);
            break;
        }
    }
}

ojson value_of(const Field& f) {
    switch (f.kind) {
        case Kind::str:
        case Kind::path: return *static_cast<const std::string*>(f.ptr);
        case Kind::u64: return *static_cast<const std::uint64_t*>(f.ptr);
        case Kind::size: return *static_cast<const std::size_t*>(f.ptr);
        case Kind::integer: return *static_cast<const int*>(f.ptr);
        case Kind::real: return *static_cast<const double*>(f.ptr);
        case Kind::boolean: return *static_cast<const bool*>(f.ptr);
        case Kind::str_list: return *static_cast<const std::vector<std::string>*>(f.ptr);
    }
    return nullptr;
}

const Field* find_field(const std::vector<Field>& fs_, const std::string& key) {
    for (const auto& f : fs_)
        if (key == f.key) return &f;
    return nullptr;
}

void apply_object(RunConfig& c, const ojson& obj, const std::string& prefix, const std::string& base,
                  const std::string& where) {
    const auto table = fields(c);
    for (const auto& [k, v] : obj.items()) {
        const std::string key = prefix.empty() ? k : prefix + "." + k;
        if (const Field* f = find_field(table, key)) {
            assign(*f, v, base, where);
        } else if (v.is_object() && prefix.empty()) {
            bool known_section = false;
            for (const auto& f2 : table)
                if (std::string(f2.key).rfind(key + ".", 0) == 0) known_section = true;
            if (!known_section) throw ValidationError(where + ": unknown key '" + key + "'");
            apply_object(c, v, key, base, where);
        } else {
            throw ValidationError(where + ": unknown key '" + key + "'");
        }
    }
}

ojson parse_json(const std::string& text, const std::string& where) {
    try {
        return ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(where + ": invalid JSON: " + e.what());
    }
}

}  // namespace

void RunConfig::apply(const std::string& json_text, const std::string& base_dir, const std::string& source) {
    ojson doc = parse_json(json_text, source);
    // A run manifest doubles as a config: its effective config is replayed.
    if (doc.is_object() && doc.contains("format") && doc["format"] == "mop-manifest") doc = doc.at("config");
    if (!doc.is_object()) throw ValidationError(source + ": config must be a JSON object");
    apply_object(*this, doc, "", base_dir, source);
    backend.remote.flavor = parse_remote_flavor(backend_flavor);
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    const auto table = fields(*this);
    const Field* f = find_field(table, key);
    if (!f) throw ValidationError("--set: unknown key '" + key + "'");
    ojson v;
    try {
        v = ojson::parse(raw);
    } catch (const nlohmann::json::exception&) {
        v = raw;  // bare strings need no quoting
    }
    if ((f->kind == Kind::str || f->kind == Kind::path) && !v.is_string()) v = raw;
    assign(*f, v, "", "--set");
    backend.remote.flavor = parse_remote_flavor(backend_flavor);
}

void RunConfig::validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
    const auto tasks = known_tasks();
    if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) fail("unknown task '" + task + "'");
    parse_template_format(template_format);
    if (train_path.empty()) fail("data.train is required");
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) fail("data.heldout_fraction must be in (0, 1)");
    if (backend.kind == "toy") {
        if (backend.corpus.empty()) fail("backend.corpus is required for the toy backend");
        if (backend.toy.order < 1) fail("backend.order must be >= 1");
        if (!(backend.toy.alpha > 0.0)) fail("backend.alpha must be > 0");
        if (backend.toy.cache_weight < 0.0 || !(backend.toy.cache_prior > 0.0)) fail("backend cache settings out of range");
    } else if (backend.kind == "remote") {
        if (backend.remote.url.empty()) fail("backend.url is required for the remote backend");
        parse_remote_flavor(backend_flavor);
    } else {
        fail("backend.kind must be 'toy' or 'remote'");
    }
    if (embedder.kind == "hashing") {
        if (embedder.dim == 0 || embedder.ngram == 0) fail("embedder.dim and embedder.ngram must be positive");
    } else if (embedder.kind == "remote") {
        if (embedder.remote.url.empty()) fail("embedder.url is required for the remote embedder");
    } else {
        fail("embedder.kind must be 'hashing' or 'remote'");
    }
    if (personas == 0) fail("personas.K must be positive");
    if (representatives == 0) fail("personas.representatives must be positive");
    if (persona_max_tokens <= 0) fail("personas.max_tokens must be positive");
    if (exemplars == 0 || top_m == 0 || hidden_dim == 0) fail("gating.N, gating.M and gating.d must be positive");
    if (!(tau_min > 0.0) || !(tau_init > tau_min)) fail("gating.tau_init must exceed gating.tau_min > 0");
    parse_exemplar_text(exemplar_text);
    parse_gate_init(init);
    MaskRule::parse(mask, mask_probability);
    if (mask_probability < 0.0 || mask_probability > 1.0) fail("gating.mask_probability must be in [0, 1]");
    TrainConfig{top_m, batch_size, learning_rate, 0.9, 0.999, 1e-8, max_epochs, patience, train_seed, {}}.validate();
    if (count == 0) fail("generate.count must be positive");
    if (max_tokens <= 0) fail("generate.max_tokens must be positive");
    static const std::vector<std::string> sources = {"auto", "empty", "train", "golden", "list"};
    if (std::find(sources.begin(), sources.end(), context_source) == sources.end())
        fail("generate.contexts must be one of auto, empty, train, golden, list");
    if (context_source == "list" && context_list.empty()) fail("generate.context_list is empty");
    if (!(baseline_temperature > 0.0) || !(mixing_temperature > 0.0)) fail("temperatures must be positive");
    if (mauve_clusters < 2 || mauve_grid == 0 || !(mauve_scaling > 0.0)) fail("metrics.mauve_* out of range");
    if (kl_bins == 0 || !(kl_epsilon > 0.0)) fail("metrics.kl_* out of range");
    if (output_dir.empty()) fail("output_dir is required");
}

std::string RunConfig::to_json() const {
    ojson out = ojson::object();
    for (const auto& f : fields(const_cast<RunConfig&>(*this))) {
        const std::string key = f.key;
        const auto dot = key.find('.');
        if (dot == std::string::npos)
            out[key] = value_of(f);
        else
            out[key.substr(0, dot)][key.substr(dot + 1)] = value_of(f);
    }
    return out.dump(2);
}

RunConfig load_config(const std::string& path) {
    if (!fs::exists(path)) throw ValidationError("config not found: " + path);
    RunConfig c;
    c.apply(read_file(path), fs::path(path).parent_path().string(), path);
    return c;
}

std::unique_ptr<LanguageModel> make_backend(const BackendSpec& spec) {
    if (spec.kind == "remote") return std::make_unique<RemoteLanguageModel>(spec.remote);
    if (!fs::exists(spec.corpus)) throw ValidationError("backend corpus not found: " + spec.corpus);
    std::vector<std::string> docs;
    std::istringstream in(read_file(spec.corpus));
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) docs.push_back(line);
    if (docs.empty()) throw ValidationError("backend corpus is empty: " + spec.corpus);
    return std::make_unique<ToyLanguageModel>(spec.toy, docs);
}

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
    std::shared_ptr<const Embedder> inner;
    if (spec.kind == "remote")
        inner = std::make_shared<RemoteEmbedder>(spec.remote);
    else
        inner = std::make_shared<HashingEmbedder>(spec.dim, spec.ngram);
    return std::make_unique<MemoEmbedder>(std::move(inner));
}

namespace {

// ---- pipeline plumbing ----

struct Paths {
    fs::path dir;
    fs::path personas() const { return dir / "personas.json"; }
    fs::path cluster_report() const { return dir / "cluster_report.json"; }
    fs::path pool() const { return dir / "pool.jsonl"; }
    fs::path checkpoints() const { return dir / "checkpoints"; }
    fs::path best() const { return dir / "checkpoint_best.json"; }
    fs::path final_checkpoint() const { return dir / "checkpoint_final.json"; }
    fs::path train_report() const { return dir / "train_report.json"; }
    fs::path generations() const { return dir / "generations.jsonl"; }
    fs::path baseline() const { return dir / "baseline_generations.jsonl"; }
    fs::path eval_report() const { return dir / "eval_report.json"; }
    fs::path manifest(const std::string& cmd) const { return dir / (cmd + "_manifest.json"); }
};

class Manifest {
public:
    Manifest(std::string command, const RunConfig& config) : command_(std::move(command)) {
        doc_["format"] = "mop-manifest";
        doc_["format_version"] = kFormatVersion;
        doc_["command"] = command_;
        doc_["config"] = ojson::parse(config.to_json());
        doc_["inputs"] = ojson::object();
        doc_["outputs"] = ojson::object();
    }
    void input(const fs::path& p) { doc_["inputs"][p.string()] = sha256_hex(read_file(p.string())); }
    void output(const fs::path& p) { doc_["outputs"][p.filename().string()] = sha256_hex(read_file(p.string())); }
    ojson& operator[](const char* key) { return doc_[key]; }
    void write(const Paths& paths) const {
        write_file(paths.manifest(command_).string(), doc_.dump(2) + "\n");
    }

private:
    std::string command_;
    ojson doc_;
};

/// What every command needs, built lazily from the config.
struct Session {
    RunConfig config;
    Paths paths;
    TaskTemplates templates;
    std::unique_ptr<LanguageModel> backend;
    std::unique_ptr<Embedder> embedder;

    explicit Session(RunConfig c) : config(std::move(c)) {
        config.validate();
        paths.dir = config.output_dir;
        fs::create_directories(paths.dir);
        templates = task_templates(config.task, parse_template_format(config.template_format));
        backend = make_backend(config.backend);
        embedder = make_embedder(config.embedder);
        spdlog::info("backend {} | embedder {}", backend->fingerprint(), embedder->fingerprint().str());
    }

    Dataset train_data() const {
        if (!fs::exists(config.train_path)) throw ValidationError("train data not found: " + config.train_path);
        return load_dataset(config.train_path);
    }
    std::vector<Persona> personas(const std::string& override_path) const {
        const fs::path p = override_path.empty() ? paths.personas() : fs::path(override_path);
        if (!fs::exists(p)) throw ValidationError("personas not found: " + p.string());
        return load_personas(p.string());
    }
};

std::string checkpoint_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03d.json", epoch);
    return buf;
}

int cmd_synth_personas(Session& s) {
    const Dataset data = s.train_data();
    PersonaSynthConfig pc;
    pc.personas = s.config.personas;
    pc.representatives = s.config.representatives;
    pc.seed = s.config.persona_seed;
    pc.max_tokens = s.config.persona_max_tokens;
    if (pc.personas > data.size())
        throw ValidationError("personas.K (" + std::to_string(pc.personas) + ") exceeds the record count (" +
                              std::to_string(data.size()) + ")");
    PersonaSynthResult result = synthesize_personas(data, *s.embedder, *s.backend, s.templates, pc);
    if (s.config.label_personas) {
        if (!s.templates.classification)
            throw ValidationError("personas.label: task '" + s.config.task + "' has no persona classifier");
        for (auto& p : result.personas)
            p.label = label_persona(p, s.templates, *s.backend, derive_seed(pc.seed, 0x1abe1 + p.id));
    }
    write_personas(s.paths.personas().string(), result.personas);
    write_file(s.paths.cluster_report().string(), serialize_cluster_report(result, pc));
    spdlog::info("synthesized {} personas ({} fallbacks)", result.personas.size(), result.fallbacks);

    Manifest m("synth-personas", s.config);
    m.input(s.config.train_path);
    m.output(s.paths.personas());
    m.output(s.paths.cluster_report());
    m["backend_fingerprint"] = s.backend->fingerprint();
    m["embedder"] = s.embedder->fingerprint().str();
    m["counts"] = {{"records", data.size()}, {"personas", result.personas.size()}, {"fallbacks", result.fallbacks}};
    m.write(s.paths);
    return 0;
}

int cmd_train(Session& s, const std::string& personas_path) {
    const std::vector<Persona> personas = s.personas(personas_path);
    const Dataset data = s.train_data();
    const auto [train_part, heldout_part] = split_dataset(data, s.config.heldout_fraction, s.config.split_seed);
    const ExemplarPool pool = sample_exemplar_pool(train_part, s.config.exemplars, s.config.pool_seed);
    write_pool(s.paths.pool().string(), pool);

    const ExemplarText mode = parse_exemplar_text(s.config.exemplar_text);
    const GateState state = GateState::build(*s.embedder, personas, pool, mode);
    ScoreCache cache;
    const Mixture mixture(personas, pool, state, *s.embedder, *s.backend, cache, s.templates.generation);

    TrainConfig tc;
    tc.top_m = s.config.top_m;
    tc.batch_size = s.config.batch_size;
    tc.learning_rate = s.config.learning_rate;
    tc.max_epochs = s.config.max_epochs;
    tc.patience = s.config.patience;
    tc.seed = s.config.train_seed;
    tc.mask = MaskRule::parse(s.config.mask, s.config.mask_probability, s.config.train_seed);

    Checkpoint base;
    base.personas_hash = personas_hash(personas);
    base.pool_hash = pool_hash(pool);
    base.embedder = s.embedder->fingerprint();
    base.backend_fingerprint = s.backend->fingerprint();
    base.exemplar_text = mode;

    fs::create_directories(s.paths.checkpoints());
    std::vector<fs::path> written;
    const auto on_improvement = [&](int epoch, const GatingParams& p) {
        Checkpoint c = base;
        c.params = p;
        const fs::path path = s.paths.checkpoints() / checkpoint_name(epoch);
        write_checkpoint(path.string(), c);
        written.push_back(path);
    };

    const GatingParams init = GatingParams::initialize(personas.size(), s.embedder->dim(), s.config.hidden_dim,
                                                       s.config.init_seed, s.config.tau_init, s.config.tau_min,
                                                       parse_gate_init(s.config.init));
    const std::vector<Observation> tr = train_part.observations();
    const std::vector<Observation> ho = heldout_part.observations();
    const TrainResult result = train(mixture, tr, ho, init, tc, on_improvement);

    Checkpoint best = base;
    best.params = result.best;
    write_checkpoint(s.paths.best().string(), best);
    Checkpoint last = base;
    last.params = result.last;
    write_checkpoint(s.paths.final_checkpoint().string(), last);
    write_file(s.paths.train_report().string(), serialize_train_report(result.log, tc));

    const auto& e0 = result.log.epochs.front();
    const auto& eb = result.log.epochs.at(static_cast<std::size_t>(result.log.best_epoch));
    spdlog::info("heldout loglik {:.4f} -> {:.4f} (best epoch {})", e0.heldout_loglik, eb.heldout_loglik,
                 result.log.best_epoch);

    Manifest m("train", s.config);
    m.input(s.config.train_path);
    m.input(personas_path.empty() ? s.paths.personas() : fs::path(personas_path));
    m.output(s.paths.pool());
    m.output(s.paths.best());
    m.output(s.paths.final_checkpoint());
    m.output(s.paths.train_report());
    for (const auto& p : written) m["checkpoints"][p.filename().string()] = sha256_hex(read_file(p.string()));
    m["backend_fingerprint"] = s.backend->fingerprint();
    m["embedder"] = s.embedder->fingerprint().str();
    m["counts"] = {{"train", tr.size()}, {"heldout", ho.size()}, {"exemplars", pool.size()},
                   {"personas", personas.size()}, {"epochs", result.log.epochs.size() - 1}};
    m.write(s.paths);
    return 0;
}

ContextSource context_source(const Session& s, const Dataset& train_data) {
    const RunConfig& c = s.config;
    std::string kind = c.context_source;
    if (kind == "auto") {
        if (!s.templates.requires_context())
            kind = "empty";
        else
            kind = c.golden_path.empty() ? "train" : "golden";
    }
    if (kind == "empty") return ContextSource::empty_context();
    if (kind == "list") return ContextSource::cycle_list(c.context_list);
    if (kind == "golden") {
        if (c.golden_path.empty()) throw ValidationError("generate.contexts=golden needs data.golden");
        return ContextSource::sample_from(load_dataset(c.golden_path).contexts(), derive_seed(c.generate_seed, 0xc0));
    }
    return ContextSource::sample_from(train_data.contexts(), derive_seed(c.generate_seed, 0xc0));
}

struct GenerateArgs {
    std::string personas;
    std::string checkpoint;
    std::string output;
    std::optional<std::string> label;
    std::size_t mix_l = 0;
    std::string baseline;  // "" | "zero-shot"
    bool force = false;
};

int cmd_generate(Session& s, const GenerateArgs& a) {
    const Dataset data = s.train_data();
    const ContextSource contexts = context_source(s, data);
    SimulationOptions opts;
    opts.max_tokens = s.config.max_tokens;
    opts.label = a.label;
    opts.mix_l = a.mix_l;
    opts.mixing_temperature = s.config.mixing_temperature;

    Manifest m(a.baseline.empty() ? "generate" : "generate_baseline", s.config);
    m["backend_fingerprint"] = s.backend->fingerprint();
    m["contexts"] = contexts.name();
    m["seeds"] = {{"generate", s.config.generate_seed}};
    if (a.label) m["label"] = *a.label;

    std::vector<GenerationRecord> out;
    fs::path out_path;
    if (a.baseline == "zero-shot") {
        out = simulate_zero_shot(*s.backend, s.templates, contexts, s.config.count, s.config.generate_seed,
                                 s.config.baseline_temperature, opts);
        out_path = a.output.empty() ? s.paths.baseline() : fs::path(a.output);
        m["baseline"] = "zero-shot";
    } else if (!a.baseline.empty()) {
        throw ValidationError("--baseline must be 'zero-shot'");
    } else {
        const std::vector<Persona> personas = s.personas(a.personas);
        if (!fs::exists(s.paths.pool())) throw ValidationError("exemplar pool not found: " + s.paths.pool().string());
        const ExemplarPool pool = load_pool(s.paths.pool().string());
        const fs::path ckpt_path = a.checkpoint.empty() ? s.paths.best() : fs::path(a.checkpoint);
        if (!fs::exists(ckpt_path)) throw ValidationError("checkpoint not found: " + ckpt_path.string());
        const Checkpoint ckpt = load_checkpoint(ckpt_path.string());
        CheckpointExpectations expect{personas_hash(personas), pool_hash(pool), s.embedder->fingerprint(),
                                      s.backend->fingerprint(), /*allow_backend_swap=*/true};
        verify_checkpoint(ckpt, expect, a.force);
        const GateState state = GateState::build(*s.embedder, personas, pool, ckpt.exemplar_text);
        const Simulator sim(personas, pool, state, *s.embedder, *s.backend, ckpt.params, s.templates);
        out = sim.simulate(contexts, s.config.count, s.config.generate_seed, opts);
        out_path = a.output.empty() ? s.paths.generations() : fs::path(a.output);
        m.input(ckpt_path);
        m["checkpoint_sha256"] = sha256_hex(read_file(ckpt_path.string()));
        if (a.mix_l > 0) m["mix_L"] = a.mix_l;
    }
    write_file(out_path.string(), serialize_generations(out));
    spdlog::info("wrote {} generations to {}", out.size(), out_path.string());
    m.output(out_path);
    m["counts"] = {{"generated", out.size()}};
    m.write(s.paths);
    return 0;
}

/// Texts of a generations file ("text") or a record file ("response").
std::vector<std::string> load_texts(const std::string& path) {
    if (!fs::exists(path)) throw ValidationError("file not found: " + path);
    std::vector<std::string> texts;
    std::istringstream in(read_file(path));
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path, line_no, e.what());
        }
        if (j.contains("text") && j["text"].is_string())
            texts.push_back(j["text"].get<std::string>());
        else if (j.contains("response") && j["response"].is_string())
            texts.push_back(j["response"].get<std::string>());
        else
            throw ParseError(path, line_no, "expected a \"text\" or \"response\" field");
    }
    if (texts.empty()) throw ValidationError(path + ": no texts");
    return texts;
}

int cmd_evaluate(Session& s, std::string generated, std::string golden, std::string report) {
    if (generated.empty()) generated = s.paths.generations().string();
    if (golden.empty()) golden = s.config.golden_path;
    if (golden.empty()) throw ValidationError("no golden set: pass --golden or set data.golden");
    if (report.empty()) report = s.paths.eval_report().string();

    const std::vector<std::string> gen = load_texts(generated);
    const std::vector<std::string> gold = load_texts(golden);
    MauveOptions mo{s.config.mauve_clusters, s.config.mauve_scaling, s.config.mauve_grid, s.config.metric_seed};
    KlCosineOptions ko;
    ko.bins = s.config.kl_bins;
    ko.epsilon = s.config.kl_epsilon;
    ko.seed = s.config.metric_seed;
    const Evaluation ev = evaluate_corpora(gen, gold, *s.embedder, mo, ko);

    const fs::path rp(report);
    const fs::path stem = rp.parent_path() / rp.stem();
    const fs::path hist = stem.string() + "_kl_histogram.csv";
    const fs::path frontier = stem.string() + "_mauve_frontier.csv";
    write_file(rp.string(), serialize_report(ev.report));
    write_file(hist.string(), histogram_csv(ev.kl));
    write_file(frontier.string(), frontier_csv(ev.mauve));
    spdlog::info("fid {:.6f} | mauve {:.6f} | kl_cosine {:.6f}", ev.report.fid, ev.report.mauve, ev.report.kl_cosine);
    std::cout << serialize_report(ev.report);

    Manifest m("evaluate_" + rp.stem().string(), s.config);
    m.input(generated);
    m.input(golden);
    m.output(rp);
    m.output(hist);
    m.output(frontier);
    m["embedder"] = s.embedder->fingerprint().str();
    m.write(s.paths);
    return 0;
}

int cmd_inspect(Session& s, const std::string& context, const std::string& personas_path,
                const std::string& checkpoint, const std::string& output) {
    const std::vector<Persona> personas = s.personas(personas_path);
    if (!fs::exists(s.paths.pool())) throw ValidationError("exemplar pool not found: " + s.paths.pool().string());
    const ExemplarPool pool = load_pool(s.paths.pool().string());
    const fs::path ckpt_path = checkpoint.empty() ? s.paths.best() : fs::path(checkpoint);
    if (!fs::exists(ckpt_path)) throw ValidationError("checkpoint not found: " + ckpt_path.string());
    const Checkpoint ckpt = load_checkpoint(ckpt_path.string());
    verify_checkpoint(ckpt, {personas_hash(personas), pool_hash(pool), s.embedder->fingerprint(),
                             s.backend->fingerprint(), true});
    const GateState state = GateState::build(*s.embedder, personas, pool, ckpt.exemplar_text);
    const GateNetwork net(ckpt.params, state);
    const GateEval ev = net.evaluate(s.embedder->embed(context));

    std::ostringstream csv;
    csv.precision(17);
    csv << "gate,persona,exemplar,probability\n";
    for (std::size_t k = 0; k < personas.size(); ++k) csv << "pi," << k << ",," << std::exp(ev.log_pi[k]) << "\n";
    for (std::size_t k = 0; k < personas.size(); ++k)
        for (std::size_t j = 0; j < pool.size(); ++j)
            csv << "omega," << k << "," << j << "," << std::exp(ev.log_omega(k, j)) << "\n";
    if (output.empty())
        std::cout << csv.str();
    else
        write_file(output, csv.str());
    return 0;
}

void print_error(const char* type, const std::string& message, int code) {
    ojson e;
    e["error"] = {{"type", type}, {"message", message}};
    e["exit_code"] = code;
    std::cerr << e.dump() << std::endl;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Mixture-of-Personas population simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::string output_dir;
    std::string log_level = "info";
    std::optional<std::uint64_t> seed;

    auto common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "Run config JSON (or a run manifest)")->required();
        sub->add_option("--set", sets, "Override a config value: section.key=json");
        sub->add_option("-o,--output-dir", output_dir, "Override output_dir");
        sub->add_option("--seed", seed, "Set every seed of the run");
        sub->add_option("--log-level", log_level, "trace|debug|info|warn|error|off");
    };

    auto* synth = app.add_subcommand("synth-personas", "Cluster responses and synthesize persona descriptions");
    common(synth);
    std::optional<std::size_t> k_flag;
    synth->add_option("-K,--personas", k_flag, "Number of personas");

    auto* trn = app.add_subcommand("train", "Train the gating network");
    common(trn);
    std::string personas_path;
    std::optional<std::size_t> n_flag, m_flag;
    trn->add_option("--personas", personas_path, "Persona file (default <output_dir>/personas.json)");
    trn->add_option("-N,--exemplars", n_flag, "Exemplar pool size");
    trn->add_option("-M,--top-m", m_flag, "Top-M pairs");

    auto* gen = app.add_subcommand("generate", "Simulate a synthetic population");
    common(gen);
    GenerateArgs ga;
    std::optional<std::size_t> count_flag;
    gen->add_option("-n,--count", count_flag, "Number of generations (default 5000)");
    gen->add_option("--label", ga.label, "Sentiment or persona label to steer towards");
    gen->add_option("--mix-L", ga.mix_l, "Mix L personas per generation");
    gen->add_option("--baseline", ga.baseline, "Generate a baseline instead: zero-shot");
    gen->add_option("--personas", ga.personas, "Persona file");
    gen->add_option("--checkpoint", ga.checkpoint, "Checkpoint (default <output_dir>/checkpoint_best.json)");
    gen->add_option("--output", ga.output, "Generations file");
    gen->add_flag("--force", ga.force, "Use the checkpoint despite fingerprint mismatches");

    auto* evl = app.add_subcommand("evaluate", "Score a generated corpus against the golden set");
    common(evl);
    std::string generated, golden, report;
    evl->add_option("--generated", generated, "Generations or record file (default <output_dir>/generations.jsonl)");
    evl->add_option("--golden", golden, "Golden record file (default data.golden)");
    evl->add_option("--report", report, "Report path (default <output_dir>/eval_report.json)");

    auto* ins = app.add_subcommand("inspect", "Dump pi and Omega for one context as CSV");
    common(ins);
    std::string context, ins_personas, ins_ckpt, ins_out;
    ins->add_option("--context", context, "Input context")->required();
    ins->add_option("--personas", ins_personas, "Persona file");
    ins->add_option("--checkpoint", ins_ckpt, "Checkpoint");
    ins->add_option("--output", ins_out, "CSV path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("validation", e.what(), 2);
        return 2;
    }

    auto logger = spdlog::get("mop");
    if (!logger) logger = spdlog::stderr_color_mt("mop");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        RunConfig config = load_config(config_path);
        for (const auto& s : sets) config.apply_override(s);
        if (!output_dir.empty()) config.output_dir = output_dir;
        if (seed) {
            config.split_seed = config.persona_seed = config.pool_seed = config.init_seed = config.train_seed =
                config.generate_seed = config.metric_seed = *seed;
        }
        if (k_flag) config.personas = *k_flag;
        if (n_flag) config.exemplars = *n_flag;
        if (m_flag) config.top_m = *m_flag;
        if (count_flag) config.count = *count_flag;

        const auto t0 = std::chrono::steady_clock::now();
        Session session(std::move(config));
        int rc = 0;
        if (*synth)
            rc = cmd_synth_personas(session);
        else if (*trn)
            rc = cmd_train(session, personas_path);
        else if (*gen)
            rc = cmd_generate(session, ga);
        else if (*evl)
            rc = cmd_evaluate(session, generated, golden, report);
        else if (*ins)
            rc = cmd_inspect(session, context, ins_personas, ins_ckpt, ins_out);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        spdlog::info("done in {:.2f}s", secs);
        return rc;
    } catch (const ValidationError& e) {
        print_error("validation", e.what(), 2);
        return 2;
    } catch (const TransportError& e) {
        print_error("transport", e.what(), 1);
        return 1;
    } catch (const NumericalError& e) {
        print_error("numerical", e.what(), 1);
        return 1;
    } catch (const std::exception& e) {
        print_error("runtime", e.what(), 1);
        return 1;
    }
}

}  // namespace mop::cli
