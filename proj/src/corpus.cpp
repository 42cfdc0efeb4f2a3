#include "mop/corpus.hpp"


#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <json.hpp>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "mop/error.hpp"
#include "mop/hashing.hpp"
#include "mop/random.hpp"

namespace mop {

using ojson = nlohmann::ordered_json;

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::optional<std::string> optional_string(const ojson& obj, const char* key, const std::string& source,
                                           std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw ParseError(source, line, std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
}

const char* source_name(PersonaSource s) {
    return s == PersonaSource::synthesized ? "synthesized" : "user_defined";
}

}  // namespace

Observation observe(const Record& r) { return {r.id, r.context, r.response}; }

Dataset::Dataset(std::vector<Record> records, Provenance provenance)
    : records_(std::move(records)), provenance_(std::move(provenance)) {
    if (records_.empty()) throw ValidationError("empty dataset");
    std::unordered_set<std::string> seen;
    for (const auto& r : records_) {
        if (r.response.empty()) throw ValidationError("record '" + r.id + "' has an empty response");
        if (!seen.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    }
}

std::vector<Observation> Dataset::observations() const {
    std::vector<Observation> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(observe(r));
    return out;
}

std::vector<std::string> Dataset::contexts() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.context);
    return out;
}

std::vector<std::string> Dataset::responses() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.response);
    return out;
}

std::optional<std::size_t> ExemplarPool::index_of(const std::string& id) const {
    for (std::size_t j = 0; j < origin_ids.size(); ++j) {
        if (origin_ids[j] == id) return j;
    }
    return std::nullopt;
}

Dataset parse_dataset(const std::string& content, const std::string& source) {
    std::vector<Record> records;
    std::unordered_map<std::string, std::size_t> explicit_ids;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
        std::size_t end = content.find('\n', pos);
        if (end == std::string::npos) end = content.size();
        std::string line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) {
            if (end == content.size()) break;
            continue;
        }

        ojson obj;
        try {
            obj = ojson::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(source, line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object()) throw ParseError(source, line_no, "expected a JSON object");

        Record r;
        auto resp = obj.find("response");
        if (resp == obj.end() || !resp->is_string()) {
            throw ParseError(source, line_no, "missing string field 'response'");
        }
        r.response = resp->get<std::string>();
        if (r.response.empty()) throw ParseError(source, line_no, "empty 'response'");
        r.context = optional_string(obj, "context", source, line_no).value_or("");
        r.label = optional_string(obj, "label", source, line_no);

        auto id = obj.find("id");
        if (id == obj.end() || id->is_null()) {
            r.id = std::to_string(line_no);
        } else if (id->is_string()) {
            r.id = id->get<std::string>();
        } else if (id->is_number_integer()) {
            r.id = std::to_string(id->get<long long>());
        } else {
            throw ParseError(source, line_no, "field 'id' must be a string or integer");
        }
        if (auto [it, inserted] = explicit_ids.emplace(r.id, line_no); !inserted) {
            throw ValidationError(source + ":" + std::to_string(line_no) + ": duplicate id '" + r.id +
                                  "' (first seen at line " + std::to_string(it->second) + ")");
        }
        records.push_back(std::move(r));
        if (end == content.size()) break;
    }
    if (records.empty()) throw ValidationError(source + ": empty dataset");
    return Dataset(std::move(records), Provenance{source, utc_now()});
}

Dataset load_dataset(const std::string& path) { return parse_dataset(read_with_sidecar(path), path); }

std::string serialize_records(const std::vector<Record>& records) {
    std::string out;
    for (const auto& r : records) {
        ojson obj;
        obj["id"] = r.id;
        obj["context"] = r.context;
        obj["response"] = r.response;
        if (r.label) obj["label"] = *r.label;
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void write_dataset(const std::string& path, const std::vector<Record>& records) {
    write_with_sidecar(path, serialize_records(records));
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double heldout_fraction, std::uint64_t seed) {
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
        throw ValidationError("heldout fraction must lie in (0, 1)");
    }
    const std::size_t n = d.size();
    const auto n_heldout = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(n)));
    if (n_heldout == 0) throw ValidationError("empty heldout split");
    if (n_heldout >= n) throw ValidationError("empty train split");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0x5b1));
    rng.shuffle(order);
    std::vector<bool> held(n, false);
    for (std::size_t i = 0; i < n_heldout; ++i) held[order[i]] = true;

    std::vector<Record> train, heldout;
    for (std::size_t i = 0; i < n; ++i) (held[i] ? heldout : train).push_back(d[i]);
    return {Dataset(std::move(train), d.provenance()), Dataset(std::move(heldout), d.provenance())};
}

ExemplarPool sample_exemplar_pool(const Dataset& d, std::size_t n, std::uint64_t seed) {
    if (n < 1 || n > d.size()) {
        throw ValidationError("pool size " + std::to_string(n) + " outside [1, " + std::to_string(d.size()) + "]");
    }
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0x9001));
    rng.shuffle(order);
    ExemplarPool pool;
    for (std::size_t i = 0; i < n; ++i) {
        pool.exemplars.push_back(observe(d[order[i]]));
        pool.origin_ids.push_back(d[order[i]].id);
    }
    return pool;
}

void write_pool(const std::string& path, const ExemplarPool& pool) {
    std::vector<Record> rows;
    rows.reserve(pool.size());
    for (std::size_t j = 0; j < pool.size(); ++j) {
        rows.push_back({pool.origin_ids[j], pool.exemplars[j].context, pool.exemplars[j].response, std::nullopt});
    }
    write_dataset(path, rows);
}

ExemplarPool load_pool(const std::string& path) {
    const Dataset d = load_dataset(path);
    ExemplarPool pool;
    for (const auto& r : d.records()) {
        pool.exemplars.push_back(observe(r));
        pool.origin_ids.push_back(r.id);
    }
    return pool;
}

std::vector<Persona> parse_personas(const std::string& content, const std::string& source) {
    ojson arr;
    try {
        arr = ojson::parse(content);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(source + ": invalid JSON: " + e.what());
    }
    if (!arr.is_array()) throw ValidationError(source + ": persona file must be a JSON array");
    std::vector<Persona> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& o = arr[i];
        const std::string where = source + "[" + std::to_string(i) + "]";
        if (!o.is_object()) throw ValidationError(where + ": expected an object");
        Persona p;
        if (!o.contains("id") || !o["id"].is_number_integer()) throw ValidationError(where + ": integer 'id' required");
        p.id = o["id"].get<int>();
        if (!o.contains("description") || !o["description"].is_string()) {
            throw ValidationError(where + ": string 'description' required");
        }
        p.description = o["description"].get<std::string>();
        if (p.description.empty()) throw ValidationError(where + ": empty description");
        const std::string src = o.value("source", std::string("user_defined"));
        if (src == "synthesized") {
            p.source = PersonaSource::synthesized;
        } else if (src == "user_defined") {
            p.source = PersonaSource::user_defined;
        } else {
            throw ValidationError(where + ": unknown source '" + src + "'");
        }
        if (o.contains("label") && !o["label"].is_null()) p.label = o["label"].get<std::string>();
        if (o.contains("cluster") && !o["cluster"].is_null()) p.cluster = o["cluster"].get<int>();
        out.push_back(std::move(p));
    }
    if (out.empty()) throw ValidationError(source + ": no personas");
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].id != static_cast<int>(i)) {
            throw ValidationError(source + ": persona ids must be 0..K-1 in order");
        }
    }
    return out;
}

std::vector<Persona> load_personas(const std::string& path) {
    if (!std::filesystem::exists(path)) throw ValidationError("personas not found: " + path);
    return parse_personas(read_with_sidecar(path), path);
}

std::string serialize_personas(const std::vector<Persona>& personas) {
    ojson arr = ojson::array();
    for (const auto& p : personas) {
        ojson o;
        o["id"] = p.id;
        o["description"] = p.description;
        o["source"] = source_name(p.source);
        if (p.label) o["label"] = *p.label;
        if (p.cluster) o["cluster"] = *p.cluster;
        arr.push_back(std::move(o));
    }
    return arr.dump(2) + "\n";
}

void write_personas(const std::string& path, const std::vector<Persona>& personas) {
    write_with_sidecar(path, serialize_personas(personas));
}

std::string sidecar_path(const std::string& path) { return path + ".meta.json"; }

void write_with_sidecar(const std::string& path, const std::string& content) {
    write_file(path, content);
    ojson meta;
    meta["format_version"] = kFormatVersion;
    meta["sha256"] = sha256_hex(content);
    write_file(sidecar_path(path), meta.dump(2) + "\n");
}

std::string read_with_sidecar(const std::string& path) {
    std::string content = read_file(path);
    const std::string meta_path = sidecar_path(path);
    if (std::filesystem::exists(meta_path)) {
        ojson meta;
        try {
            meta = ojson::parse(read_file(meta_path));
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(meta_path + ": invalid JSON: " + e.what());
        }
        if (meta.value("format_version", -1) != kFormatVersion) {
            throw ValidationError(meta_path + ": unsupported format_version");
        }
        if (meta.value("sha256", std::string()) != sha256_hex(content)) {
            throw ValidationError(path + ": content does not match sidecar sha256");
        }
    }
    return content;
}

std::string personas_hash(const std::vector<Persona>& personas) {
    return sha256_hex(serialize_personas(personas));
}

std::string pool_hash(const ExemplarPool& pool) {
    std::string blob;
    for (std::size_t j = 0; j < pool.size(); ++j) {
        blob += pool.origin_ids[j];
        blob += '\x1f';
        blob += pool.exemplars[j].context;
        blob += '\x1f';
        blob += pool.exemplars[j].response;
        blob += '\x1e';
    }
    return sha256_hex(blob);
}

}  // namespace mop
