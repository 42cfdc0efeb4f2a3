#pragma once

// Population records, personas and exemplar pools, plus their file formats.
//
// Record files are line-delimited JSON objects {"id","context","response","label"}.
// Persona files are a JSON array of {"id","description","source","label"?,"cluster"?}.
// Files written by the engine get a sidecar `<path>.meta.json` holding
// {"format_version", "sha256"} of the content; a sidecar found on load is verified.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mop {

inline constexpr int kFormatVersion = 1;

struct Record {
    std::string id;
    std::string context;
    std::string response;
    std::optional<std::string> label;

    friend bool operator==(const Record&, const Record&) = default;
};

/// The training-side view of a record. Labels are evaluation-only and are not
/// carried here, so nothing downstream of training can read them.
struct Observation {
    std::string id;
    std::string context;
    std::string response;

    friend bool operator==(const Observation&, const Observation&) = default;
};

Observation observe(const Record& r);

struct Provenance {
    std::string source;
    std::string loaded_at;  // ISO-8601 UTC
};

class Dataset {
public:
    /// Validates: non-empty, unique ids, non-empty responses.
    explicit Dataset(std::vector<Record> records, Provenance provenance = {});

    const std::vector<Record>& records() const noexcept { return records_; }
    const Provenance& provenance() const noexcept { return provenance_; }
    std::size_t size() const noexcept { return records_.size(); }
    const Record& operator[](std::size_t i) const { return records_[i]; }

    std::vector<Observation> observations() const;
    std::vector<std::string> contexts() const;
    std::vector<std::string> responses() const;

private:
    std::vector<Record> records_;
    Provenance provenance_;
};

enum class PersonaSource { user_defined, synthesized };

struct Persona {
    int id = 0;
    std::string description;
    PersonaSource source = PersonaSource::user_defined;
    std::optional<std::string> label;
    std::optional<int> cluster;

    friend bool operator==(const Persona&, const Persona&) = default;
};

/// Exemplar j is exemplars[j]; the order never changes after creation.
struct ExemplarPool {
    std::vector<Observation> exemplars;
    std::vector<std::string> origin_ids;

    std::size_t size() const noexcept { return exemplars.size(); }
    /// Pool index of the exemplar drawn from record `id`, if any.
    std::optional<std::size_t> index_of(const std::string& id) const;
};

// Record files.
Dataset load_dataset(const std::string& path);
Dataset parse_dataset(const std::string& content, const std::string& source);
std::string serialize_records(const std::vector<Record>& records);
void write_dataset(const std::string& path, const std::vector<Record>& records);

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double heldout_fraction, std::uint64_t seed);
ExemplarPool sample_exemplar_pool(const Dataset& d, std::size_t n, std::uint64_t seed);

// Pools are stored as record files (no labels) with the origin id as record id.
void write_pool(const std::string& path, const ExemplarPool& pool);
ExemplarPool load_pool(const std::string& path);

// Persona files.
std::vector<Persona> load_personas(const std::string& path);
std::vector<Persona> parse_personas(const std::string& content, const std::string& source);
std::string serialize_personas(const std::vector<Persona>& personas);
void write_personas(const std::string& path, const std::vector<Persona>& personas);

/// Writes `content` to `path` and the sidecar metadata next to it.
void write_with_sidecar(const std::string& path, const std::string& content);
/// Reads `path`, checking the sidecar when one exists.
std::string read_with_sidecar(const std::string& path);
std::string sidecar_path(const std::string& path);

/// Content fingerprint used by checkpoints to pin personas and pools.
std::string personas_hash(const std::vector<Persona>& personas);
std::string pool_hash(const ExemplarPool& pool);

}  // namespace mop
