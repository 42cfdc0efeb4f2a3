#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>

#include "mop/lm_backend.hpp"

namespace mop {

/// Memoizes score sheets by (backend fingerprint, prompt hash, continuation hash).
///
/// Logits do not depend on the gating parameters, so one backend call serves
/// every temperature tried during optimization. Inserts are insert-if-absent;
/// two threads computing the same key is wasteful but harmless.
class ScoreCache {
public:
    struct Stats {
        std::uint64_t backend_calls = 0;
        std::uint64_t hits = 0;
    };

    std::shared_ptr<const ScoreSheet> score(const LanguageModel& lm, const std::string& prompt,
                                            const std::string& continuation);

    Stats stats() const;
    std::size_t size() const;
    void clear();

private:
    using Key = std::tuple<std::string, std::uint64_t, std::uint64_t>;
    mutable std::mutex mu_;
    std::map<Key, std::shared_ptr<const ScoreSheet>> sheets_;
    Stats stats_;
};

}  // namespace mop
