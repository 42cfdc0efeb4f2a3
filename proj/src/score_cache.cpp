#include "mop/score_cache.hpp"

#include "mop/hashing.hpp"

namespace mop {

std::shared_ptr<const ScoreSheet> ScoreCache::score(const LanguageModel& lm, const std::string& prompt,
                                                    const std::string& continuation) {
    Key key{lm.fingerprint(), fnv1a64(prompt), fnv1a64(continuation)};
    {
        std::lock_guard lock(mu_);
        if (auto it = sheets_.find(key); it != sheets_.end()) {
            ++stats_.hits;
            return it->second;
        }
    }
    auto sheet = std::make_shared<const ScoreSheet>(lm.score(prompt, continuation));
    std::lock_guard lock(mu_);
    ++stats_.backend_calls;
    return sheets_.emplace(std::move(key), std::move(sheet)).first->second;
}

ScoreCache::Stats ScoreCache::stats() const {
    std::lock_guard lock(mu_);
    return stats_;
}

std::size_t ScoreCache::size() const {
    std::lock_guard lock(mu_);
    return sheets_.size();
}

void ScoreCache::clear() {
    std::lock_guard lock(mu_);
    sheets_.clear();
    stats_ = {};
}

}  // namespace mop
