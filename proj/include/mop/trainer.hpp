#pragma once
// Maximum-likelihood training of the gating parameters.
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mop/gating.hpp"

namespace mop {

struct TrainConfig {
    std::size_t top_m = 4;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int max_epochs = 20;
    int patience = 5;
    std::uint64_t seed = 0;
    MaskRule mask;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;  // 0 is the untrained starting point
    double train_loglik = 0.0;
    double heldout_loglik = 0.0;
    double tau_min = 0.0;
    double tau_mean = 0.0;
    double tau_max = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t backend_calls = 0;
    std::uint64_t cache_hits = 0;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;
    bool early_stopped = false;
};

struct TrainResult {
    GatingParams best;
    GatingParams last;
    TrainLog log;
};

/// Called with (epoch, params) each time the heldout loglik improves, epoch 0 included.
using ImprovementHook = std::function<void(int, const GatingParams&)>;

/// Adam on the mean negative log-likelihood, shuffled minibatches, early stop on
/// heldout loglik. Returns the best-heldout parameters.
TrainResult train(const Mixture& mixture, std::span<const Observation> train_set,
                  std::span<const Observation> heldout, GatingParams init, const TrainConfig& config,
                  const ImprovementHook& on_improvement = {});

/// Mean mixture loglik over heldout records, with self-exemplars masked.
double evaluate_heldout(const Mixture& mixture, const GatingParams& params, std::span<const Observation> heldout,
                        std::size_t top_m);

/// JSON report of a run. Wall times are left out so reruns compare byte-identically.
std::string serialize_train_report(const TrainLog& log, const TrainConfig& config);

/// Adam optimizer state over the flat parameter view.
class Adam {
public:
    Adam(std::size_t n, double lr, double beta1, double beta2, double eps);
    void step(GatingParams& params, const GatingGradient& grad);
    std::size_t steps() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace mop
