#include "mop/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "mop/error.hpp"
#include "mop/random.hpp"

namespace mop {

void TrainConfig::validate() const {
    if (top_m < 1) throw ValidationError("M must be >= 1");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("Adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ValidationError("Adam epsilon must be positive");
    if (max_epochs < 0) throw ValidationError("max epochs must be >= 0");
    if (patience < 1) throw ValidationError("patience must be >= 1");
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(GatingParams& params, const GatingGradient& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
        const double g = grad.coordinate(i);
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        params.coordinate(i) -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

double evaluate_heldout(const Mixture& mixture, const GatingParams& params, std::span<const Observation> heldout,
                        std::size_t top_m) {
    if (heldout.empty()) throw ValidationError("empty heldout set");
    MaskRule mask;
    mask.kind = MaskRule::Kind::exclude_self;
    return mixture.mean_loglik(heldout, params, top_m, mask);
}

namespace {

void fill_taus(EpochStats& s, const GatingParams& p) {
    const auto taus = p.taus();
    s.tau_min = *std::min_element(taus.begin(), taus.end());
    s.tau_max = *std::max_element(taus.begin(), taus.end());
    s.tau_mean = std::accumulate(taus.begin(), taus.end(), 0.0) / static_cast<double>(taus.size());
}

}  // namespace

TrainResult train(const Mixture& mixture, std::span<const Observation> train_set,
                  std::span<const Observation> heldout, GatingParams init, const TrainConfig& config,
                  const ImprovementHook& on_improvement) {
    config.validate();
    if (train_set.empty()) throw ValidationError("empty training set");
    if (heldout.empty()) throw ValidationError("empty heldout set");
    init.validate();

    using clock = std::chrono::steady_clock;
    const auto started = clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - started).count(); };

    TrainResult result{init, init, {}};
    GatingParams& params = result.last;

    EpochStats zero;
    zero.train_loglik = mixture.mean_loglik(train_set, params, config.top_m, config.mask);
    zero.heldout_loglik = evaluate_heldout(mixture, params, heldout, config.top_m);
    fill_taus(zero, params);
    zero.wall_seconds = elapsed();
    zero.backend_calls = mixture.cache().stats().backend_calls;
    zero.cache_hits = mixture.cache().stats().hits;
    result.log.epochs.push_back(zero);
    spdlog::info("epoch 0: train {:.6f} heldout {:.6f}", zero.train_loglik, zero.heldout_loglik);
    if (on_improvement) on_improvement(0, params);

    double best = zero.heldout_loglik;
    int since_best = 0;
    Adam adam(params.parameter_count(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Observation> batch;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double objective_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(train_set[order[i]]);
            const std::uint64_t salt = (static_cast<std::uint64_t>(epoch) << 32) | start;
            GatingGradient grad;
            try {
                grad = mixture.gradient(batch, params, config.top_m, config.mask, salt);
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch at " +
                                     std::to_string(start) + ")");
            }
            objective_sum += grad.objective * static_cast<double>(batch.size());
            adam.step(params, grad);
        }

        EpochStats s;
        s.epoch = epoch;
        s.train_loglik = -objective_sum / static_cast<double>(order.size());
        s.heldout_loglik = evaluate_heldout(mixture, params, heldout, config.top_m);
        if (!std::isfinite(s.heldout_loglik)) throw NumericalError("non-finite heldout loglik at epoch " + std::to_string(epoch));
        fill_taus(s, params);
        s.wall_seconds = elapsed();
        s.backend_calls = mixture.cache().stats().backend_calls;
        s.cache_hits = mixture.cache().stats().hits;
        result.log.epochs.push_back(s);
        spdlog::info("epoch {}: train {:.6f} heldout {:.6f} tau [{:.3f}, {:.3f}]", epoch, s.train_loglik,
                     s.heldout_loglik, s.tau_min, s.tau_max);

        if (s.heldout_loglik > best) {
            best = s.heldout_loglik;
            since_best = 0;
            result.best = params;
            result.log.best_epoch = epoch;
            if (on_improvement) on_improvement(epoch, params);
        } else if (++since_best >= config.patience) {
            result.log.early_stopped = true;
            spdlog::info("early stop after epoch {} (best epoch {})", epoch, result.log.best_epoch);
            break;
        }
    }
    return result;
}

std::string serialize_train_report(const TrainLog& log, const TrainConfig& config) {
    nlohmann::ordered_json o;
    o["config"] = {{"M", config.top_m},           {"batch_size", config.batch_size}, {"learning_rate", config.learning_rate},
                   {"beta1", config.beta1},       {"beta2", config.beta2},           {"epsilon", config.epsilon},
                   {"max_epochs", config.max_epochs}, {"patience", config.patience}, {"seed", config.seed},
                   {"mask", config.mask.name()}};
    o["best_epoch"] = log.best_epoch;
    o["early_stopped"] = log.early_stopped;
    auto& epochs = o["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : log.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loglik", e.train_loglik},
                          {"heldout_loglik", e.heldout_loglik},
                          {"tau", {{"min", e.tau_min}, {"mean", e.tau_mean}, {"max", e.tau_max}}},
                          {"backend_calls", e.backend_calls},
                          {"cache_hits", e.cache_hits}});
    }
    return o.dump(2) + "\n";
}

}  // namespace mop
