#include "mop/lm_backend.hpp"

#include <algorithm>
#include <cmath>

#include "mop/error.hpp"

namespace mop {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Accumulates logsumexp(z/tau) and E_softmax(z/tau)[z] in one streaming pass.
class TemperedAccumulator {
public:
    explicit TemperedAccumulator(double tau) : inv_tau_(1.0 / tau) {}

    void add(double logit, double multiplicity = 1.0) {
        if (multiplicity <= 0.0 || logit == kNegInf) return;
        const double s = logit * inv_tau_;
        if (s > max_) {
            const double scale = std::exp(max_ - s);
            sum_ *= scale;
            weighted_ *= scale;
            max_ = s;
        }
        const double w = multiplicity * std::exp(s - max_);
        sum_ += w;
        weighted_ += w * logit;
    }

    double logsumexp() const { return max_ + std::log(sum_); }
    double expected_logit() const { return weighted_ / sum_; }

private:
    double inv_tau_;
    double max_ = kNegInf;
    double sum_ = 0.0;
    double weighted_ = 0.0;
};

template <class Sink>
void for_each_term(const TokenScoreRow& row, Sink&& sink) {
    if (const auto* full = std::get_if<std::vector<double>>(&row.support)) {
        for (double z : *full) sink(z, 1.0);
        return;
    }
    const auto& topk = std::get<TopKSupport>(row.support);
    bool target_in_topk = false;
    for (std::size_t i = 0; i < topk.ids.size(); ++i) {
        sink(topk.logits[i], 1.0);
        if (topk.ids[i] == row.target_token) target_in_topk = true;
    }
    double rest = topk.rest_logsumexp;
    double count = topk.rest_count;
    if (!target_in_topk) {
        sink(row.target_logit, 1.0);
        // Take the target out of the rest mass.
        if (rest != kNegInf && rest > row.target_logit) {
            rest = rest + std::log1p(-std::exp(row.target_logit - rest));
        } else {
            rest = kNegInf;
        }
        count -= 1.0;
    }
    if (rest != kNegInf && count > 0.0) sink(rest - std::log(count), count);
}

void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("temperature must be positive and finite");
}

}  // namespace

TemperedValue tempered_row(const TokenScoreRow& row, double tau) {
    check_tau(tau);
    TemperedAccumulator acc(tau);
    for_each_term(row, [&](double z, double m) { acc.add(z, m); });
    const double lse = acc.logsumexp();
    // target * (1/tau) rounds exactly like the accumulator's terms, so the value never exceeds 0.
    return {row.target_logit * (1.0 / tau) - lse, (acc.expected_logit() - row.target_logit) / (tau * tau)};
}

TemperedValue tempered(const ScoreSheet& sheet, double tau) {
    check_tau(tau);
    TemperedValue total;
    for (const auto& row : sheet.rows) {
        const TemperedValue v = tempered_row(row, tau);
        total.loglik += v.loglik;
        total.dtau += v.dtau;
    }
    return total;
}

double tempered_loglik(const ScoreSheet& sheet, double tau) { return tempered(sheet, tau).loglik; }

double tempered_loglik_dtau(const ScoreSheet& sheet, double tau) { return tempered(sheet, tau).dtau; }

double row_logsumexp(const TokenScoreRow& row) {
    TemperedAccumulator acc(1.0);
    for_each_term(row, [&](double z, double m) { acc.add(z, m); });
    return acc.logsumexp();
}

}  // namespace mop
