#pragma once

#include <cstddef>
#include <vector>

#include "aat/errors.hpp"

namespace aat {

// Outcome of one decoding step's halting schedule. betas are indexed by
// inner step n = 0..n_steps; beta_norm always sums to 1.
struct HaltingResult {
    int n_steps = 0; // N(t)
    std::vector<double> confidences;
    std::vector<double> beta_raw;
    std::vector<double> beta_norm;
};

/**
 * Incremental halting schedule for one decoding step.
 *
 * Feed the confidence for inner step n via push(); the kernel forces it to
 * zero while n < m_min, tracks the running product of (1 - p), and reports
 * the halt once the product drops strictly below epsilon or n reaches m_max.
 * The mixture weights follow beta_0 = p_0, beta_n = p_n * prod_{n'<n}(1-p_n'),
 * normalized to sum to 1.
 *
 * All products and sums run left to right so scripted sequences reproduce a
 * brute-force evaluation bit for bit.
 */
class HaltingKernel {
public:
    HaltingKernel(double epsilon, int m_min, int m_max)
        : epsilon_(epsilon), m_min_(m_min), m_max_(m_max) {
        if (!(epsilon > 0.0 && epsilon < 1.0)) {
            throw ConfigError("halting: epsilon must be in (0,1)");
        }
        if (m_min < 0 || m_max < 1 || m_min > m_max) {
            throw ConfigError("halting: need 0 <= m_min <= m_max and m_max >= 1");
        }
    }

    int next_step() const { return static_cast<int>(p_.size()); }

    // True when the confidence at inner step n is pinned to zero.
    bool forced_zero(int n) const { return n < m_min_; }

    bool halted() const { return halted_; }

    // Records the confidence for the current inner step and returns true if
    // the schedule halts here. Ties at exactly epsilon keep attending.
    bool push(double confidence) {
        if (halted_) throw ContractError("halting: push after halt");
        int n = next_step();
        double p = forced_zero(n) ? 0.0 : confidence;
        p_.push_back(p);
        product_ *= 1.0 - p;
        if (product_ < epsilon_ || n == m_max_) halted_ = true;
        return halted_;
    }

    HaltingResult finish() const {
        if (!halted_) throw ContractError("halting: finish before halt");
        HaltingResult r;
        r.n_steps = static_cast<int>(p_.size()) - 1;
        r.confidences = p_;
        r.beta_raw.resize(p_.size());
        double prefix = 1.0;
        for (std::size_t n = 0; n < p_.size(); ++n) {
            r.beta_raw[n] = p_[n] * prefix;
            prefix *= 1.0 - p_[n];
        }
        double sum = 0.0;
        for (double b : r.beta_raw) sum += b;
        r.beta_norm.resize(p_.size());
        for (std::size_t n = 0; n < p_.size(); ++n) r.beta_norm[n] = r.beta_raw[n] / sum;
        return r;
    }

private:
    double epsilon_;
    int m_min_;
    int m_max_;
    std::vector<double> p_;
    double product_ = 1.0;
    bool halted_ = false;
};

// Runs the schedule over a scripted confidence sequence. The script must be
// long enough to reach the halt; m_max + 1 values always suffice.
inline HaltingResult run_halting(const std::vector<double>& confidences, double epsilon,
                                 int m_min, int m_max) {
    HaltingKernel kernel(epsilon, m_min, m_max);
    for (double p : confidences) {
        if (kernel.push(p)) return kernel.finish();
    }
    throw ContractError("halting: scripted sequence exhausted before halt");
}

// Time cost penalty: lambda * (N + sum_n (n+1)(1 - p_n)). The bare N term
// carries no gradient; this scalar mirror is used for traces and tests.
inline double ponder_value(const std::vector<double>& confidences, int n_steps, double lambda) {
    if (lambda < 0.0) throw ConfigError("ponder: lambda must be >= 0");
    double acc = static_cast<double>(n_steps);
    for (std::size_t n = 0; n < confidences.size(); ++n) {
        acc += static_cast<double>(n + 1) * (1.0 - confidences[n]);
    }
    return lambda * acc;
}

} // namespace aat
