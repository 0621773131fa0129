#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "aat/decoder.hpp"
#include "aat/errors.hpp"

namespace aat {

// -log(dist[target]), with the probability clamped at 1e-12.
inline double cross_entropy(const std::vector<double>& dist, int target) {
    if (target < 0 || target >= static_cast<int>(dist.size())) {
        throw LookupError("cross_entropy: target " + std::to_string(target) + " out of " +
                          std::to_string(dist.size()));
    }
    return -std::log(std::max(dist[static_cast<std::size_t>(target)], 1e-12));
}

namespace bleu_detail {

using Ngram = std::vector<std::string>;

inline std::map<Ngram, int> ngram_counts(const std::vector<std::string>& words, int n) {
    std::map<Ngram, int> counts;
    if (static_cast<int>(words.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= words.size(); ++i) {
        ++counts[Ngram(words.begin() + static_cast<std::ptrdiff_t>(i),
                       words.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

} // namespace bleu_detail

// Corpus-level BLEU with modified n-gram precision and brevity penalty, no
// smoothing. Returns cumulative BLEU-1..BLEU-n_max. references[i] holds the
// reference set for hypothesis i; the effective reference length is the one
// closest to the hypothesis length (ties -> shorter).
inline std::vector<double> bleu(const std::vector<std::vector<std::string>>& hypotheses,
                                const std::vector<std::vector<std::vector<std::string>>>& references,
                                int n_max = 4) {
    if (hypotheses.empty()) throw MetricError("bleu: empty hypothesis set");
    if (hypotheses.size() != references.size()) {
        throw MetricError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                          std::to_string(references.size()) + " reference sets");
    }
    std::vector<long long> clipped(static_cast<std::size_t>(n_max), 0);
    std::vector<long long> total(static_cast<std::size_t>(n_max), 0);
    long long hyp_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto& hyp = hypotheses[i];
        const auto& refs = references[i];
        if (refs.empty()) throw MetricError("bleu: hypothesis " + std::to_string(i) + " has no references");
        hyp_len += static_cast<long long>(hyp.size());
        long long best_ref = static_cast<long long>(refs[0].size());
        for (const auto& r : refs) {
            long long len = static_cast<long long>(r.size());
            long long cur = std::llabs(best_ref - static_cast<long long>(hyp.size()));
            long long cand = std::llabs(len - static_cast<long long>(hyp.size()));
            if (cand < cur || (cand == cur && len < best_ref)) best_ref = len;
        }
        ref_len += best_ref;
        for (int n = 1; n <= n_max; ++n) {
            auto hyp_counts = bleu_detail::ngram_counts(hyp, n);
            std::map<bleu_detail::Ngram, int> max_ref;
            for (const auto& r : refs) {
                for (const auto& [gram, c] : bleu_detail::ngram_counts(r, n)) {
                    max_ref[gram] = std::max(max_ref[gram], c);
                }
            }
            for (const auto& [gram, c] : hyp_counts) {
                total[static_cast<std::size_t>(n - 1)] += c;
                auto it = max_ref.find(gram);
                if (it != max_ref.end()) {
                    clipped[static_cast<std::size_t>(n - 1)] += std::min(c, it->second);
                }
            }
        }
    }
    double bp = hyp_len < ref_len && hyp_len > 0
                    ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                    : (hyp_len == 0 ? 0.0 : 1.0);
    std::vector<double> scores;
    double log_sum = 0.0;
    bool dead = false;
    for (int n = 1; n <= n_max; ++n) {
        long long c = clipped[static_cast<std::size_t>(n - 1)];
        long long t = total[static_cast<std::size_t>(n - 1)];
        if (c == 0 || t == 0) dead = true;
        if (!dead) log_sum += std::log(static_cast<double>(c) / static_cast<double>(t));
        scores.push_back(dead ? 0.0 : bp * std::exp(log_sum / n));
    }
    return scores;
}

// Single-reference convenience.
inline std::vector<double> bleu(const std::vector<std::vector<std::string>>& hypotheses,
                                const std::vector<std::vector<std::string>>& references,
                                int n_max = 4) {
    std::vector<std::vector<std::vector<std::string>>> wrapped;
    wrapped.reserve(references.size());
    for (const auto& r : references) wrapped.push_back({r});
    return bleu(hypotheses, wrapped, n_max);
}

struct AttentionStats {
    int min_steps = 0;
    int max_steps = 0;
    double mean_steps = 0.0;
};

// Order statistics of N(t) over every decoding step in the trace set.
inline AttentionStats attention_stats(const std::vector<HaltingTrace>& traces) {
    AttentionStats stats;
    long long count = 0;
    double sum = 0.0;
    bool first = true;
    for (const HaltingTrace& trace : traces) {
        for (const StepTrace& s : trace) {
            if (first) {
                stats.min_steps = stats.max_steps = s.n_steps;
                first = false;
            }
            stats.min_steps = std::min(stats.min_steps, s.n_steps);
            stats.max_steps = std::max(stats.max_steps, s.n_steps);
            sum += s.n_steps;
            ++count;
        }
    }
    if (count == 0) throw MetricError("attention_stats: empty trace set");
    stats.mean_steps = sum / static_cast<double>(count);
    return stats;
}

} // namespace aat
