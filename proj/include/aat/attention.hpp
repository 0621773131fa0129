#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "aat/nn.hpp"
#include "aat/tape.hpp"

namespace aat {

enum class AttentionKind { additive, dot_product };

inline const char* to_string(AttentionKind k) {
    return k == AttentionKind::additive ? "additive" : "dot_product";
}

struct AttentionConfig {
    AttentionKind kind = AttentionKind::additive;
    int heads = 1;
    int query_dim = 0;
    int key_dim = 0;   // dimension of the (projected) feature vectors
    int value_dim = 0; // dimension of the attended output

    void validate() const {
        if (heads < 1) throw ConfigError("attention: heads must be >= 1");
        if (query_dim < 1 || key_dim < 1 || value_dim < 1) {
            throw ConfigError("attention: dimensions must be positive");
        }
        if (kind == AttentionKind::additive && heads != 1) {
            throw ConfigError("attention: additive scoring is single-head");
        }
        if (kind == AttentionKind::dot_product) {
            if (value_dim % heads != 0) {
                throw ConfigError("attention: value_dim " + std::to_string(value_dim) +
                                  " not divisible by " + std::to_string(heads) + " heads");
            }
            if (query_dim % heads != 0) {
                throw ConfigError("attention: query_dim " + std::to_string(query_dim) +
                                  " not divisible by " + std::to_string(heads) + " heads");
            }
        }
    }
};

// Per-image projections cached once per sequence and reused at every
// attention step.
struct AttentionContext {
    Var features;          // {k, key_dim}
    Var keys;              // additive: tanh pre-activation half; dot: K
    Var values;            // dot: V; additive: alias of features
    int k = 0;
};

struct Attended {
    Var attended;                  // {value_dim}
    std::vector<Var> head_weights; // one softmax over k regions per head
};

/**
 * f_att with two interchangeable scorers: single-head additive
 * (v . tanh(Wq q + Wa a_i)) and multi-head scaled dot-product.
 */
class Attention {
public:
    Attention() = default;

    Attention(const AttentionConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        if (cfg_.kind == AttentionKind::additive) {
            // hidden size of the scorer equals query_dim
            w_query_ = uniform_init({cfg_.query_dim, cfg_.query_dim}, rng);
            w_key_ = uniform_init({cfg_.key_dim, cfg_.query_dim}, rng);
            score_v_ = uniform_init({cfg_.query_dim}, rng);
        } else {
            w_query_ = uniform_init({cfg_.query_dim, cfg_.value_dim}, rng);
            w_key_ = uniform_init({cfg_.key_dim, cfg_.value_dim}, rng);
            w_value_ = uniform_init({cfg_.key_dim, cfg_.value_dim}, rng);
            w_out_ = Tensor::identity(cfg_.value_dim);
        }
    }

    const AttentionConfig& config() const { return cfg_; }

    void register_params(ParamList& params, const std::string& prefix) {
        params.add(prefix + ".w_query", w_query_);
        params.add(prefix + ".w_key", w_key_);
        if (cfg_.kind == AttentionKind::additive) {
            params.add(prefix + ".score_v", score_v_);
        } else {
            params.add(prefix + ".w_value", w_value_);
            params.add(prefix + ".w_out", w_out_);
        }
    }

    AttentionContext prepare(Tape& tp, Var features) const {
        const Tensor& f = tp.value(features);
        if (f.ndim() != 2) {
            throw DimensionError("attention: features must be {k, d}, got " + f.shape_str());
        }
        if (f.rows() < 1) throw ConfigError("attention: empty feature set");
        if (f.cols() != cfg_.key_dim) {
            throw DimensionError("attention: feature dim " + std::to_string(f.cols()) +
                                 " != key_dim " + std::to_string(cfg_.key_dim));
        }
        AttentionContext ctx;
        ctx.features = features;
        ctx.k = f.rows();
        if (cfg_.kind == AttentionKind::additive) {
            ctx.keys = tp.matmul(features, tp.bind(w_key_)); // {k, H}
            ctx.values = features;
        } else {
            ctx.keys = tp.matmul(features, tp.bind(w_key_));     // {k, value_dim}
            ctx.values = tp.matmul(features, tp.bind(w_value_)); // {k, value_dim}
        }
        return ctx;
    }

    Attended attend(Tape& tp, const AttentionContext& ctx, Var query) const {
        const Tensor& q = tp.value(query);
        if (q.ndim() != 1 || q.dim(0) != cfg_.query_dim) {
            throw DimensionError("attention: query shape " + q.shape_str() + ", expected {" +
                                 std::to_string(cfg_.query_dim) + "}");
        }
        if (cfg_.kind == AttentionKind::additive) return attend_additive(tp, ctx, query);
        return attend_dot(tp, ctx, query);
    }

private:
    Attended attend_additive(Tape& tp, const AttentionContext& ctx, Var query) const {
        Var qk = tp.matmul(query, tp.bind(w_query_));             // {H}
        Var hidden = tp.tanh_op(tp.add_row_broadcast(ctx.keys, qk)); // {k, H}
        Var scores = tp.matmul(hidden, tp.bind(score_v_));        // {k}
        Var weights = tp.softmax(scores);
        Attended out;
        out.attended = tp.matmul(weights, ctx.values); // sum_i alpha_i a_i
        out.head_weights = {weights};
        return out;
    }

    Attended attend_dot(Tape& tp, const AttentionContext& ctx, Var query) const {
        int d_head = cfg_.value_dim / cfg_.heads;
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
        Var q_proj = tp.matmul(query, tp.bind(w_query_)); // {value_dim}
        Attended out;
        Var cat;
        for (int h = 0; h < cfg_.heads; ++h) {
            Var q_h = tp.slice(q_proj, h * d_head, d_head);
            Var k_h = tp.slice_cols(ctx.keys, h * d_head, d_head);
            Var v_h = tp.slice_cols(ctx.values, h * d_head, d_head);
            Var scores = tp.scale(tp.matmul(k_h, q_h), inv_sqrt); // {k}
            Var weights = tp.softmax(scores);
            Var attended_h = tp.matmul(weights, v_h); // {d_head}
            out.head_weights.push_back(weights);
            cat = h == 0 ? attended_h : tp.concat(cat, attended_h);
        }
        out.attended = tp.matmul(cat, tp.bind(w_out_));
        return out;
    }

    AttentionConfig cfg_;
    Tensor w_query_;
    Tensor w_key_;
    Tensor w_value_;
    Tensor score_v_;
    Tensor w_out_;
};

} // namespace aat
