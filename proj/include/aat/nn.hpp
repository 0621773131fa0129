#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "aat/tape.hpp"
#include "aat/tensor.hpp"

namespace aat {

// Deterministic RNG used for parameter init, data generation and sampling.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen_);
    }

    // in [0, n)
    int randint(int n) {
        std::uniform_int_distribution<int> d(0, n - 1);
        return d(gen_);
    }

    double unit() { return uniform(0.0, 1.0); }

    // Index sampled from an unnormalized or normalized weight vector.
    int sample_index(const std::vector<double>& weights) {
        std::discrete_distribution<int> d(weights.begin(), weights.end());
        return d(gen_);
    }

    std::mt19937_64& raw() { return gen_; }

private:
    std::mt19937_64 gen_;
};

// All weights start uniform in [-0.08, 0.08] unless a layer overrides.
inline constexpr double kInitRange = 0.08;

inline Tensor uniform_init(std::vector<int> shape, Rng& rng, double range = kInitRange) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(-range, range);
    return t;
}

// Named references to the tensors a model owns, in a stable registration
// order. Optimizer state and checkpoints both key off this.
class ParamList {
public:
    struct Entry {
        std::string name;
        Tensor* tensor;
    };

    void add(const std::string& name, Tensor& t) { entries_.push_back({name, &t}); }

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }

    Tensor* find(const std::string& name) const {
        for (const Entry& e : entries_)
            if (e.name == name) return e.tensor;
        return nullptr;
    }

private:
    std::vector<Entry> entries_;
};

struct Linear {
    Tensor w; // {in, out}
    Tensor b; // {out}

    Linear() = default;
    Linear(int in, int out, Rng& rng) : w(uniform_init({in, out}, rng)), b(Tensor::zeros({out})) {}

    void register_params(ParamList& params, const std::string& prefix) {
        params.add(prefix + ".w", w);
        params.add(prefix + ".b", b);
    }

    Var apply(Tape& tp, Var x) const {
        Var xw = tp.matmul(x, tp.bind(w));
        if (tp.value(xw).ndim() == 2) return tp.add_row_broadcast(xw, tp.bind(b));
        return tp.add(xw, tp.bind(b));
    }
};

struct Embedding {
    int vocab_size = 0;
    int dim = 0;
    Tensor table; // {vocab_size, dim}

    Embedding() = default;
    Embedding(int vocab, int d, Rng& rng)
        : vocab_size(vocab), dim(d), table(uniform_init({vocab, d}, rng)) {}

    void register_params(ParamList& params, const std::string& prefix) {
        params.add(prefix + ".table", table);
    }

    // Row lookup; equals onehot(id) x table.
    Var lookup(Tape& tp, int token_id) const {
        if (token_id < 0 || token_id >= vocab_size) {
            throw LookupError("embed: token " + std::to_string(token_id) + " out of vocab " +
                              std::to_string(vocab_size));
        }
        return tp.row(tp.bind(table), token_id);
    }
};

// Single LSTM cell, no peepholes. One weight matrix and bias per gate, each
// over the concatenated [x, h] input.
struct LstmCell {
    int input_dim = 0;
    int hidden_dim = 0;
    Tensor w_i, w_f, w_o, w_g; // {input_dim + hidden_dim, hidden_dim}
    Tensor b_i, b_f, b_o, b_g; // {hidden_dim}

    LstmCell() = default;
    LstmCell(int in, int hid, Rng& rng)
        : input_dim(in),
          hidden_dim(hid),
          w_i(uniform_init({in + hid, hid}, rng)),
          w_f(uniform_init({in + hid, hid}, rng)),
          w_o(uniform_init({in + hid, hid}, rng)),
          w_g(uniform_init({in + hid, hid}, rng)),
          b_i(Tensor::zeros({hid})),
          b_f(Tensor::full({hid}, 1.0)), // forget gate starts open
          b_o(Tensor::zeros({hid})),
          b_g(Tensor::zeros({hid})) {}

    void register_params(ParamList& params, const std::string& prefix) {
        params.add(prefix + ".w_i", w_i);
        params.add(prefix + ".w_f", w_f);
        params.add(prefix + ".w_o", w_o);
        params.add(prefix + ".w_g", w_g);
        params.add(prefix + ".b_i", b_i);
        params.add(prefix + ".b_f", b_f);
        params.add(prefix + ".b_o", b_o);
        params.add(prefix + ".b_g", b_g);
    }

    // m' = f*m + i*g, h' = o*tanh(m')
    std::pair<Var, Var> step(Tape& tp, Var x, Var h, Var m) const {
        check_vec(tp, x, input_dim, "x");
        check_vec(tp, h, hidden_dim, "h");
        check_vec(tp, m, hidden_dim, "m");
        Var xh = tp.concat(x, h);
        Var i = tp.sigmoid(tp.add(tp.matmul(xh, tp.bind(w_i)), tp.bind(b_i)));
        Var f = tp.sigmoid(tp.add(tp.matmul(xh, tp.bind(w_f)), tp.bind(b_f)));
        Var o = tp.sigmoid(tp.add(tp.matmul(xh, tp.bind(w_o)), tp.bind(b_o)));
        Var g = tp.tanh_op(tp.add(tp.matmul(xh, tp.bind(w_g)), tp.bind(b_g)));
        Var m_next = tp.add(tp.mul(f, m), tp.mul(i, g));
        Var h_next = tp.mul(o, tp.tanh_op(m_next));
        return {h_next, m_next};
    }

private:
    void check_vec(Tape& tp, Var v, int expect, const char* what) const {
        const Tensor& t = tp.value(v);
        if (t.ndim() != 1 || t.dim(0) != expect) {
            throw DimensionError(std::string("lstm_step: ") + what + " has shape " +
                                 t.shape_str() + ", expected {" + std::to_string(expect) + "}");
        }
    }
};

// Elementwise affine parameters for layer normalization.
struct LayerNormParams {
    Tensor gain;
    Tensor bias;

    LayerNormParams() = default;
    explicit LayerNormParams(int d) : gain(Tensor::full({d}, 1.0)), bias(Tensor::zeros({d})) {}

    void register_params(ParamList& params, const std::string& prefix) {
        params.add(prefix + ".gain", gain);
        params.add(prefix + ".bias", bias);
    }

    Var apply(Tape& tp, Var x) const { return tp.layer_norm(x, tp.bind(gain), tp.bind(bias)); }
};

} // namespace aat
