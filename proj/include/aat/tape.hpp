#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aat/errors.hpp"
#include "aat/tensor.hpp"

namespace aat {

// Handle to a node on a Tape. Only meaningful for the tape that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/**
 * Reverse-mode autodiff tape. Every forward op appends one node holding the
 * op kind, input ids and the output value; backward() walks the nodes in
 * reverse and accumulates gradients through per-op rules.
 *
 * Nodes are appended in execution order, so inputs always precede their
 * consumers. A tape is confined to one execution context; independent tapes
 * may run concurrently.
 */
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    struct Node {
        const char* op;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;
        BackwardFn backward;
    };

    Var leaf(Tensor value) { return push("leaf", {}, std::move(value), nullptr); }

    Var constant(double v) { return leaf(Tensor::scalar(v)); }

    // Registers an external tensor (typically a parameter) as a leaf. Repeated
    // binds of the same tensor return the same node so gradients accumulate
    // across all uses within the tape.
    Var bind(const Tensor& t) {
        auto it = bound_.find(&t);
        if (it != bound_.end()) return Var{it->second};
        Var v = leaf(t);
        bound_.emplace(&t, v.id);
        return v;
    }

    std::size_t size() const { return nodes_.size(); }

    const Tensor& value(Var v) const { return node(v.id).value; }

    const Tensor& grad(Var v) const {
        const Node& n = node(v.id);
        if (n.grad.numel() == 0) throw ContractError("tape: backward() has not run");
        return n.grad;
    }

    // Gradient for a bound external tensor, or nullptr if it was never bound.
    const Tensor* grad_of(const Tensor& t) const {
        auto it = bound_.find(&t);
        if (it == bound_.end()) return nullptr;
        return &grad(Var{it->second});
    }

    // ---- arithmetic ----

    Var add(Var a, Var b) { return eltwise_binary("add", a, b,
        [](double x, double y) { return x + y; },
        [](Tape& tp, int self) {
            const Node& n = tp.node(self);
            tp.accumulate(n.inputs[0], n.grad.data);
            tp.accumulate(n.inputs[1], n.grad.data);
        }); }

    Var sub(Var a, Var b) { return eltwise_binary("sub", a, b,
        [](double x, double y) { return x - y; },
        [](Tape& tp, int self) {
            const Node& n = tp.node(self);
            tp.accumulate(n.inputs[0], n.grad.data);
            Tensor& gb = tp.grad_buf(n.inputs[1]);
            for (std::size_t i = 0; i < gb.numel(); ++i) gb.data[i] -= n.grad.data[i];
        }); }

    Var mul(Var a, Var b) { return eltwise_binary("mul", a, b,
        [](double x, double y) { return x * y; },
        [](Tape& tp, int self) {
            const Node& n = tp.node(self);
            const Tensor& av = tp.node(n.inputs[0]).value;
            const Tensor& bv = tp.node(n.inputs[1]).value;
            Tensor& ga = tp.grad_buf(n.inputs[0]);
            Tensor& gb = tp.grad_buf(n.inputs[1]);
            for (std::size_t i = 0; i < av.numel(); ++i) {
                ga.data[i] += n.grad.data[i] * bv.data[i];
                gb.data[i] += n.grad.data[i] * av.data[i];
            }
        }); }

    Var div(Var a, Var b) { return eltwise_binary("div", a, b,
        [](double x, double y) { return x / y; },
        [](Tape& tp, int self) {
            const Node& n = tp.node(self);
            const Tensor& av = tp.node(n.inputs[0]).value;
            const Tensor& bv = tp.node(n.inputs[1]).value;
            Tensor& ga = tp.grad_buf(n.inputs[0]);
            Tensor& gb = tp.grad_buf(n.inputs[1]);
            for (std::size_t i = 0; i < av.numel(); ++i) {
                ga.data[i] += n.grad.data[i] / bv.data[i];
                gb.data[i] -= n.grad.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
            }
        }); }

    // out = x * c for a compile-time-known constant c (no gradient into c).
    Var scale(Var x, double c) {
        Tensor out = value(x);
        for (double& v : out.data) v *= c;
        return push("scale", {x.id}, std::move(out),
            [c](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += c * n.grad.data[i];
            });
    }

    // out = x * s where s is a {1} scalar node; gradients flow into both.
    Var scale_by(Var x, Var s) {
        const Tensor& xv = value(x);
        const Tensor& sv = value(s);
        if (!sv.is_scalar()) throw DimensionError("scale_by: scale must be {1}, got " + sv.shape_str());
        Tensor out = xv;
        for (double& v : out.data) v *= sv.data[0];
        return push("scale_by", {x.id, s.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                const Tensor& xv2 = tp.node(n.inputs[0]).value;
                double s2 = tp.node(n.inputs[1]).value.data[0];
                Tensor& gx = tp.grad_buf(n.inputs[0]);
                Tensor& gs = tp.grad_buf(n.inputs[1]);
                double acc = 0.0;
                for (std::size_t i = 0; i < xv2.numel(); ++i) {
                    gx.data[i] += s2 * n.grad.data[i];
                    acc += n.grad.data[i] * xv2.data[i];
                }
                gs.data[0] += acc;
            });
    }

    Var one_minus(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = 1.0 - v;
        return push("one_minus", {x.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] -= n.grad.data[i];
            });
    }

    // ---- linear algebra ----

    // {m,k}x{k,n}->{m,n}, {k}x{k,n}->{n}, {m,k}x{k}->{m}
    Var matmul(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.ndim() == 2 && bv.ndim() == 2) {
            if (av.cols() != bv.rows()) matmul_error(av, bv);
            Tensor out = Tensor::zeros({av.rows(), bv.cols()});
            gemm(av.data.data(), bv.data.data(), out.data.data(), av.rows(), av.cols(), bv.cols(),
                 false, false);
            return push("matmul", {a.id, b.id}, std::move(out),
                [](Tape& tp, int self) {
                    const Node& n = tp.node(self);
                    const Tensor& A = tp.node(n.inputs[0]).value;
                    const Tensor& B = tp.node(n.inputs[1]).value;
                    Tensor& gA = tp.grad_buf(n.inputs[0]);
                    Tensor& gB = tp.grad_buf(n.inputs[1]);
                    // dA = g Bt, dB = At g
                    gemm(n.grad.data.data(), B.data.data(), gA.data.data(), A.rows(), B.cols(),
                         A.cols(), false, true);
                    gemm(A.data.data(), n.grad.data.data(), gB.data.data(), A.cols(), A.rows(),
                         B.cols(), true, false);
                });
        }
        if (av.ndim() == 1 && bv.ndim() == 2) {
            if (av.dim(0) != bv.rows()) matmul_error(av, bv);
            int k = bv.rows(), nn = bv.cols();
            Tensor out = Tensor::zeros({nn});
            for (int i = 0; i < k; ++i) {
                double s = av.data[static_cast<std::size_t>(i)];
                for (int j = 0; j < nn; ++j) out.data[static_cast<std::size_t>(j)] += s * bv.at(i, j);
            }
            return push("matmul", {a.id, b.id}, std::move(out),
                [](Tape& tp, int self) {
                    const Node& n = tp.node(self);
                    const Tensor& xv = tp.node(n.inputs[0]).value;
                    const Tensor& B = tp.node(n.inputs[1]).value;
                    Tensor& gx = tp.grad_buf(n.inputs[0]);
                    Tensor& gB = tp.grad_buf(n.inputs[1]);
                    int k2 = B.rows(), n2 = B.cols();
                    for (int i = 0; i < k2; ++i) {
                        double acc = 0.0;
                        for (int j = 0; j < n2; ++j) {
                            acc += n.grad.data[static_cast<std::size_t>(j)] * B.at(i, j);
                            gB.at(i, j) += xv.data[static_cast<std::size_t>(i)] *
                                           n.grad.data[static_cast<std::size_t>(j)];
                        }
                        gx.data[static_cast<std::size_t>(i)] += acc;
                    }
                });
        }
        if (av.ndim() == 2 && bv.ndim() == 1) {
            if (av.cols() != bv.dim(0)) matmul_error(av, bv);
            int m = av.rows(), k = av.cols();
            Tensor out = Tensor::zeros({m});
            for (int i = 0; i < m; ++i) {
                double acc = 0.0;
                for (int j = 0; j < k; ++j) acc += av.at(i, j) * bv.data[static_cast<std::size_t>(j)];
                out.data[static_cast<std::size_t>(i)] = acc;
            }
            return push("matmul", {a.id, b.id}, std::move(out),
                [](Tape& tp, int self) {
                    const Node& n = tp.node(self);
                    const Tensor& A = tp.node(n.inputs[0]).value;
                    const Tensor& xv = tp.node(n.inputs[1]).value;
                    Tensor& gA = tp.grad_buf(n.inputs[0]);
                    Tensor& gx = tp.grad_buf(n.inputs[1]);
                    int m2 = A.rows(), k2 = A.cols();
                    for (int i = 0; i < m2; ++i) {
                        double gi = n.grad.data[static_cast<std::size_t>(i)];
                        for (int j = 0; j < k2; ++j) {
                            gA.at(i, j) += gi * xv.data[static_cast<std::size_t>(j)];
                            gx.data[static_cast<std::size_t>(j)] += gi * A.at(i, j);
                        }
                    }
                });
        }
        matmul_error(av, bv);
        return Var{};
    }

    Var dot(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.ndim() != 1 || !av.same_shape(bv)) {
            throw DimensionError("dot: shapes " + av.shape_str() + " and " + bv.shape_str());
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < av.numel(); ++i) acc += av.data[i] * bv.data[i];
        return push("dot", {a.id, b.id}, Tensor::scalar(acc),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                const Tensor& av2 = tp.node(n.inputs[0]).value;
                const Tensor& bv2 = tp.node(n.inputs[1]).value;
                Tensor& ga = tp.grad_buf(n.inputs[0]);
                Tensor& gb = tp.grad_buf(n.inputs[1]);
                double g = n.grad.data[0];
                for (std::size_t i = 0; i < av2.numel(); ++i) {
                    ga.data[i] += g * bv2.data[i];
                    gb.data[i] += g * av2.data[i];
                }
            });
    }

    Var sum(Var x) {
        const Tensor& xv = value(x);
        double acc = 0.0;
        for (double v : xv.data) acc += v;
        return push("sum", {x.id}, Tensor::scalar(acc),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                double gv = n.grad.data[0];
                for (double& v : g.data) v += gv;
            });
    }

    // Adds a row vector to every row of a matrix (bias broadcast).
    Var add_row_broadcast(Var m, Var v) {
        const Tensor& mv = value(m);
        const Tensor& vv = value(v);
        if (mv.ndim() != 2 || vv.ndim() != 1 || mv.cols() != vv.dim(0)) {
            throw DimensionError("add_row_broadcast: shapes " + mv.shape_str() + " and " +
                                 vv.shape_str());
        }
        Tensor out = mv;
        for (int r = 0; r < mv.rows(); ++r)
            for (int c = 0; c < mv.cols(); ++c) out.at(r, c) += vv.data[static_cast<std::size_t>(c)];
        return push("add_row_broadcast", {m.id, v.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& gm = tp.grad_buf(n.inputs[0]);
                Tensor& gv = tp.grad_buf(n.inputs[1]);
                tp.accumulate(n.inputs[0], n.grad.data);
                for (int r = 0; r < gm.rows(); ++r)
                    for (int c = 0; c < gm.cols(); ++c)
                        gv.data[static_cast<std::size_t>(c)] += n.grad.at(r, c);
            });
    }

    Var mean_rows(Var m) {
        const Tensor& mv = value(m);
        if (mv.ndim() != 2 || mv.rows() < 1) {
            throw DimensionError("mean_rows: need a nonempty matrix, got " + mv.shape_str());
        }
        int r = mv.rows(), c = mv.cols();
        Tensor out = Tensor::zeros({c});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out.data[static_cast<std::size_t>(j)] += mv.at(i, j);
        for (double& v : out.data) v /= r;
        return push("mean_rows", {m.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& gm = tp.grad_buf(n.inputs[0]);
                int r2 = gm.rows(), c2 = gm.cols();
                for (int i = 0; i < r2; ++i)
                    for (int j = 0; j < c2; ++j)
                        gm.at(i, j) += n.grad.data[static_cast<std::size_t>(j)] / r2;
            });
    }

    // ---- rearrangement ----

    Var concat(Var a, Var b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.ndim() != 1 || bv.ndim() != 1) {
            throw DimensionError("concat: expects vectors, got " + av.shape_str() + " and " +
                                 bv.shape_str());
        }
        Tensor out = Tensor::zeros({av.dim(0) + bv.dim(0)});
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.dim(0));
        return push("concat", {a.id, b.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& ga = tp.grad_buf(n.inputs[0]);
                Tensor& gb = tp.grad_buf(n.inputs[1]);
                std::size_t na = ga.numel();
                for (std::size_t i = 0; i < na; ++i) ga.data[i] += n.grad.data[i];
                for (std::size_t i = 0; i < gb.numel(); ++i) gb.data[i] += n.grad.data[na + i];
            });
    }

    Var slice(Var x, int offset, int len) {
        const Tensor& xv = value(x);
        if (xv.ndim() != 1 || offset < 0 || len < 1 || offset + len > xv.dim(0)) {
            throw DimensionError("slice: [" + std::to_string(offset) + "," +
                                 std::to_string(offset + len) + ") of " + xv.shape_str());
        }
        Tensor out({len}, std::vector<double>(xv.data.begin() + offset,
                                              xv.data.begin() + offset + len));
        return push("slice", {x.id}, std::move(out),
            [offset, len](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                for (int i = 0; i < len; ++i)
                    g.data[static_cast<std::size_t>(offset + i)] += n.grad.data[static_cast<std::size_t>(i)];
            });
    }

    Var slice_cols(Var m, int offset, int len) {
        const Tensor& mv = value(m);
        if (mv.ndim() != 2 || offset < 0 || len < 1 || offset + len > mv.cols()) {
            throw DimensionError("slice_cols: [" + std::to_string(offset) + "," +
                                 std::to_string(offset + len) + ") of " + mv.shape_str());
        }
        Tensor out = Tensor::zeros({mv.rows(), len});
        for (int r = 0; r < mv.rows(); ++r)
            for (int c = 0; c < len; ++c) out.at(r, c) = mv.at(r, offset + c);
        return push("slice_cols", {m.id}, std::move(out),
            [offset, len](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                for (int r = 0; r < g.rows(); ++r)
                    for (int c = 0; c < len; ++c) g.at(r, offset + c) += n.grad.at(r, c);
            });
    }

    // Row lookup (embedding); gradient flows only into the selected row.
    Var row(Var m, int index) {
        const Tensor& mv = value(m);
        if (mv.ndim() != 2) throw DimensionError("row: expects a matrix, got " + mv.shape_str());
        if (index < 0 || index >= mv.rows()) {
            throw LookupError("row: index " + std::to_string(index) + " out of " +
                              std::to_string(mv.rows()));
        }
        int c = mv.cols();
        Tensor out({c}, std::vector<double>(mv.data.begin() + static_cast<std::size_t>(index) * c,
                                            mv.data.begin() + static_cast<std::size_t>(index + 1) * c));
        return push("row", {m.id}, std::move(out),
            [index](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                int c2 = g.cols();
                for (int j = 0; j < c2; ++j)
                    g.at(index, j) += n.grad.data[static_cast<std::size_t>(j)];
            });
    }

    Var pick(Var x, int index) {
        const Tensor& xv = value(x);
        if (xv.ndim() != 1) throw DimensionError("pick: expects a vector, got " + xv.shape_str());
        if (index < 0 || index >= xv.dim(0)) {
            throw LookupError("pick: index " + std::to_string(index) + " out of " +
                              std::to_string(xv.dim(0)));
        }
        return push("pick", {x.id}, Tensor::scalar(xv.data[static_cast<std::size_t>(index)]),
            [index](Tape& tp, int self) {
                const Node& n = tp.node(self);
                tp.grad_buf(n.inputs[0]).data[static_cast<std::size_t>(index)] += n.grad.data[0];
            });
    }

    // ---- nonlinearities ----

    Var sigmoid(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = stable_sigmoid(v);
        return push("sigmoid", {x.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    double y = n.value.data[i];
                    g.data[i] += n.grad.data[i] * y * (1.0 - y);
                }
            });
    }

    Var tanh_op(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = std::tanh(v);
        return push("tanh", {x.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    double y = n.value.data[i];
                    g.data[i] += n.grad.data[i] * (1.0 - y * y);
                }
            });
    }

    Var relu(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push("relu", {x.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                const Tensor& xv = tp.node(n.inputs[0]).value;
                Tensor& g = tp.grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (xv.data[i] > 0.0) g.data[i] += n.grad.data[i];
            });
    }

    // Max-subtracted softmax over a vector; output sums to 1 within 1e-12.
    Var softmax(Var x) {
        const Tensor& xv = value(x);
        if (xv.ndim() != 1 || xv.dim(0) < 1) {
            throw std::domain_error("softmax: need a nonempty vector, got " + xv.shape_str());
        }
        double mx = *std::max_element(xv.data.begin(), xv.data.end());
        Tensor out = xv;
        double s = 0.0;
        for (double& v : out.data) {
            v = std::exp(v - mx);
            s += v;
        }
        for (double& v : out.data) v /= s;
        return push("softmax", {x.id}, std::move(out),
            [](Tape& tp, int self) {
                const Node& n = tp.node(self);
                Tensor& g = tp.grad_buf(n.inputs[0]);
                double inner = 0.0;
                for (std::size_t i = 0; i < n.value.numel(); ++i)
                    inner += n.grad.data[i] * n.value.data[i];
                for (std::size_t i = 0; i < n.value.numel(); ++i)
                    g.data[i] += n.value.data[i] * (n.grad.data[i] - inner);
            });
    }

    // log(max(x, floor)); zero gradient where the clamp is active.
    Var log_clamped(Var x, double floor = 1e-12) {
        Tensor out = value(x);
        for (double& v : out.data) v = std::log(std::max(v, floor));
        return push("log_clamped", {x.id}, std::move(out),
            [floor](Tape& tp, int self) {
                const Node& n = tp.node(self);
                const Tensor& xv = tp.node(n.inputs[0]).value;
                Tensor& g = tp.grad_buf(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (xv.data[i] > floor) g.data[i] += n.grad.data[i] / xv.data[i];
            });
    }

    // out = gain * (x - mean)/sqrt(var + 1e-5) + bias, population variance.
    Var layer_norm(Var x, Var gain, Var bias) {
        const Tensor& xv = value(x);
        const Tensor& gv = value(gain);
        const Tensor& bv = value(bias);
        if (xv.ndim() != 1 || xv.dim(0) < 2) {
            throw std::domain_error("layer_norm: need a vector of length >= 2, got " +
                                    xv.shape_str());
        }
        if (!xv.same_shape(gv) || !xv.same_shape(bv)) {
            throw DimensionError("layer_norm: shapes " + xv.shape_str() + ", " + gv.shape_str() +
                                 ", " + bv.shape_str());
        }
        int d = xv.dim(0);
        double mean = 0.0;
        for (double v : xv.data) mean += v;
        mean /= d;
        double var = 0.0;
        for (double v : xv.data) var += (v - mean) * (v - mean);
        var /= d;
        double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
        Tensor out = xv;
        for (int i = 0; i < d; ++i) {
            std::size_t s = static_cast<std::size_t>(i);
            out.data[s] = gv.data[s] * (xv.data[s] - mean) * inv_sigma + bv.data[s];
        }
        return push("layer_norm", {x.id, gain.id, bias.id}, std::move(out),
            [mean, inv_sigma](Tape& tp, int self) {
                const Node& n = tp.node(self);
                const Tensor& xv2 = tp.node(n.inputs[0]).value;
                const Tensor& gv2 = tp.node(n.inputs[1]).value;
                Tensor& gx = tp.grad_buf(n.inputs[0]);
                Tensor& gg = tp.grad_buf(n.inputs[1]);
                Tensor& gb = tp.grad_buf(n.inputs[2]);
                int d2 = xv2.dim(0);
                double m_gy = 0.0, m_gyx = 0.0;
                for (int i = 0; i < d2; ++i) {
                    std::size_t s = static_cast<std::size_t>(i);
                    double xhat = (xv2.data[s] - mean) * inv_sigma;
                    double gy = n.grad.data[s] * gv2.data[s];
                    gg.data[s] += n.grad.data[s] * xhat;
                    gb.data[s] += n.grad.data[s];
                    m_gy += gy;
                    m_gyx += gy * xhat;
                }
                m_gy /= d2;
                m_gyx /= d2;
                for (int i = 0; i < d2; ++i) {
                    std::size_t s = static_cast<std::size_t>(i);
                    double xhat = (xv2.data[s] - mean) * inv_sigma;
                    double gy = n.grad.data[s] * gv2.data[s];
                    gx.data[s] += inv_sigma * (gy - m_gy - xhat * m_gyx);
                }
            });
    }

    // Identity in the forward pass; receives a gradient and propagates zero.
    Var stop_grad(Var x) {
        return push("stop_grad", {x.id}, value(x), nullptr);
    }

    // ---- backward ----

    void backward(Var loss) {
        const Node& ln = node(loss.id);
        if (!ln.value.is_scalar()) {
            throw ContractError("backward: loss must be a scalar, got shape " +
                                ln.value.shape_str());
        }
        for (Node& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
        nodes_[static_cast<std::size_t>(loss.id)].grad.data[0] = 1.0;
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backward) n.backward(*this, i);
        }
    }

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    Tensor& grad_buf(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }

    static constexpr double kLayerNormEps = 1e-5;

private:
    Var push(const char* op, std::vector<int> inputs, Tensor value, BackwardFn fn) {
        nodes_.push_back(Node{op, std::move(inputs), std::move(value), Tensor{}, std::move(fn)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    template <typename FwdFn>
    Var eltwise_binary(const char* op, Var a, Var b, FwdFn fwd, BackwardFn back) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (!av.same_shape(bv)) {
            throw DimensionError(std::string(op) + ": shapes " + av.shape_str() + " and " +
                                 bv.shape_str());
        }
        Tensor out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = fwd(av.data[i], bv.data[i]);
        return push(op, {a.id, b.id}, std::move(out), std::move(back));
    }

    void accumulate(int id, const std::vector<double>& g) {
        Tensor& buf = grad_buf(id);
        for (std::size_t i = 0; i < g.size(); ++i) buf.data[i] += g[i];
    }

    static double stable_sigmoid(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
    }

    // C = A*B with optional transposes, accumulating into C. Dimensions are
    // those of the (possibly transposed) operands: C is m x n, inner dim k.
    static void gemm(const double* a, const double* b, double* c, int m, int k, int n,
                     bool trans_a, bool trans_b) {
        for (int i = 0; i < m; ++i) {
            for (int l = 0; l < k; ++l) {
                double av = trans_a ? a[static_cast<std::size_t>(l) * m + i]
                                    : a[static_cast<std::size_t>(i) * k + l];
                if (av == 0.0) continue;
                const double* brow = trans_b ? b + l : b + static_cast<std::size_t>(l) * n;
                double* crow = c + static_cast<std::size_t>(i) * n;
                if (trans_b) {
                    for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::size_t>(j) * k + l];
                } else {
                    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
            }
        }
    }

    [[noreturn]] static void matmul_error(const Tensor& a, const Tensor& b) {
        throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " and " +
                             b.shape_str());
    }

    // deque: references returned by value()/grad() stay valid as ops append
    std::deque<Node> nodes_;
    std::unordered_map<const Tensor*, int> bound_;
};

} // namespace aat
