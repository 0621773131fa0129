#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "aat/decoder.hpp"
#include "aat/metrics.hpp"
#include "aat/synth.hpp"

namespace aat {

// ---- optimizer ----

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long step = 0;

    static AdamState for_params(const ParamList& params) {
        AdamState s;
        for (const auto& e : params.entries()) {
            s.m.push_back(Tensor::zeros(e.tensor->shape));
            s.v.push_back(Tensor::zeros(e.tensor->shape));
        }
        return s;
    }
};

// Standard bias-corrected Adam update, in parameter registration order.
inline void adam_step(ParamList& params, const std::vector<Tensor>& grads, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw DimensionError("adam: params/grads/state sizes disagree");
    }
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        const Tensor& g = grads[i];
        if (g.shape != p.shape) {
            throw DimensionError("adam: gradient shape " + g.shape_str() + " vs parameter " +
                                 p.shape_str() + " for " + params[i].name);
        }
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m.data[j] = beta1 * m.data[j] + (1.0 - beta1) * g.data[j];
            v.data[j] = beta2 * v.data[j] + (1.0 - beta2) * g.data[j] * g.data[j];
            double m_hat = m.data[j] / bc1;
            double v_hat = v.data[j] / bc2;
            p.data[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

// lr0 * decay^floor(epoch / every)
inline double lr_schedule(int epoch, double lr0, double decay = 0.8, int every = 2) {
    if (epoch < 0) throw ConfigError("lr_schedule: epoch must be >= 0");
    return lr0 * std::pow(decay, static_cast<double>(epoch / every));
}

// min(cap, step * floor(epoch / every))
inline double scheduled_sampling_prob(int epoch, double step = 0.05, int every = 3,
                                      double cap = 0.25) {
    if (epoch < 0) throw ConfigError("scheduled_sampling_prob: epoch must be >= 0");
    return std::min(cap, step * static_cast<double>(epoch / every));
}

// ---- gradient plumbing ----

inline double global_norm(const std::vector<Tensor>& grads) {
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (double v : g.data) sq += v * v;
    return std::sqrt(sq);
}

inline void clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    double norm = global_norm(grads);
    if (norm <= max_norm || norm == 0.0) return;
    double scale = max_norm / norm;
    for (Tensor& g : grads)
        for (double& v : g.data) v *= scale;
}

// ---- training loop ----

struct TrainConfig {
    int epochs = 10;
    int batch_size = 10;
    double lr0 = 1e-4;
    double lr_decay = 0.8;
    int lr_every = 2;
    double ss_step = 0.05;
    int ss_every = 3;
    double ss_cap = 0.25;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    int eval_max_len = 16;
    std::string log_path;        // line-delimited JSON records, optional
    std::string checkpoint_path; // best-validation-loss checkpoint, optional
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0; // mean per token, cross-entropy + ponder
    double train_ce = 0.0;
    double train_ponder = 0.0;
    double train_acc = 0.0;
    double train_mean_steps = 0.0;
    double val_loss = 0.0;
    double val_ce = 0.0;
    double val_ponder = 0.0;
    double val_acc = 0.0;
    double val_bleu4 = 0.0;
    double val_mean_steps = 0.0;
    double lr = 0.0;
    double ss_prob = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    double best_val_loss = 0.0;
    int best_epoch = -1;
};

struct ValStats {
    double loss = 0.0;
    double ce = 0.0;
    double ponder = 0.0;
    double acc = 0.0;
    double bleu4 = 0.0;
    double mean_steps = 0.0;
};

inline ValStats evaluate_split(const Model& model, const Dataset& data, int eval_max_len) {
    ValStats v;
    long tokens = 0, correct = 0;
    std::vector<std::vector<std::string>> hyps, refs;
    std::vector<HaltingTrace> traces;
    for (const SynthInstance& inst : data.instances) {
        Tape tp;
        Model::TeacherForcedResult tf = model.teacher_forced(tp, inst.features, inst.target);
        v.ce += tf.ce_sum;
        v.ponder += tf.ponder_sum;
        tokens += tf.tokens;
        correct += tf.correct;
        Tape tg;
        Model::GreedyResult greedy = model.greedy_decode(tg, inst.features, eval_max_len);
        std::vector<std::string> hyp, ref;
        for (int id : greedy.tokens) hyp.push_back(data.vocab.token(id));
        for (int id : inst.target) ref.push_back(data.vocab.token(id));
        hyps.push_back(std::move(hyp));
        refs.push_back(std::move(ref));
        traces.push_back(std::move(greedy.trace));
    }
    if (tokens == 0) throw MetricError("evaluate: empty split");
    v.ce /= static_cast<double>(tokens);
    v.ponder /= static_cast<double>(tokens);
    v.loss = v.ce + v.ponder;
    v.acc = static_cast<double>(correct) / static_cast<double>(tokens);
    v.bleu4 = bleu(hyps, refs, 4).back();
    v.mean_steps = attention_stats(traces).mean_steps;
    return v;
}

namespace train_detail {

inline void log_record(std::ofstream& os, const EpochStats& s, const char* split) {
    if (!os.is_open()) return;
    bool val = std::string(split) == "val";
    nlohmann::json j{{"epoch", s.epoch},
                     {"split", split},
                     {"loss", val ? s.val_loss : s.train_loss},
                     {"ponder", val ? s.val_ponder : s.train_ponder},
                     {"mean_steps", val ? s.val_mean_steps : s.train_mean_steps},
                     {"acc", val ? s.val_acc : s.train_acc},
                     {"lr", s.lr},
                     {"ss_prob", s.ss_prob}};
    if (val) j["bleu4"] = s.val_bleu4;
    os << j.dump() << "\n";
}

} // namespace train_detail

// Cross-entropy (+ ponder) training with Adam, learning-rate annealing and
// scheduled sampling. Batches are realized by accumulating single-instance
// gradients; the batch gradient is the mean. Aborts on non-finite loss.
inline TrainResult train(Model& model, const Dataset& train_data, const Dataset& val_data,
                         const TrainConfig& cfg) {
    if (train_data.instances.empty()) throw ConfigError("train: empty training set");
    if (train_data.vocab.size() != model.config().vocab_size) {
        throw ConfigError("train: vocab size " + std::to_string(train_data.vocab.size()) +
                          " != model vocab " + std::to_string(model.config().vocab_size));
    }
    Rng rng(cfg.seed);
    AdamState adam = AdamState::for_params(model.params());
    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        if (!log) throw FormatError("train: cannot open log " + cfg.log_path);
    }

    TrainResult result;
    std::vector<std::size_t> order(train_data.instances.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<Tensor> grad_acc;
    for (const auto& e : model.params().entries()) grad_acc.push_back(Tensor::zeros(e.tensor->shape));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = lr_schedule(epoch, cfg.lr0, cfg.lr_decay, cfg.lr_every);
        double ss = scheduled_sampling_prob(epoch, cfg.ss_step, cfg.ss_every, cfg.ss_cap);
        std::shuffle(order.begin(), order.end(), rng.raw());

        double ce_sum = 0.0, ponder_sum = 0.0, steps_sum = 0.0;
        long tokens = 0, correct = 0, step_records = 0;
        std::size_t batch_fill = 0;

        auto flush_batch = [&]() {
            if (batch_fill == 0) return;
            for (Tensor& g : grad_acc)
                for (double& v : g.data) v /= static_cast<double>(batch_fill);
            clip_global_norm(grad_acc, cfg.clip_norm);
            adam_step(model.params(), grad_acc, adam, lr);
            for (Tensor& g : grad_acc) std::fill(g.data.begin(), g.data.end(), 0.0);
            batch_fill = 0;
        };

        for (std::size_t idx : order) {
            const SynthInstance& inst = train_data.instances[idx];
            Tape tp;
            Model::TeacherForcedResult tf =
                model.teacher_forced(tp, inst.features, inst.target, ss, &rng);
            double loss = tp.value(tf.loss).data[0];
            if (!std::isfinite(loss)) {
                throw TrainingDiverged("train: non-finite loss at epoch " +
                                       std::to_string(epoch) + ", instance " + std::to_string(idx));
            }
            tp.backward(tf.loss);
            const auto& entries = model.params().entries();
            for (std::size_t i = 0; i < entries.size(); ++i) {
                if (const Tensor* g = tp.grad_of(*entries[i].tensor)) {
                    for (std::size_t j = 0; j < g->numel(); ++j) grad_acc[i].data[j] += g->data[j];
                }
            }
            ce_sum += tf.ce_sum;
            ponder_sum += tf.ponder_sum;
            tokens += tf.tokens;
            correct += tf.correct;
            for (const StepTrace& s : tf.trace) steps_sum += s.n_steps;
            step_records += static_cast<long>(tf.trace.size());
            if (++batch_fill == static_cast<std::size_t>(cfg.batch_size)) flush_batch();
        }
        flush_batch();

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.ss_prob = ss;
        stats.train_ce = ce_sum / static_cast<double>(tokens);
        stats.train_ponder = ponder_sum / static_cast<double>(tokens);
        stats.train_loss = stats.train_ce + stats.train_ponder;
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(tokens);
        stats.train_mean_steps = steps_sum / static_cast<double>(step_records);

        if (!val_data.instances.empty()) {
            ValStats v = evaluate_split(model, val_data, cfg.eval_max_len);
            stats.val_loss = v.loss;
            stats.val_ce = v.ce;
            stats.val_ponder = v.ponder;
            stats.val_acc = v.acc;
            stats.val_bleu4 = v.bleu4;
            stats.val_mean_steps = v.mean_steps;
            if (result.best_epoch < 0 || v.loss < result.best_val_loss) {
                result.best_val_loss = v.loss;
                result.best_epoch = epoch;
                if (!cfg.checkpoint_path.empty()) {
                    save_checkpoint(cfg.checkpoint_path, model, train_data.vocab);
                }
            }
        }
        train_detail::log_record(log, stats, "train");
        if (!val_data.instances.empty()) train_detail::log_record(log, stats, "val");
        result.epochs.push_back(stats);
    }
    // a model that never beat anything still gets checkpointed once
    if (result.best_epoch < 0 && !cfg.checkpoint_path.empty()) {
        save_checkpoint(cfg.checkpoint_path, model, train_data.vocab);
    }
    return result;
}

} // namespace aat
