#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aat/attention.hpp"
#include "aat/halting.hpp"
#include "aat/nn.hpp"
#include "aat/serialize.hpp"
#include "aat/synth.hpp"
#include "aat/tape.hpp"

namespace aat {

enum class Mode { base, recurrent, adaptive };

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::base: return "base";
        case Mode::recurrent: return "recurrent";
        case Mode::adaptive: return "adaptive";
    }
    return "?";
}

inline Mode mode_from_string(const std::string& s) {
    if (s == "base") return Mode::base;
    if (s == "recurrent") return Mode::recurrent;
    if (s == "adaptive") return Mode::adaptive;
    throw ConfigError("unknown mode '" + s + "'");
}

inline AttentionKind attention_kind_from_string(const std::string& s) {
    if (s == "additive") return AttentionKind::additive;
    if (s == "dot_product") return AttentionKind::dot_product;
    throw ConfigError("unknown attention kind '" + s + "'");
}

struct ModelConfig {
    int d = 64;           // hidden/embedding size
    int feature_dim = 32; // raw region feature dimension (projected to d)
    int vocab_size = 0;
    AttentionConfig attention;
    Mode mode = Mode::base;
    int m_r = 1;   // recurrent attention steps
    int m_min = 0; // adaptive minimum attention steps
    int m_max = 4; // adaptive maximum attention steps
    double epsilon = 1e-4;
    double lambda = 0.0;
    bool layer_norm = true; // normalize inner states in adaptive mode

    static ModelConfig make(int d, int feature_dim, int vocab_size, Mode mode,
                            AttentionKind kind = AttentionKind::additive, int heads = 1) {
        ModelConfig cfg;
        cfg.d = d;
        cfg.feature_dim = feature_dim;
        cfg.vocab_size = vocab_size;
        cfg.mode = mode;
        cfg.attention = AttentionConfig{kind, heads, d, d, d};
        return cfg;
    }

    void validate() const {
        if (d < 2) throw ConfigError("config: d must be >= 2");
        if (feature_dim < 1) throw ConfigError("config: feature_dim must be >= 1");
        if (vocab_size < 5) throw ConfigError("config: vocab too small");
        attention.validate();
        if (attention.query_dim != d || attention.key_dim != d || attention.value_dim != d) {
            throw ConfigError("config: attention dimensions must equal d");
        }
        if (mode == Mode::base && m_r != 1) {
            throw ConfigError("config: base mode requires m_r = 1");
        }
        if (m_r < 1) throw ConfigError("config: m_r must be >= 1");
        if (mode == Mode::adaptive) {
            if (m_min < 0 || m_max < 1 || m_min > m_max) {
                throw ConfigError("config: need 0 <= m_min <= m_max, m_max >= 1");
            }
            if (!(epsilon > 0.0 && epsilon < 1.0)) {
                throw ConfigError("config: epsilon must be in (0,1)");
            }
        }
        if (lambda < 0.0) throw ConfigError("config: lambda must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json{{"d", cfg.d},
                       {"feature_dim", cfg.feature_dim},
                       {"vocab_size", cfg.vocab_size},
                       {"attn_kind", to_string(cfg.attention.kind)},
                       {"heads", cfg.attention.heads},
                       {"mode", to_string(cfg.mode)},
                       {"m_r", cfg.m_r},
                       {"m_min", cfg.m_min},
                       {"m_max", cfg.m_max},
                       {"epsilon", cfg.epsilon},
                       {"lambda", cfg.lambda},
                       {"layer_norm", cfg.layer_norm}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    cfg.d = j.at("d").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.mode = mode_from_string(j.at("mode").get<std::string>());
    cfg.attention = AttentionConfig{attention_kind_from_string(j.at("attn_kind").get<std::string>()),
                                    j.at("heads").get<int>(), cfg.d, cfg.d, cfg.d};
    cfg.m_r = j.at("m_r").get<int>();
    cfg.m_min = j.at("m_min").get<int>();
    cfg.m_max = j.at("m_max").get<int>();
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.lambda = j.at("lambda").get<double>();
    cfg.layer_norm = j.at("layer_norm").get<bool>();
}

// Hidden/memory pairs of both LSTM layers plus the previous context vector,
// all living on the current tape. Zero-initialized at sequence start.
struct DecoderState {
    Var h1, m1, h2, m2, c_prev;
};

// Per-decoding-step halting record.
struct StepTrace {
    int t = 0;
    int token_id = -1;
    std::string token;
    int n_steps = 0;
    std::vector<double> p;
    std::vector<double> beta_raw;
    std::vector<double> beta_norm;
    double ponder = 0.0;
};

using HaltingTrace = std::vector<StepTrace>;

struct StepOutput {
    Var dist;   // vocabulary distribution
    Var ponder; // time cost penalty for this step ({1}, zero outside adaptive mode)
    StepTrace trace;
};

/**
 * Two-layer attention decoder with three attention schedules behind one
 * state machine: base (one attention step, query = h1), recurrent (a fixed
 * number of query-chained steps) and adaptive (confidence-driven halting
 * with beta-mixed states). Base and recurrent fall out of the adaptive path
 * as special cases, which the tests exercise directly.
 */
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(seed);
        feat_proj_ = Linear(cfg_.feature_dim, cfg_.d, rng);
        embed_ = Embedding(cfg_.vocab_size, cfg_.d, rng);
        lstm1_ = LstmCell(2 * cfg_.d, cfg_.d, rng);
        lstm2_ = LstmCell(2 * cfg_.d, cfg_.d, rng);
        query_proj_ = Linear(2 * cfg_.d, cfg_.d, rng);
        attn_ = Attention(cfg_.attention, rng);
        conf_hidden_ = Linear(cfg_.d, cfg_.d, rng);
        conf_out_ = Linear(cfg_.d, 1, rng);
        ln_h_ = LayerNormParams(cfg_.d);
        ln_m_ = LayerNormParams(cfg_.d);
        out_proj_ = Linear(cfg_.d, cfg_.vocab_size, rng);

        feat_proj_.register_params(params_, "feat_proj");
        embed_.register_params(params_, "embed");
        lstm1_.register_params(params_, "lstm1");
        lstm2_.register_params(params_, "lstm2");
        query_proj_.register_params(params_, "query_proj");
        attn_.register_params(params_, "attn");
        conf_hidden_.register_params(params_, "conf_hidden");
        conf_out_.register_params(params_, "conf_out");
        ln_h_.register_params(params_, "ln_h");
        ln_m_.register_params(params_, "ln_m");
        out_proj_.register_params(params_, "out_proj");
    }

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ModelConfig& mutable_config() { return cfg_; }
    const ParamList& params() const { return params_; }
    ParamList& params() { return params_; }

    Tensor& param(const std::string& name) {
        Tensor* t = params_.find(name);
        if (!t) throw LookupError("model: no parameter '" + name + "'");
        return *t;
    }

    // Copies every parameter present in both models (matched by name).
    void copy_params_from(const Model& other) {
        for (const auto& e : params_.entries()) {
            if (const Tensor* src = other.params().find(e.name)) {
                if (src->shape == e.tensor->shape) *e.tensor = *src;
            }
        }
    }

    struct SeqCtx {
        Var features; // projected, {k, d}
        Var feat_mean;
        AttentionContext attn;
    };

    // Projects the raw features, pools their mean and zero-initializes the
    // decoder state on the given tape.
    SeqCtx begin_sequence(Tape& tp, const FeatureSet& fs, DecoderState& state) const {
        if (fs.feature_dim() != cfg_.feature_dim) {
            throw DimensionError("decode: features have dim " + std::to_string(fs.feature_dim()) +
                                 ", model expects " + std::to_string(cfg_.feature_dim));
        }
        SeqCtx ctx;
        ctx.features = feat_proj_.apply(tp, tp.leaf(fs.vectors));
        ctx.feat_mean = tp.mean_rows(ctx.features);
        ctx.attn = attn_.prepare(tp, ctx.features);
        Var zero = tp.leaf(Tensor::zeros({cfg_.d}));
        state = DecoderState{zero, zero, zero, zero, zero};
        return ctx;
    }

    // (h1, m1) <- LSTM1([embed(token), feat_mean + c_prev], (h1, m1))
    void input_step(Tape& tp, const SeqCtx& ctx, DecoderState& state, int token_id) const {
        Var x = tp.concat(embed_.lookup(tp, token_id), tp.add(ctx.feat_mean, state.c_prev));
        auto [h1, m1] = lstm1_.step(tp, x, state.h1, state.m1);
        state.h1 = h1;
        state.m1 = m1;
    }

    // q = [h1, h2_prev] Wq + bq
    Var make_query(Tape& tp, Var h1, Var h2_prev) const {
        return query_proj_.apply(tp, tp.concat(h1, h2_prev));
    }

    struct InnerStep {
        Var h2, m2;
        std::vector<Var> weights;
    };

    // One attention step: attend with the query, feed [attended, query] to
    // LSTM2; in adaptive mode the fresh states are then layer-normalized.
    InnerStep attention_step(Tape& tp, const SeqCtx& ctx, Var query, Var h2_in, Var m2_in,
                             bool normalize) const {
        Attended att = attn_.attend(tp, ctx.attn, query);
        auto [h2, m2] = lstm2_.step(tp, tp.concat(att.attended, query), h2_in, m2_in);
        if (normalize) {
            h2 = ln_h_.apply(tp, h2);
            m2 = ln_m_.apply(tp, m2);
        }
        return {h2, m2, std::move(att.head_weights)};
    }

    // p = sigmoid(relu(h W1 + b1) W2 + b2); the same weights serve every
    // inner step, including n = 0 where h is h1.
    Var confidence(Tape& tp, Var h) const {
        return tp.sigmoid(conf_out_.apply(tp, tp.relu(conf_hidden_.apply(tp, h))));
    }

    StepOutput decode_step(Tape& tp, const SeqCtx& ctx, DecoderState& state, int token_id) const {
        input_step(tp, ctx, state, token_id);
        StepOutput out;
        Var context;
        switch (cfg_.mode) {
            case Mode::base: {
                InnerStep s = attention_step(tp, ctx, state.h1, state.h2, state.m2, false);
                state.h2 = s.h2;
                state.m2 = s.m2;
                context = s.h2;
                out.ponder = tp.constant(0.0);
                out.trace.n_steps = 1;
                break;
            }
            case Mode::recurrent: {
                Var h2 = state.h2, m2 = state.m2;
                for (int n = 1; n <= cfg_.m_r; ++n) {
                    Var q = make_query(tp, state.h1, h2);
                    InnerStep s = attention_step(tp, ctx, q, h2, m2, false);
                    h2 = s.h2;
                    m2 = s.m2;
                }
                state.h2 = h2;
                state.m2 = m2;
                context = h2;
                out.ponder = tp.constant(0.0);
                out.trace.n_steps = cfg_.m_r;
                break;
            }
            case Mode::adaptive: {
                context = adaptive_attention(tp, ctx, state, out.trace, out.ponder);
                break;
            }
        }
        state.c_prev = context;
        out.dist = tp.softmax(out_proj_.apply(tp, context));
        return out;
    }

    // Confidence provider hook: maps (inner step, state) to a {1} node.
    // Tests substitute scripted sequences; the decoder uses the confidence
    // network.
    using ConfidenceFn = std::function<Var(Tape&, int n, Var h)>;

    Var adaptive_attention(Tape& tp, const SeqCtx& ctx, DecoderState& state, StepTrace& trace,
                           Var& ponder_out, const ConfidenceFn& conf_override = nullptr) const {
        ConfidenceFn conf_fn = conf_override
            ? conf_override
            : [this](Tape& t, int, Var h) { return confidence(t, h); };

        HaltingKernel kernel(cfg_.epsilon, cfg_.m_min, cfg_.m_max);
        std::vector<Var> p_vars;
        std::vector<Var> h_states = {state.h1}; // n = 0 mixes in the input module state
        std::vector<Var> m_states = {state.m2}; // and keeps the previous memory cell

        Var p0 = kernel.forced_zero(0) ? tp.constant(0.0) : conf_fn(tp, 0, state.h1);
        p_vars.push_back(p0);
        kernel.push(tp.value(p0).data[0]);

        Var h2_run = state.h2, m2_run = state.m2;
        while (!kernel.halted()) {
            int n = kernel.next_step();
            Var q = make_query(tp, state.h1, h2_run);
            InnerStep s = attention_step(tp, ctx, q, h2_run, m2_run, cfg_.layer_norm);
            h2_run = s.h2;
            m2_run = s.m2;
            h_states.push_back(h2_run);
            m_states.push_back(m2_run);
            Var pn = kernel.forced_zero(n) ? tp.constant(0.0) : conf_fn(tp, n, h2_run);
            p_vars.push_back(pn);
            kernel.push(tp.value(pn).data[0]);
        }

        HaltingResult hr = kernel.finish();

        // beta arithmetic on the tape, in the kernel's evaluation order
        std::vector<Var> beta_raw(p_vars.size());
        Var prefix = tp.constant(1.0);
        for (std::size_t n = 0; n < p_vars.size(); ++n) {
            beta_raw[n] = tp.mul(p_vars[n], prefix);
            prefix = tp.mul(prefix, tp.one_minus(p_vars[n]));
        }
        Var beta_sum = beta_raw[0];
        for (std::size_t n = 1; n < beta_raw.size(); ++n) beta_sum = tp.add(beta_sum, beta_raw[n]);

        Var h2_mixed, m2_mixed;
        for (std::size_t n = 0; n < beta_raw.size(); ++n) {
            Var beta_n = tp.div(beta_raw[n], beta_sum);
            Var h_term = tp.scale_by(h_states[n], beta_n);
            Var m_term = tp.scale_by(m_states[n], beta_n);
            h2_mixed = n == 0 ? h_term : tp.add(h2_mixed, h_term);
            m2_mixed = n == 0 ? m_term : tp.add(m2_mixed, m_term);
        }

        // L = lambda * (N + sum (n+1)(1 - p_n)); N carries no gradient
        Var acc = tp.stop_grad(tp.constant(static_cast<double>(hr.n_steps)));
        for (std::size_t n = 0; n < p_vars.size(); ++n) {
            acc = tp.add(acc, tp.scale(tp.one_minus(p_vars[n]), static_cast<double>(n + 1)));
        }
        ponder_out = tp.scale(acc, cfg_.lambda);

        state.h2 = h2_mixed;
        state.m2 = m2_mixed;

        trace.n_steps = hr.n_steps;
        trace.p = hr.confidences;
        trace.beta_raw = hr.beta_raw;
        trace.beta_norm = hr.beta_norm;
        trace.ponder = tp.value(ponder_out).data[0];
        return h2_mixed;
    }

    struct TeacherForcedResult {
        Var loss; // sum over steps of cross-entropy + ponder
        double ce_sum = 0.0;
        double ponder_sum = 0.0;
        int tokens = 0;
        int correct = 0;
        HaltingTrace trace;
    };

    // Runs BOS, y_0, ..., y_{L-1} through the decoder against targets
    // y_0, ..., y_{L-1}, EOS. With probability ss_prob the next input token
    // is sampled from the current posterior instead of the ground truth.
    TeacherForcedResult teacher_forced(Tape& tp, const FeatureSet& fs,
                                       const std::vector<int>& target, double ss_prob = 0.0,
                                       Rng* rng = nullptr) const {
        DecoderState state;
        SeqCtx ctx = begin_sequence(tp, fs, state);
        TeacherForcedResult res;
        int input = Vocab::kBos;
        for (std::size_t t = 0; t <= target.size(); ++t) {
            int expected = t < target.size() ? target[t] : Vocab::kEos;
            StepOutput out = decode_step(tp, ctx, state, input);
            Var ce = tp.scale(tp.log_clamped(tp.pick(out.dist, expected)), -1.0);
            Var step_loss = tp.add(ce, out.ponder);
            res.loss = t == 0 ? step_loss : tp.add(res.loss, step_loss);
            res.ce_sum += tp.value(ce).data[0];
            res.ponder_sum += tp.value(out.ponder).data[0];
            res.tokens += 1;
            const Tensor& dist = tp.value(out.dist);
            if (argmax(dist) == expected) res.correct += 1;
            out.trace.t = static_cast<int>(t);
            out.trace.token_id = expected;
            res.trace.push_back(std::move(out.trace));
            if (t < target.size()) {
                bool sample = rng && ss_prob > 0.0 && rng->unit() < ss_prob;
                input = sample ? rng->sample_index(dist.data) : target[t];
            }
        }
        return res;
    }

    struct GreedyResult {
        std::vector<int> tokens; // emitted ids, EOS excluded
        HaltingTrace trace;
    };

    GreedyResult greedy_decode(Tape& tp, const FeatureSet& fs, int max_len) const {
        if (max_len < 1) throw ConfigError("decode: max_len must be >= 1");
        DecoderState state;
        SeqCtx ctx = begin_sequence(tp, fs, state);
        GreedyResult res;
        int input = Vocab::kBos;
        for (int t = 0; t < max_len + 1; ++t) {
            StepOutput out = decode_step(tp, ctx, state, input);
            int emitted = argmax(tp.value(out.dist));
            out.trace.t = t;
            out.trace.token_id = emitted;
            res.trace.push_back(std::move(out.trace));
            if (emitted == Vocab::kEos || static_cast<int>(res.tokens.size()) >= max_len) break;
            res.tokens.push_back(emitted);
            input = emitted;
        }
        return res;
    }

    static int argmax(const Tensor& t) {
        int best = 0;
        for (std::size_t i = 1; i < t.numel(); ++i)
            if (t.data[i] > t.data[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
        return best;
    }

private:
    ModelConfig cfg_;
    ParamList params_;
    Linear feat_proj_;
    Embedding embed_;
    LstmCell lstm1_;
    LstmCell lstm2_;
    Linear query_proj_;
    Attention attn_;
    Linear conf_hidden_;
    Linear conf_out_;
    LayerNormParams ln_h_;
    LayerNormParams ln_m_;
    Linear out_proj_;
};

// ---- halting trace dump (line-delimited JSON) ----

inline void append_trace(std::ostream& os, int seq, const HaltingTrace& trace,
                         const Vocab* vocab = nullptr) {
    for (const StepTrace& s : trace) {
        nlohmann::json j{{"seq", seq},
                         {"t", s.t},
                         {"token_id", s.token_id},
                         {"token", vocab && s.token_id >= 0 ? vocab->token(s.token_id) : s.token},
                         {"n_steps", s.n_steps},
                         {"p", s.p},
                         {"beta_raw", s.beta_raw},
                         {"beta_norm", s.beta_norm},
                         {"ponder", s.ponder}};
        os << j.dump() << "\n";
    }
}

struct TraceRecord {
    int seq = 0;
    StepTrace step;
};

inline std::vector<TraceRecord> read_trace_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("trace: cannot open " + path.string());
    std::vector<TraceRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("trace: line " + std::to_string(line_no) + ": " + e.what());
        }
        TraceRecord r;
        r.seq = j.at("seq").get<int>();
        r.step.t = j.at("t").get<int>();
        r.step.token_id = j.at("token_id").get<int>();
        r.step.token = j.at("token").get<std::string>();
        r.step.n_steps = j.at("n_steps").get<int>();
        r.step.p = j.at("p").get<std::vector<double>>();
        r.step.beta_raw = j.at("beta_raw").get<std::vector<double>>();
        r.step.beta_norm = j.at("beta_norm").get<std::vector<double>>();
        r.step.ponder = j.at("ponder").get<double>();
        out.push_back(std::move(r));
    }
    return out;
}

// Re-checks the halting invariants on a dumped trace. Returns a list of
// violations; empty means clean.
inline std::vector<std::string> check_trace(const std::vector<TraceRecord>& records,
                                            std::optional<int> m_min = std::nullopt,
                                            std::optional<int> m_max = std::nullopt) {
    std::vector<std::string> problems;
    auto complain = [&](const TraceRecord& r, const std::string& what) {
        problems.push_back("seq " + std::to_string(r.seq) + " t " + std::to_string(r.step.t) +
                           ": " + what);
    };
    for (const TraceRecord& r : records) {
        const StepTrace& s = r.step;
        if (m_min && s.n_steps < *m_min) complain(r, "n_steps below m_min");
        if (m_max && s.n_steps > *m_max) complain(r, "n_steps above m_max");
        if (s.p.empty()) continue; // base/recurrent records carry no schedule
        if (static_cast<int>(s.p.size()) != s.n_steps + 1) complain(r, "p length != n_steps + 1");
        double sum = 0.0;
        for (double b : s.beta_norm) {
            if (b < 0.0) complain(r, "negative beta");
            sum += b;
        }
        if (std::abs(sum - 1.0) > 1e-12) complain(r, "normalized betas sum to " + std::to_string(sum));
        double prefix = 1.0;
        for (std::size_t n = 0; n < s.p.size() && n < s.beta_raw.size(); ++n) {
            double expect = s.p[n] * prefix;
            prefix *= 1.0 - s.p[n];
            if (s.beta_raw[n] != expect) {
                complain(r, "beta_raw[" + std::to_string(n) + "] inconsistent with p");
                break;
            }
        }
    }
    return problems;
}

// ---- checkpoint: config + vocab JSON header, then the parameter archive ----

inline constexpr const char* kCheckpointMagic = "AATC1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const Vocab& vocab) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
    nlohmann::json header{{"config", model.config()}, {"vocab", vocab.tokens}};
    std::string header_str = header.dump();
    os.write(kCheckpointMagic, 5);
    io::write_u32(os, kCheckpointVersion);
    io::write_u32(os, static_cast<std::uint32_t>(header_str.size()));
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    // the archive needs a mutable ParamList; reuse the model's via const_cast-free copy
    ParamList snapshot;
    std::vector<Tensor> storage;
    storage.reserve(model.params().size());
    for (const auto& e : model.params().entries()) storage.push_back(*e.tensor);
    for (std::size_t i = 0; i < storage.size(); ++i) {
        snapshot.add(model.params()[i].name, storage[i]);
    }
    write_param_archive(os, snapshot);
}

struct Checkpoint {
    ModelConfig config;
    Vocab vocab;
    std::map<std::string, Tensor> tensors;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path.string());
    std::size_t offset = 0;
    io::expect_magic(is, offset, kCheckpointMagic, "checkpoint");
    std::uint32_t version = io::read_u32(is, offset, "version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    std::uint32_t header_len = io::read_u32(is, offset, "header length");
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), header_len);
    if (!is) throw FormatError("checkpoint: truncated header at offset " + std::to_string(offset));
    Checkpoint ckpt;
    try {
        nlohmann::json header = nlohmann::json::parse(header_str);
        ckpt.config = header.at("config").get<ModelConfig>();
        ckpt.vocab = Vocab{};
        ckpt.vocab.tokens = header.at("vocab").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    for (std::size_t i = 0; i < ckpt.vocab.tokens.size(); ++i) {
        ckpt.vocab.index[ckpt.vocab.tokens[i]] = static_cast<int>(i);
    }
    ckpt.tensors = read_param_archive(is);
    return ckpt;
}

inline std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
    auto model = std::make_unique<Model>(ckpt.config, 0);
    load_params(model->params(), ckpt.tensors);
    return model;
}

} // namespace aat
