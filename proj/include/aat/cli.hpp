#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aat/decoder.hpp"
#include "aat/metrics.hpp"
#include "aat/synth.hpp"
#include "aat/training.hpp"

namespace aat::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct GenArgs {
    std::uint64_t seed = 1;
    int k = 8;
    int d_a = 32;
    int vocab_size = 40;
    int max_len = 12;
    int n_train = 5000;
    int n_val = 500;
    std::string out_dir;
};

inline int run_gen(const GenArgs& args, std::ostream& out) {
    if (args.n_train < 1) throw ConfigError("gen: n_train must be >= 1");
    if (args.n_val < 0) throw ConfigError("gen: n_val must be >= 0");
    SynthConfig cfg;
    cfg.seed = args.seed;
    cfg.k = args.k;
    cfg.feature_dim = args.d_a;
    cfg.n_classes = synth_classes_for_vocab(args.vocab_size);
    cfg.max_len = args.max_len;
    cfg.validate();
    Vocab vocab = make_synth_vocab(cfg);

    namespace fs = std::filesystem;
    fs::path root(args.out_dir);
    fs::create_directories(root);
    save_vocab(root / "vocab.txt", vocab);

    nlohmann::json meta{{"format_version", 1}, {"seed", args.seed},
                        {"k", cfg.k},          {"feature_dim", cfg.feature_dim},
                        {"n_classes", cfg.n_classes}, {"max_len", cfg.max_len},
                        {"vocab_size", vocab.size()}, {"n_train", args.n_train},
                        {"n_val", args.n_val}};
    std::ofstream meta_os(root / "meta.json");
    meta_os << meta.dump(2) << "\n";

    std::vector<SynthInstance> train_set, val_set;
    for (int i = 0; i < args.n_train; ++i) {
        train_set.push_back(generate_instance(cfg, vocab, static_cast<std::uint64_t>(i)));
    }
    for (int i = 0; i < args.n_val; ++i) {
        val_set.push_back(generate_instance(
            cfg, vocab, static_cast<std::uint64_t>(args.n_train + i)));
    }
    save_split(root / "train", vocab, train_set);
    save_split(root / "val", vocab, val_set);
    out << "wrote " << train_set.size() << " train and " << val_set.size()
        << " val instances to " << root.string() << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string data_dir;
    std::string mode = "adaptive";
    std::string attn_kind = "additive";
    int heads = 1;
    int d = 64;
    int m_r = 1;
    int m_min = 0;
    int m_max = 4;
    double epsilon = 1e-4;
    double lambda = 1e-4;
    bool no_layer_norm = false;
    int epochs = 10;
    int batch_size = 10;
    double lr = 1e-4;
    std::uint64_t seed = 1;
    std::string out_checkpoint;
    std::string log_path;
};

inline int run_train(const TrainArgs& args, std::ostream& out) {
    Dataset train_data = load_split(args.data_dir, "train");
    Dataset val_data;
    if (std::filesystem::exists(std::filesystem::path(args.data_dir) / "val" / "captions.txt")) {
        val_data = load_split(args.data_dir, "val");
    }
    if (train_data.instances.empty()) throw ConfigError("train: empty training split");
    int feature_dim = train_data.instances.front().features.feature_dim();

    ModelConfig cfg = ModelConfig::make(args.d, feature_dim, train_data.vocab.size(),
                                        mode_from_string(args.mode),
                                        attention_kind_from_string(args.attn_kind), args.heads);
    cfg.m_r = args.m_r;
    cfg.m_min = args.m_min;
    cfg.m_max = args.m_max;
    cfg.epsilon = args.epsilon;
    cfg.lambda = args.lambda;
    cfg.layer_norm = !args.no_layer_norm;
    cfg.validate();

    if (args.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (args.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");

    Model model(cfg, args.seed);
    TrainConfig tc;
    tc.epochs = args.epochs;
    tc.batch_size = args.batch_size;
    tc.lr0 = args.lr;
    tc.seed = args.seed;
    tc.checkpoint_path = args.out_checkpoint;
    tc.log_path = args.log_path;

    TrainResult result = train(model, train_data, val_data, tc);
    for (const EpochStats& s : result.epochs) {
        out << "epoch=" << s.epoch << " train_loss=" << s.train_loss
            << " val_loss=" << s.val_loss << " val_acc=" << s.val_acc
            << " mean_steps=" << s.val_mean_steps << " lr=" << s.lr << "\n";
    }
    if (result.best_epoch >= 0) {
        out << "best_epoch=" << result.best_epoch << " best_val_loss=" << result.best_val_loss
            << "\n";
    }
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data_dir;
    std::string split = "val";
    std::string trace_out;
    int max_len = 16;
};

inline int run_eval(const EvalArgs& args, std::ostream& out) {
    Checkpoint ckpt = load_checkpoint(args.checkpoint);
    Dataset data = load_split(args.data_dir, args.split);
    if (ckpt.vocab.tokens != data.vocab.tokens) {
        throw ConfigError("eval: checkpoint vocabulary does not match dataset vocabulary");
    }
    std::unique_ptr<Model> model = model_from_checkpoint(ckpt);

    std::ofstream trace_os;
    if (!args.trace_out.empty()) {
        trace_os.open(args.trace_out);
        if (!trace_os) throw FormatError("eval: cannot open " + args.trace_out + " for writing");
    }

    long tokens = 0, correct = 0;
    double ce_sum = 0.0, ponder_sum = 0.0;
    std::vector<std::vector<std::string>> hyps, refs;
    std::vector<HaltingTrace> traces;
    for (std::size_t i = 0; i < data.instances.size(); ++i) {
        const SynthInstance& inst = data.instances[i];
        Tape tp;
        Model::TeacherForcedResult tf = model->teacher_forced(tp, inst.features, inst.target);
        ce_sum += tf.ce_sum;
        ponder_sum += tf.ponder_sum;
        tokens += tf.tokens;
        correct += tf.correct;
        Tape tg;
        Model::GreedyResult greedy = model->greedy_decode(tg, inst.features, args.max_len);
        if (trace_os.is_open()) {
            append_trace(trace_os, static_cast<int>(i), greedy.trace, &data.vocab);
        }
        std::vector<std::string> hyp, ref;
        for (int id : greedy.tokens) hyp.push_back(data.vocab.token(id));
        for (int id : inst.target) ref.push_back(data.vocab.token(id));
        hyps.push_back(std::move(hyp));
        refs.push_back(std::move(ref));
        traces.push_back(std::move(greedy.trace));
    }
    if (tokens == 0) throw MetricError("eval: empty split");

    std::vector<double> bleu_scores = bleu(hyps, refs, 4);
    AttentionStats stats = attention_stats(traces);
    out << "split=" << args.split << "\n";
    out << "sequences=" << data.instances.size() << "\n";
    out << "tokens=" << tokens << "\n";
    out << "token_accuracy=" << static_cast<double>(correct) / static_cast<double>(tokens) << "\n";
    out << "cross_entropy=" << ce_sum / static_cast<double>(tokens) << "\n";
    out << "ponder=" << ponder_sum / static_cast<double>(tokens) << "\n";
    out << "loss=" << (ce_sum + ponder_sum) / static_cast<double>(tokens) << "\n";
    for (std::size_t n = 0; n < bleu_scores.size(); ++n) {
        out << "bleu" << (n + 1) << "=" << bleu_scores[n] << "\n";
    }
    out << "mean_steps=" << stats.mean_steps << "\n";
    out << "min_steps=" << stats.min_steps << "\n";
    out << "max_steps=" << stats.max_steps << "\n";
    return kExitOk;
}

struct CheckArgs {
    std::string trace_path;
    std::optional<int> m_min;
    std::optional<int> m_max;
};

inline int run_check(const CheckArgs& args, std::ostream& out) {
    std::vector<TraceRecord> records = read_trace_file(args.trace_path);
    std::vector<std::string> problems = check_trace(records, args.m_min, args.m_max);
    if (problems.empty()) {
        out << "ok: " << records.size() << " records\n";
        return kExitOk;
    }
    for (const std::string& p : problems) out << "violation: " << p << "\n";
    return kExitRuntime;
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
    CLI::App app{"Adaptive Attention Time decoder: dataset generation, training, "
                 "evaluation and halting-trace inspection"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset");
    gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
    gen_cmd->add_option("--seed", gen.seed, "generator seed")->envname("AAT_SEED");
    gen_cmd->add_option("--k", gen.k, "regions per instance");
    gen_cmd->add_option("--d-a", gen.d_a, "raw feature dimension");
    gen_cmd->add_option("--vocab-size", gen.vocab_size, "requested vocabulary size");
    gen_cmd->add_option("--max-len", gen.max_len, "maximum caption length");
    gen_cmd->add_option("--n-train", gen.n_train, "training instances");
    gen_cmd->add_option("--n-val", gen.n_val, "validation instances");

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--data", train_args.data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", train_args.out_checkpoint, "checkpoint path")->required();
    train_cmd->add_option("--mode", train_args.mode, "base|recurrent|adaptive");
    train_cmd->add_option("--attn-kind", train_args.attn_kind, "additive|dot_product");
    train_cmd->add_option("--heads", train_args.heads, "attention heads");
    train_cmd->add_option("--d", train_args.d, "hidden size");
    train_cmd->add_option("--m-r", train_args.m_r, "recurrent attention steps");
    train_cmd->add_option("--m-min", train_args.m_min, "minimum attention steps");
    train_cmd->add_option("--m-max", train_args.m_max, "maximum attention steps");
    train_cmd->add_option("--epsilon", train_args.epsilon, "halting threshold");
    train_cmd->add_option("--lambda", train_args.lambda, "time cost penalty weight");
    train_cmd->add_flag("--no-layer-norm", train_args.no_layer_norm,
                        "disable adaptive-mode layer normalization");
    train_cmd->add_option("--epochs", train_args.epochs, "training epochs");
    train_cmd->add_option("--batch-size", train_args.batch_size, "gradient accumulation size");
    train_cmd->add_option("--lr", train_args.lr, "initial learning rate");
    train_cmd->add_option("--seed", train_args.seed, "init/shuffle seed")->envname("AAT_SEED");
    train_cmd->add_option("--log", train_args.log_path, "training log (JSON lines)");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval_args.data_dir, "dataset directory")->required();
    eval_cmd->add_option("--split", eval_args.split, "dataset split");
    eval_cmd->add_option("--trace-out", eval_args.trace_out, "halting trace dump (JSON lines)");
    eval_cmd->add_option("--max-len", eval_args.max_len, "greedy decode length cap");

    CheckArgs check_args;
    int check_m_min = -1, check_m_max = -1;
    CLI::App* check_cmd = app.add_subcommand("check", "validate a halting trace dump");
    check_cmd->add_option("--trace", check_args.trace_path, "trace file")->required();
    check_cmd->add_option("--m-min", check_m_min, "expected minimum attention steps");
    check_cmd->add_option("--m-max", check_m_max, "expected maximum attention steps");

    std::vector<const char*> argv = {"aat"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) return run_gen(gen, out);
        if (train_cmd->parsed()) return run_train(train_args, out);
        if (eval_cmd->parsed()) return run_eval(eval_args, out);
        if (check_cmd->parsed()) {
            if (check_m_min >= 0) check_args.m_min = check_m_min;
            if (check_m_max >= 0) check_args.m_max = check_m_max;
            return run_check(check_args, out);
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace aat::cli
