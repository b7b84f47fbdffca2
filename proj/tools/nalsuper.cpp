// nalsuper command-line tool: training, inference, evaluation, gradient
// verification and synthetic data generation.
//
// Exit codes: 0 success, 1 runtime/IO error, 2 usage error, 3 numeric abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nalsuper/model.hpp"
#include "nalsuper/train.hpp"
#include "nalsuper/verify.hpp"

namespace {

using namespace nalsuper;

// Training runs in 32-bit mode; gradcheck in 64-bit.
using Real = float;

struct EmbeddingFlags {
    std::string embeddings_path;
    std::string prompts_path;
    bool use_test_embedder = false;
    int d_tau = 32;
    std::uint64_t embed_seed = 0;
};

void add_embedding_flags(CLI::App* cmd, EmbeddingFlags& f) {
    cmd->add_option("--embeddings", f.embeddings_path, "NLSE embedding file");
    cmd->add_option("--prompts", f.prompts_path, "prompt file, one prompt per line");
    cmd->add_flag("--test-embedder", f.use_test_embedder,
                  "use the deterministic test embedder instead of an NLSE file");
    cmd->add_option("--d-tau", f.d_tau, "embedding dimension for the test embedder");
    cmd->add_option("--embed-seed", f.embed_seed, "seed for the test embedder");
}

std::vector<std::string> read_prompts(const std::string& path) {
    if (path.empty()) return default_prompts();
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open prompt file '" + path + "'");
    std::vector<std::string> prompts;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) prompts.push_back(line);
    if (prompts.empty()) throw UsageError("prompt file '" + path + "' is empty");
    return prompts;
}

EmbeddingSet resolve_embeddings(const EmbeddingFlags& f) {
    if (!f.embeddings_path.empty()) return load_embeddings(f.embeddings_path);
    return make_test_embedding_set(read_prompts(f.prompts_path), f.d_tau, f.embed_seed);
}

int cmd_train(const std::string& low_dir, const std::string& gt_dir, int synthetic, int size,
              const ModelConfig& cfg_in, const EmbeddingFlags& ef, const std::string& loss_name,
              long steps, double lr, std::uint64_t seed, const std::string& out_path,
              const std::string& trace_path) {
    ModelConfig cfg = cfg_in;
    cfg.d_tau = ef.d_tau;
    cfg.seed = seed;
    EmbeddingSet emb = resolve_embeddings(ef);
    cfg.d_tau = emb.d_tau;
    cfg.validate();

    std::vector<ImagePair<Real>> pairs;
    if (synthetic > 0) pairs = make_synthetic<Real>(synthetic, size, size, seed);
    else if (!low_dir.empty() && !gt_dir.empty()) pairs = load_paired_dataset<Real>(low_dir, gt_dir);
    else throw UsageError("train needs either --synthetic or --low-dir/--gt-dir");

    NaLSuperModel<Real> model = init_model<Real>(cfg, emb);
    TrainRun run = train(model, pairs, parse_loss_config(loss_name), steps, seed, lr);
    save_checkpoint(model, out_path);
    if (!trace_path.empty()) {
        std::ofstream os(trace_path);
        if (!os) throw FormatError("cannot open '" + trace_path + "' for writing");
        write_trace_csv(run, os);
    }
    if (!run.trace.empty()) {
        const auto& last = run.trace.back();
        std::printf("final loss after %ld steps: total=%.6f l1=%.6f ssim=%.6f\n",
                    steps, last.total, last.l1, last.ssim);
    } else {
        std::printf("no steps executed; checkpoint saved unchanged\n");
    }
    return 0;
}

int cmd_enhance(const std::string& ckpt, const std::string& input, const std::string& output,
                EmbeddingFlags ef) {
    CheckpointInfo info = read_checkpoint_header(ckpt);
    ef.d_tau = info.config.d_tau;
    EmbeddingSet emb = resolve_embeddings(ef);
    NaLSuperModel<Real> model = load_checkpoint<Real>(ckpt, emb);
    Tensor<Real> low = read_image<Real>(input);
    Tape<Real> tape;
    Tensor<Real> out = forward(tape, model, low);
    write_image(out, output);
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& low_dir, const std::string& gt_dir,
             const std::string& csv_path, EmbeddingFlags ef) {
    CheckpointInfo info = read_checkpoint_header(ckpt);
    ef.d_tau = info.config.d_tau;
    EmbeddingSet emb = resolve_embeddings(ef);
    NaLSuperModel<Real> model = load_checkpoint<Real>(ckpt, emb);
    auto pairs = load_paired_dataset<Real>(low_dir, gt_dir);
    EvalReport report = evaluate(model, pairs);
    std::cout << report.format_table();
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw FormatError("cannot open '" + csv_path + "' for writing");
        report.write_csv(os);
    }
    return 0;
}

int cmd_gradcheck(int channels, int blocks, int size, std::uint64_t seed, int rounds,
                  double op_threshold, double model_threshold) {
    bool ok = true;
    for (const auto& r : run_primitive_gradchecks(rounds, seed)) {
        bool pass = r.max_rel_err < op_threshold;
        ok = ok && pass;
        std::printf("%-20s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    pass ? "ok" : "FAIL");
    }
    double model_err = full_model_gradcheck(channels, blocks, size, 2, seed);
    bool model_pass = model_err < model_threshold;
    ok = ok && model_pass;
    std::printf("%-20s max_rel_err=%.3e  %s\n", "full_model", model_err,
                model_pass ? "ok" : "FAIL");
    return ok ? 0 : 1;
}

int cmd_make_synthetic(int count, int size, std::uint64_t seed, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "low");
    fs::create_directories(fs::path(out_dir) / "gt");
    for (const auto& p : make_synthetic<Real>(count, size, size, seed)) {
        write_png(p.low, (fs::path(out_dir) / "low" / (p.id + ".png")).string());
        write_png(p.gt, (fs::path(out_dir) / "gt" / (p.id + ".png")).string());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NaLSuper low-light image enhancement"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string low_dir, gt_dir, out_path = "model.nlsc", trace_path, loss_name = "l1+ssim";
    int synthetic = 0, size = 32;
    long steps = 1500;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    ModelConfig cfg;
    EmbeddingFlags train_ef;
    train_ef.use_test_embedder = true;
    train_cmd->add_option("--low-dir", low_dir, "directory of low-light images");
    train_cmd->add_option("--gt-dir", gt_dir, "directory of ground-truth images");
    train_cmd->add_option("--synthetic", synthetic, "train on N synthetic pairs instead of files");
    train_cmd->add_option("--size", size, "synthetic image size");
    train_cmd->add_option("--channels", cfg.channels, "feature channels C");
    train_cmd->add_option("--blocks", cfg.num_blocks, "number of RTFB blocks N");
    train_cmd->add_option("--attention-dim", cfg.attention_dim, "cross-attention width d");
    train_cmd->add_option("--reduction", cfg.reduction, "channel/pixel attention reduction r");
    std::string delta_mode = "fixed", ssim_window = "gaussian11";
    train_cmd->add_option("--delta-mode", delta_mode, "fixed or learnable")
        ->check(CLI::IsMember({"fixed", "learnable"}));
    train_cmd->add_option("--ssim-window", ssim_window, "gaussian11 or global")
        ->check(CLI::IsMember({"gaussian11", "global"}));
    train_cmd->add_option("--loss", loss_name, "l1, ssim or l1+ssim");
    train_cmd->add_option("--steps", steps, "training steps");
    train_cmd->add_option("--lr", lr, "Adam learning rate");
    train_cmd->add_option("--seed", seed, "seed for init, shuffling and synthetic data");
    train_cmd->add_option("--out", out_path, "output checkpoint path");
    train_cmd->add_option("--trace", trace_path, "loss trace CSV path");
    add_embedding_flags(train_cmd, train_ef);

    // enhance
    auto* enhance_cmd = app.add_subcommand("enhance", "enhance one image");
    std::string ckpt, input, output;
    EmbeddingFlags enhance_ef;
    enhance_ef.use_test_embedder = true;
    enhance_cmd->add_option("--ckpt", ckpt, "checkpoint path")->required();
    enhance_cmd->add_option("--input", input, "input image (png or ppm)")->required();
    enhance_cmd->add_option("--output", output, "output image path")->required();
    add_embedding_flags(enhance_cmd, enhance_ef);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate on a paired dataset");
    std::string eval_ckpt, eval_low, eval_gt, csv_path;
    EmbeddingFlags eval_ef;
    eval_ef.use_test_embedder = true;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--low-dir", eval_low, "low-light image directory")->required();
    eval_cmd->add_option("--gt-dir", eval_gt, "ground-truth image directory")->required();
    eval_cmd->add_option("--csv", csv_path, "write the report as CSV");
    add_embedding_flags(eval_cmd, eval_ef);

    // gradcheck
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    int gc_channels = 4, gc_blocks = 2, gc_size = 8, gc_rounds = 20;
    std::uint64_t gc_seed = 3;
    double op_threshold = 1e-6, model_threshold = 1e-3;
    gc_cmd->add_option("--channels", gc_channels, "model channels");
    gc_cmd->add_option("--blocks", gc_blocks, "model blocks");
    gc_cmd->add_option("--size", gc_size, "input size");
    gc_cmd->add_option("--seed", gc_seed, "seed");
    gc_cmd->add_option("--rounds", gc_rounds, "random instances per primitive");
    gc_cmd->add_option("--op-threshold", op_threshold, "per-op error threshold");
    gc_cmd->add_option("--model-threshold", model_threshold, "full-model error threshold");

    // make-synthetic
    auto* ms_cmd = app.add_subcommand("make-synthetic", "generate a synthetic paired dataset");
    int ms_count = 4, ms_size = 32;
    std::uint64_t ms_seed = 0;
    std::string ms_out = "synthetic";
    ms_cmd->add_option("--count", ms_count, "number of pairs");
    ms_cmd->add_option("--size", ms_size, "image size");
    ms_cmd->add_option("--seed", ms_seed, "seed");
    ms_cmd->add_option("--out-dir", ms_out, "output directory (low/ and gt/ created inside)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) {
            cfg.delta_mode = delta_mode == "learnable" ? DeltaMode::Learnable : DeltaMode::Fixed;
            cfg.ssim_window = ssim_window == "global" ? SsimWindow::Global : SsimWindow::Gaussian11;
            return cmd_train(low_dir, gt_dir, synthetic, size, cfg, train_ef, loss_name, steps, lr,
                             seed, out_path, trace_path);
        }
        if (enhance_cmd->parsed()) return cmd_enhance(ckpt, input, output, enhance_ef);
        if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_low, eval_gt, csv_path, eval_ef);
        if (gc_cmd->parsed())
            return cmd_gradcheck(gc_channels, gc_blocks, gc_size, gc_seed, gc_rounds, op_threshold,
                                 model_threshold);
        if (ms_cmd->parsed()) return cmd_make_synthetic(ms_count, ms_size, ms_seed, ms_out);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
