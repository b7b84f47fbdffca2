// Paired-dataset ingestion, synthetic data generation, Adam and the
// training/evaluation loops. Everything is deterministic given (seed,
// data, config); text embeddings are never touched by training.

#ifndef NALSUPER_TRAIN_HPP
#define NALSUPER_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "nalsuper/image_io.hpp"
#include "nalsuper/losses.hpp"
#include "nalsuper/model.hpp"
#include "nalsuper/tensor.hpp"

namespace nalsuper {

template <class Real>
struct ImagePair {
    Tensor<Real> low;  // [3,H,W] in [0,1]
    Tensor<Real> gt;   // same shape
    std::string id;
};

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

template <class Real>
std::vector<ImagePair<Real>> load_paired_dataset(const std::string& low_dir,
                                                 const std::string& gt_dir) {
    namespace fs = std::filesystem;
    auto list_images = [](const std::string& dir) {
        if (!fs::is_directory(dir)) throw UsageError("'" + dir + "' is not a directory");
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            std::string name = e.path().filename().string();
            if (detail::ends_with(name, ".png") || detail::ends_with(name, ".ppm"))
                names.push_back(name);
        }
        std::sort(names.begin(), names.end());
        return names;
    };
    auto low_names = list_images(low_dir);
    auto gt_names = list_images(gt_dir);
    for (const auto& n : low_names)
        if (!std::binary_search(gt_names.begin(), gt_names.end(), n))
            throw UsageError("'" + n + "' present in " + low_dir + " but missing from " + gt_dir);
    for (const auto& n : gt_names)
        if (!std::binary_search(low_names.begin(), low_names.end(), n))
            throw UsageError("'" + n + "' present in " + gt_dir + " but missing from " + low_dir);
    std::vector<ImagePair<Real>> pairs;
    for (const auto& n : low_names) {
        ImagePair<Real> p;
        p.low = read_image<Real>((std::filesystem::path(low_dir) / n).string());
        p.gt = read_image<Real>((std::filesystem::path(gt_dir) / n).string());
        p.id = n;
        if (!p.low.same_shape(p.gt))
            throw UsageError("size mismatch for pair '" + n + "': low " + shape_str(p.low.shape) +
                             " vs gt " + shape_str(p.gt.shape));
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale data: smooth sinusoid ground truths, darkened by a
// gamma curve and scale plus mild gaussian noise.
// ---------------------------------------------------------------------------

template <class Real>
std::vector<ImagePair<Real>> make_synthetic(int count, int h, int w, std::uint64_t seed) {
    if (h < 16 || w < 16) throw UsageError("make_synthetic requires H,W >= 16");
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double lo, double hi) {
        double u = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
        return lo + u * (hi - lo);
    };
    auto normal = [&](double sigma) {
        double u1 = uniform(0.0, 1.0), u2 = uniform(0.0, 1.0);
        return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    };
    std::vector<ImagePair<Real>> pairs;
    for (int n = 0; n < count; ++n) {
        std::vector<Real> gt(static_cast<std::size_t>(3) * h * w);
        for (int c = 0; c < 3; ++c) {
            struct Wave { double a, fy, fx, phase; };
            std::vector<Wave> waves(3);
            for (auto& wv : waves)
                wv = {uniform(0.3, 1.0), uniform(0.5, 2.0), uniform(0.5, 2.0), uniform(0.0, 2.0 * M_PI)};
            double lo = 1e30, hi = -1e30;
            std::vector<double> plane(static_cast<std::size_t>(h) * w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double v = 0.0;
                    for (const auto& wv : waves)
                        v += wv.a * std::sin(2.0 * M_PI * (wv.fy * y / h + wv.fx * x / w) + wv.phase);
                    plane[static_cast<std::size_t>(y) * w + x] = v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            double span = hi - lo > 1e-12 ? hi - lo : 1.0;
            for (std::size_t i = 0; i < plane.size(); ++i)
                gt[static_cast<std::size_t>(c) * h * w + i] =
                    static_cast<Real>(0.2 + 0.7 * (plane[i] - lo) / span);
        }
        double gamma = uniform(2.0, 3.0);
        double s = uniform(0.2, 0.5);
        std::vector<Real> low(gt.size());
        for (std::size_t i = 0; i < gt.size(); ++i) {
            double v = std::pow(static_cast<double>(gt[i]), gamma) * s + normal(0.01);
            low[i] = static_cast<Real>(std::min(1.0, std::max(0.0, v)));
        }
        ImagePair<Real> p;
        p.gt = Tensor<Real>::from({3, h, w}, std::move(gt));
        p.low = Tensor<Real>::from({3, h, w}, std::move(low));
        char buf[16];
        std::snprintf(buf, sizeof(buf), "pair_%03d", n);
        p.id = buf;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class Real>
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<std::vector<Real>> m, v;  // aligned with the parameter list

    template <class Params>
    void ensure_buffers(const Params& params) {
        if (!m.empty()) return;
        for (const auto& p : params) {
            m.emplace_back(p.tensor.numel(), Real(0));
            v.emplace_back(p.tensor.numel(), Real(0));
        }
    }
};

// Bias-corrected Adam update: m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
// p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <class Real>
void adam_step(std::vector<ParamRef<Real>>& params, AdamState<Real>& state) {
    state.ensure_buffers(params);
    if (state.m.size() != params.size())
        throw UsageError("adam_step: state does not match parameter list");
    state.t += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi].tensor;
        if (!p.grad) throw UsageError("adam_step: parameter '" + params[pi].name + "' has no gradient");
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (std::size_t i = 0; i < p.numel(); ++i) {
            double g = static_cast<double>((*p.grad)[i]);
            double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * g;
            double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * g * g;
            m[i] = static_cast<Real>(mi);
            v[i] = static_cast<Real>(vi);
            double update = state.lr * (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
            (*p.data)[i] = static_cast<Real>(static_cast<double>((*p.data)[i]) - update);
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TraceRow {
    long step = 0;
    double total = 0.0, l1 = 0.0, ssim = 0.0;
};

struct TrainRun {
    std::vector<TraceRow> trace;
};

template <class Real>
TrainRun train(NaLSuperModel<Real>& model, const std::vector<ImagePair<Real>>& pairs,
               LossConfig loss_cfg, long steps, std::uint64_t seed, double lr = 1e-4) {
    if (pairs.empty()) throw UsageError("train: need at least one image pair");
    SsimConstants k;
    k.window = model.config.ssim_window;
    AdamState<Real> adam;
    adam.lr = lr;
    std::mt19937_64 shuffle_rng(seed);
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto params = model.parameters();

    TrainRun run;
    std::size_t cursor = order.size();  // forces an initial shuffle
    for (long step = 0; step < steps; ++step) {
        if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            cursor = 0;
        }
        const auto& pair = pairs[order[cursor++]];
        Tape<Real> tape;
        Tensor<Real> pred = forward(tape, model, pair.low);
        LossTerms<Real> terms = total_loss(tape, pred, pair.gt, k, loss_cfg);
        double total = static_cast<double>(terms.total.value());
        if (!std::isfinite(total))
            throw NumericError("non-finite loss at step " + std::to_string(step) +
                               " (l1=" + std::to_string(terms.l1) +
                               ", ssim=" + std::to_string(terms.ssim) + ")");
        model.zero_grad();
        tape.backward(terms.total);
        adam_step(params, adam);
        run.trace.push_back({step, total, terms.l1, terms.ssim});
    }
    return run;
}

inline void write_trace_csv(const TrainRun& run, std::ostream& os) {
    os << "step,total,l1,ssim\n";
    os.precision(10);
    for (const auto& r : run.trace)
        os << r.step << "," << r.total << "," << r.l1 << "," << r.ssim << "\n";
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline int eval_thread_count() {
    const char* env = std::getenv("NALSUPER_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n > 0 ? n : 1;
}

template <class Real>
EvalReport evaluate(NaLSuperModel<Real>& model, const std::vector<ImagePair<Real>>& pairs) {
    SsimConstants k;
    k.window = model.config.ssim_window;
    EvalReport report;
    report.rows.resize(pairs.size());
    auto eval_one = [&](std::size_t i) {
        Tape<Real> tape;
        Tensor<Real> enhanced = clamp01(forward(tape, model, pairs[i].low));
        EvalReport::Row row;
        row.id = pairs[i].id;
        row.psnr_db = psnr(enhanced, pairs[i].gt);
        row.ssim = ssim_metric(enhanced, pairs[i].gt, k);
        row.mae = mae(enhanced, pairs[i].gt);
        report.rows[i] = row;
    };
    int threads = std::min<int>(eval_thread_count(), static_cast<int>(pairs.size()));
    if (threads <= 1) {
        for (std::size_t i = 0; i < pairs.size(); ++i) eval_one(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t n = pairs.size();
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t]() {
                for (std::size_t i = static_cast<std::size_t>(t); i < n; i += static_cast<std::size_t>(threads))
                    eval_one(i);
            });
        for (auto& th : pool) th.join();
    }
    return report;
}

}  // namespace nalsuper

#endif  // NALSUPER_TRAIN_HPP
