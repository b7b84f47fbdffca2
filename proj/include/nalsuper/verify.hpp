// Finite-difference verification suites: per-primitive checks over random
// small shapes and a whole-model check. Always runs in 64-bit mode.

#ifndef NALSUPER_VERIFY_HPP
#define NALSUPER_VERIFY_HPP

#include <random>
#include <string>
#include <vector>

#include "nalsuper/attention.hpp"
#include "nalsuper/gradcheck.hpp"
#include "nalsuper/losses.hpp"
#include "nalsuper/model.hpp"
#include "nalsuper/tensor.hpp"
#include "nalsuper/text.hpp"

namespace nalsuper {

struct OpCheck {
    std::string name;
    double max_rel_err = 0.0;
};

namespace detail {

class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) {
        double u = (static_cast<double>(rng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
        return lo + u * (hi - lo);
    }

    Tensor<double> tensor(Shape s, double lo = -1.0, double hi = 1.0) {
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) x = uniform(lo, hi);
        return Tensor<double>::param(std::move(s), std::move(v));
    }

    // magnitudes bounded away from zero, so relu/abs kinks stay outside the
    // finite-difference window
    Tensor<double> tensor_off_zero(Shape s, double margin = 0.1) {
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) {
            double m = uniform(margin, 1.0);
            x = uniform(0.0, 1.0) < 0.5 ? -m : m;
        }
        return Tensor<double>::param(std::move(s), std::move(v));
    }

    Tensor<double> constant(Shape s, double lo = -1.0, double hi = 1.0) {
        Tensor<double> t = tensor(std::move(s), lo, hi);
        t.requires_grad = false;
        t.grad.reset();
        return t;
    }

private:
    std::mt19937_64 rng_;
};

// Probe functional: sum of the output weighted by a fixed random field, so
// every output coordinate contributes to the scalar.
inline Tensor<double> probe(Tape<double>& tape, const Tensor<double>& out,
                            const Tensor<double>& weights) {
    return sum_all(tape, mul(tape, out, weights));
}

}  // namespace detail

// Max relative finite-difference error per primitive, over `rounds` random
// instances each (shapes <= 4x4x4).
inline std::vector<OpCheck> run_primitive_gradchecks(int rounds = 20, std::uint64_t seed = 1,
                                                     double h = 1e-6) {
    std::vector<OpCheck> results;
    auto check = [&](const std::string& name, auto&& builder) {
        double worst = 0.0;
        for (int r = 0; r < rounds; ++r) {
            detail::RandomSource rnd(seed + static_cast<std::uint64_t>(r) * 1000003ull +
                                     fnv1a64(name));
            auto [params, fn] = builder(rnd);
            worst = std::max(worst, finite_diff_check(params, fn, h));
        }
        results.push_back({name, worst});
    };
    using P = std::vector<Tensor<double>>;

    check("conv2d", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor({3, 4, 4});
        auto w = rnd.tensor({2, 3, 3, 3});
        auto b = rnd.tensor({2});
        auto probe_w = rnd.constant({2, 4, 4});
        ScalarFn fn = [=](Tape<double>& t) {
            return detail::probe(t, conv2d(t, x, w, b, 1), probe_w);
        };
        return std::pair<P, ScalarFn>({x, w, b}, fn);
    });
    check("depthwise_conv2d", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor({3, 4, 4});
        auto w = rnd.tensor({3, 1, 3, 3});
        auto b = rnd.tensor({3});
        auto probe_w = rnd.constant({3, 4, 4});
        ScalarFn fn = [=](Tape<double>& t) {
            return detail::probe(t, depthwise_conv2d(t, x, w, b, 1), probe_w);
        };
        return std::pair<P, ScalarFn>({x, w, b}, fn);
    });
    check("matmul", [](detail::RandomSource& rnd) {
        auto a = rnd.tensor({3, 4});
        auto b = rnd.tensor({4, 2});
        auto probe_w = rnd.constant({3, 2});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, matmul(t, a, b), probe_w); };
        return std::pair<P, ScalarFn>({a, b}, fn);
    });
    check("softmax_rows", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor({3, 4}, -2.0, 2.0);
        auto probe_w = rnd.constant({3, 4});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, softmax_rows(t, x), probe_w); };
        return std::pair<P, ScalarFn>({x}, fn);
    });
    check("add", [](detail::RandomSource& rnd) {
        auto a = rnd.tensor({2, 3, 3});
        auto b = rnd.tensor({2, 1, 1});
        auto probe_w = rnd.constant({2, 3, 3});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, add(t, a, b), probe_w); };
        return std::pair<P, ScalarFn>({a, b}, fn);
    });
    check("sub", [](detail::RandomSource& rnd) {
        auto a = rnd.tensor({2, 3, 3});
        auto b = rnd.tensor({2, 3, 3});
        auto probe_w = rnd.constant({2, 3, 3});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, sub(t, a, b), probe_w); };
        return std::pair<P, ScalarFn>({a, b}, fn);
    });
    check("mul", [](detail::RandomSource& rnd) {
        auto a = rnd.tensor({2, 3, 3});
        auto b = rnd.tensor({1, 3, 3});
        auto probe_w = rnd.constant({2, 3, 3});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, mul(t, a, b), probe_w); };
        return std::pair<P, ScalarFn>({a, b}, fn);
    });
    check("div", [](detail::RandomSource& rnd) {
        auto a = rnd.tensor({2, 3, 3});
        auto b = rnd.tensor_off_zero({2, 3, 3}, 0.3);
        auto probe_w = rnd.constant({2, 3, 3});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, div(t, a, b), probe_w); };
        return std::pair<P, ScalarFn>({a, b}, fn);
    });
    check("relu", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor_off_zero({4, 4});
        auto probe_w = rnd.constant({4, 4});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, relu(t, x), probe_w); };
        return std::pair<P, ScalarFn>({x}, fn);
    });
    check("sigmoid", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor({4, 4}, -3.0, 3.0);
        auto probe_w = rnd.constant({4, 4});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, sigmoid(t, x), probe_w); };
        return std::pair<P, ScalarFn>({x}, fn);
    });
    check("abs", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor_off_zero({4, 4});
        auto probe_w = rnd.constant({4, 4});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, abs_val(t, x), probe_w); };
        return std::pair<P, ScalarFn>({x}, fn);
    });
    check("exp", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor({4, 4}, -1.0, 1.0);
        auto probe_w = rnd.constant({4, 4});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, exp_val(t, x), probe_w); };
        return std::pair<P, ScalarFn>({x}, fn);
    });
    check("global_avg_pool", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor({3, 4, 4});
        auto probe_w = rnd.constant({3, 1, 1});
        ScalarFn fn = [=](Tape<double>& t) { return detail::probe(t, global_avg_pool(t, x), probe_w); };
        return std::pair<P, ScalarFn>({x}, fn);
    });
    check("concat_channels", [](detail::RandomSource& rnd) {
        auto a = rnd.tensor({2, 3, 3});
        auto b = rnd.tensor({1, 3, 3});
        auto probe_w = rnd.constant({3, 3, 3});
        ScalarFn fn = [=](Tape<double>& t) {
            return detail::probe(t, concat_channels(t, {a, b}), probe_w);
        };
        return std::pair<P, ScalarFn>({a, b}, fn);
    });
    check("permute", [](detail::RandomSource& rnd) {
        auto x = rnd.tensor({2, 3, 4});
        auto probe_w = rnd.constant({4, 2, 3});
        ScalarFn fn = [=](Tape<double>& t) {
            return detail::probe(t, permute(t, x, {2, 0, 1}), probe_w);
        };
        return std::pair<P, ScalarFn>({x}, fn);
    });
    check("tcm_forward", [](detail::RandomSource& rnd) {
        int C = 2, H = 4, W = 2, d = 3, d_tau = 4, M = 2;
        auto feature = rnd.tensor({C, H, W});
        TcmParams<double> p{rnd.tensor({d, C}), rnd.tensor({d, d_tau}), rnd.tensor({d, d_tau}),
                            rnd.tensor({1, M}), rnd.tensor({C, d})};
        auto text = rnd.constant({M, d_tau});
        auto probe_w = rnd.constant({C, H, W});
        ScalarFn fn = [=](Tape<double>& t) {
            return detail::probe(t, tcm_forward(t, feature, text, p), probe_w);
        };
        return std::pair<P, ScalarFn>({feature, p.w_q, p.w_k, p.w_v, p.bias, p.w_out}, fn);
    });
    check("channel_attention", [](detail::RandomSource& rnd) {
        int C = 2;
        auto f = rnd.tensor({C, 4, 4});
        ChannelAttentionParams<double> p{{rnd.tensor({C, C, 1, 1}), rnd.tensor({C})},
                                         {rnd.tensor({C, C, 1, 1}), rnd.tensor({C})},
                                         1};
        auto probe_w = rnd.constant({C, 4, 4});
        ScalarFn fn = [=](Tape<double>& t) {
            return detail::probe(t, channel_attention(t, f, p), probe_w);
        };
        return std::pair<P, ScalarFn>(
            {f, p.conv1.weight, p.conv1.bias, p.conv2.weight, p.conv2.bias}, fn);
    });
    check("pixel_attention", [](detail::RandomSource& rnd) {
        int C = 2;
        auto f = rnd.tensor({C, 4, 4});
        PixelAttentionParams<double> p{{rnd.tensor({C, C, 1, 1}), rnd.tensor({C})},
                                       {rnd.tensor({1, C, 1, 1}), rnd.tensor({1})}};
        auto probe_w = rnd.constant({C, 4, 4});
        ScalarFn fn = [=](Tape<double>& t) {
            return detail::probe(t, pixel_attention(t, f, p), probe_w);
        };
        return std::pair<P, ScalarFn>(
            {f, p.conv1.weight, p.conv1.bias, p.conv2.weight, p.conv2.bias}, fn);
    });
    check("cafb", [](detail::RandomSource& rnd) {
        int C = 1, H = 2, W = 2;
        auto f1 = rnd.tensor({C, H, W});
        auto f2 = rnd.tensor({C, H, W});
        auto f3 = rnd.tensor({C, H, W});
        CafbParams<double> p;
        p.q_point = {rnd.tensor({3 * C, 3 * C, 1, 1}), rnd.tensor({3 * C})};
        p.k_point = {rnd.tensor({3 * C, 3 * C, 1, 1}), rnd.tensor({3 * C})};
        p.v_point = {rnd.tensor({3 * C, 3 * C, 1, 1}), rnd.tensor({3 * C})};
        p.q_depth = {rnd.tensor({3 * C, 1, 3, 3}), rnd.tensor({3 * C})};
        p.k_depth = {rnd.tensor({3 * C, 1, 3, 3}), rnd.tensor({3 * C})};
        p.v_depth = {rnd.tensor({3 * C, 1, 3, 3}), rnd.tensor({3 * C})};
        p.log_delta = rnd.tensor({1});
        p.out_proj = {rnd.tensor({C, 3 * C, 1, 1}), rnd.tensor({C})};
        auto probe_w = rnd.constant({C, H, W});
        ScalarFn fn = [=](Tape<double>& t) {
            return detail::probe(t, cafb(t, f1, f2, f3, p), probe_w);
        };
        return std::pair<P, ScalarFn>({f1, f2, f3, p.q_point.weight, p.k_point.weight,
                                       p.v_point.weight, p.q_depth.weight, p.k_depth.weight,
                                       p.v_depth.weight, p.out_proj.weight, p.out_proj.bias},
                                      fn);
    });
    check("l1_loss", [](detail::RandomSource& rnd) {
        auto pred = rnd.tensor({3, 3, 3});
        auto gt = rnd.constant({3, 3, 3});
        ScalarFn fn = [=](Tape<double>& t) { return l1_loss(t, pred, gt); };
        return std::pair<P, ScalarFn>({pred}, fn);
    });
    check("ssim_loss_global", [](detail::RandomSource& rnd) {
        auto pred = rnd.tensor({3, 4, 4}, 0.0, 1.0);
        auto gt = rnd.constant({3, 4, 4}, 0.0, 1.0);
        SsimConstants k;
        k.window = SsimWindow::Global;
        ScalarFn fn = [=](Tape<double>& t) { return ssim_loss(t, pred, gt, k); };
        return std::pair<P, ScalarFn>({pred}, fn);
    });
    return results;
}

// Full-model check: gradient of L1 + global-window SSIM loss with respect to
// every parameter, on a small random input.
inline double full_model_gradcheck(int channels = 4, int blocks = 2, int size = 8, int m_prompts = 2,
                                   std::uint64_t seed = 3, double h = 1e-4) {
    ModelConfig cfg;
    cfg.channels = channels;
    cfg.num_blocks = blocks;
    cfg.attention_dim = 4;
    cfg.d_tau = 8;
    cfg.reduction = 1;
    cfg.ssim_window = SsimWindow::Global;
    cfg.seed = seed;
    std::vector<std::string> prompts;
    for (int i = 0; i < m_prompts; ++i) prompts.push_back("prompt " + std::to_string(i));
    EmbeddingSet emb = make_test_embedding_set(prompts, cfg.d_tau, seed);
    auto model = std::make_shared<NaLSuperModel<double>>(init_model<double>(cfg, emb));

    detail::RandomSource rnd(seed ^ 0x5eedull);
    // knock the model off its identity-at-init point so every code path
    // carries gradient
    for (auto& p : model->parameters())
        for (std::size_t i = 0; i < p.tensor.numel(); ++i)
            (*p.tensor.data)[i] += rnd.uniform(-0.2, 0.2);
    auto low = rnd.constant({3, size, size}, 0.05, 0.5);
    auto gt = rnd.constant({3, size, size}, 0.3, 0.95);
    SsimConstants k;
    k.window = SsimWindow::Global;

    std::vector<Tensor<double>> params;
    for (auto& p : model->parameters()) params.push_back(p.tensor);
    ScalarFn fn = [model, low, gt, k](Tape<double>& t) {
        Tensor<double> pred = forward(t, *model, low);
        return add(t, l1_loss(t, pred, gt), ssim_loss(t, pred, gt, k));
    };
    return finite_diff_check(params, fn, h);
}

}  // namespace nalsuper

#endif  // NALSUPER_VERIFY_HPP
