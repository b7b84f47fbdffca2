// Training losses (L1, SSIM, combined) and evaluation metrics (PSNR, SSIM,
// MAE). The SSIM loss is built from tape primitives so it is differentiable
// end-to-end.

#ifndef NALSUPER_LOSSES_HPP
#define NALSUPER_LOSSES_HPP

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nalsuper/tensor.hpp"

namespace nalsuper {

enum class SsimWindow { Gaussian11, Global };

struct SsimConstants {
    double c1 = 0.01 * 0.01;  // (0.01 * L)^2, L = 1
    double c2 = 0.03 * 0.03;  // (0.03 * L)^2
    SsimWindow window = SsimWindow::Gaussian11;
    int window_size = 11;
    double sigma = 1.5;
};

// Normalized 1-D gaussian taps; the 2-D window is the outer product.
inline std::vector<double> gaussian_taps(int size, double sigma) {
    std::vector<double> t(static_cast<std::size_t>(size));
    double sum = 0.0;
    double mid = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) {
        t[static_cast<std::size_t>(i)] = std::exp(-(i - mid) * (i - mid) / (2.0 * sigma * sigma));
        sum += t[static_cast<std::size_t>(i)];
    }
    for (auto& v : t) v /= sum;
    return t;
}

namespace detail {

template <class Real>
Tensor<Real> gaussian_window_kernel(int channels, int size, double sigma) {
    auto taps = gaussian_taps(size, sigma);
    std::vector<Real> w;
    w.reserve(static_cast<std::size_t>(channels) * size * size);
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j)
                w.push_back(static_cast<Real>(taps[static_cast<std::size_t>(i)] *
                                              taps[static_cast<std::size_t>(j)]));
    return Tensor<Real>::from({channels, 1, size, size}, std::move(w));
}

}  // namespace detail

// Mean SSIM between two [C,H,W] images, as a differentiable scalar.
// Gaussian mode: windowed per-channel statistics (valid convolution, so the
// map excludes the border); Global mode: one mean/variance per image.
template <class Real>
Tensor<Real> ssim_value(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& y,
                        const SsimConstants& k) {
    if (!x.same_shape(y)) throw DimError("ssim: shape mismatch");
    if (x.shape.size() != 3) throw DimError("ssim expects [C,H,W]");
    Tensor<Real> c1 = Tensor<Real>::scalar(static_cast<Real>(k.c1));
    Tensor<Real> c2 = Tensor<Real>::scalar(static_cast<Real>(k.c2));
    Tensor<Real> two = Tensor<Real>::scalar(Real(2));
    if (k.window == SsimWindow::Gaussian11) {
        int C = x.shape[0], H = x.shape[1], W = x.shape[2];
        if (H < k.window_size || W < k.window_size)
            throw UsageError("ssim: image smaller than the gaussian window");
        Tensor<Real> kernel = detail::gaussian_window_kernel<Real>(C, k.window_size, k.sigma);
        Tensor<Real> zero_bias = Tensor<Real>::zeros({C});
        auto blur = [&](const Tensor<Real>& t) {
            return depthwise_conv2d(tape, t, kernel, zero_bias, 0);
        };
        Tensor<Real> mu_x = blur(x);
        Tensor<Real> mu_y = blur(y);
        Tensor<Real> mu_xx = blur(mul(tape, x, x));
        Tensor<Real> mu_yy = blur(mul(tape, y, y));
        Tensor<Real> mu_xy = blur(mul(tape, x, y));
        Tensor<Real> var_x = sub(tape, mu_xx, mul(tape, mu_x, mu_x));
        Tensor<Real> var_y = sub(tape, mu_yy, mul(tape, mu_y, mu_y));
        Tensor<Real> cov = sub(tape, mu_xy, mul(tape, mu_x, mu_y));
        Tensor<Real> num = mul(tape, add(tape, scale(tape, mul(tape, mu_x, mu_y), Real(2)), c1),
                               add(tape, scale(tape, cov, Real(2)), c2));
        Tensor<Real> den = mul(tape,
                               add(tape, add(tape, mul(tape, mu_x, mu_x), mul(tape, mu_y, mu_y)), c1),
                               add(tape, add(tape, var_x, var_y), c2));
        return mean_all(tape, div(tape, num, den));
    }
    // Global mode: single mu/sigma per image, matching the printed formula.
    Tensor<Real> mu_x = mean_all(tape, x);
    Tensor<Real> mu_y = mean_all(tape, y);
    Tensor<Real> var_x = sub(tape, mean_all(tape, mul(tape, x, x)), mul(tape, mu_x, mu_x));
    Tensor<Real> var_y = sub(tape, mean_all(tape, mul(tape, y, y)), mul(tape, mu_y, mu_y));
    Tensor<Real> cov = sub(tape, mean_all(tape, mul(tape, x, y)), mul(tape, mu_x, mu_y));
    Tensor<Real> num = mul(tape, add(tape, mul(tape, two, mul(tape, mu_x, mu_y)), c1),
                           add(tape, mul(tape, two, cov), c2));
    Tensor<Real> den = mul(tape, add(tape, add(tape, mul(tape, mu_x, mu_x), mul(tape, mu_y, mu_y)), c1),
                           add(tape, add(tape, var_x, var_y), c2));
    return div(tape, num, den);
}

template <class Real>
Tensor<Real> l1_loss(Tape<Real>& tape, const Tensor<Real>& pred, const Tensor<Real>& gt) {
    if (!pred.same_shape(gt)) throw DimError("l1_loss: shape mismatch");
    return mean_all(tape, abs_val(tape, sub(tape, pred, gt)));
}

// L_SSIM = 1 - mean SSIM(pred, gt)
template <class Real>
Tensor<Real> ssim_loss(Tape<Real>& tape, const Tensor<Real>& pred, const Tensor<Real>& gt,
                       const SsimConstants& k) {
    Tensor<Real> one = Tensor<Real>::scalar(Real(1));
    return sub(tape, one, ssim_value(tape, pred, gt, k));
}

enum class LossConfig { L1, Ssim, L1Ssim };

inline LossConfig parse_loss_config(const std::string& s) {
    if (s == "l1") return LossConfig::L1;
    if (s == "ssim") return LossConfig::Ssim;
    if (s == "l1+ssim" || s == "l1ssim") return LossConfig::L1Ssim;
    throw UsageError("unknown loss config '" + s + "' (expected l1, ssim or l1+ssim)");
}

template <class Real>
struct LossTerms {
    Tensor<Real> total;
    double l1 = 0.0;    // component values for logging; 0 when not selected
    double ssim = 0.0;
};

// L = L1 + L_SSIM, or either term alone; the unselected term's code path is
// never executed so its parameters stay out of the gradient.
template <class Real>
LossTerms<Real> total_loss(Tape<Real>& tape, const Tensor<Real>& pred, const Tensor<Real>& gt,
                           const SsimConstants& k, LossConfig cfg) {
    LossTerms<Real> out;
    if (cfg == LossConfig::L1) {
        out.total = l1_loss(tape, pred, gt);
        out.l1 = static_cast<double>(out.total.value());
    } else if (cfg == LossConfig::Ssim) {
        out.total = ssim_loss(tape, pred, gt, k);
        out.ssim = static_cast<double>(out.total.value());
    } else {
        Tensor<Real> a = l1_loss(tape, pred, gt);
        Tensor<Real> b = ssim_loss(tape, pred, gt, k);
        out.l1 = static_cast<double>(a.value());
        out.ssim = static_cast<double>(b.value());
        out.total = add(tape, a, b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics (non-differentiable; values clamped to [0,1] first)
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> clamp01(const Tensor<Real>& x) {
    Tensor<Real> out = Tensor<Real>::zeros(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i)
        (*out.data)[i] = std::min(Real(1), std::max(Real(0), (*x.data)[i]));
    return out;
}

template <class Real>
double mae(const Tensor<Real>& pred, const Tensor<Real>& gt) {
    if (!pred.same_shape(gt)) throw DimError("mae: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i)
        acc += std::abs(static_cast<double>((*pred.data)[i]) - static_cast<double>((*gt.data)[i]));
    return acc / static_cast<double>(pred.numel());
}

// 10 log10(1 / MSE), capped at 100 dB when MSE < 1e-10.
template <class Real>
double psnr(const Tensor<Real>& pred, const Tensor<Real>& gt) {
    if (!pred.same_shape(gt)) throw DimError("psnr: shape mismatch");
    Tensor<Real> p = clamp01(pred), g = clamp01(gt);
    double mse = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        double d = static_cast<double>((*p.data)[i]) - static_cast<double>((*g.data)[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(p.numel());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

template <class Real>
double ssim_metric(const Tensor<Real>& x, const Tensor<Real>& y, const SsimConstants& k) {
    Tape<Real> tape;
    return static_cast<double>(ssim_value(tape, clamp01(x), clamp01(y), k).value());
}

struct EvalReport {
    struct Row {
        std::string id;
        double psnr_db = 0.0, ssim = 0.0, mae = 0.0;
    };
    std::vector<Row> rows;

    double mean_psnr() const { return mean([](const Row& r) { return r.psnr_db; }); }
    double mean_ssim() const { return mean([](const Row& r) { return r.ssim; }); }
    double mean_mae() const { return mean([](const Row& r) { return r.mae; }); }

    std::string format_table() const {
        std::ostringstream os;
        os << std::left << std::setw(24) << "image" << std::right << std::setw(10) << "psnr_db"
           << std::setw(10) << "ssim" << std::setw(10) << "mae" << "\n";
        os << std::fixed << std::setprecision(4);
        for (const auto& r : rows)
            os << std::left << std::setw(24) << r.id << std::right << std::setw(10) << r.psnr_db
               << std::setw(10) << r.ssim << std::setw(10) << r.mae << "\n";
        os << std::left << std::setw(24) << "mean" << std::right << std::setw(10) << mean_psnr()
           << std::setw(10) << mean_ssim() << std::setw(10) << mean_mae() << "\n";
        return os.str();
    }

    void write_csv(std::ostream& os) const {
        os << "image,psnr_db,ssim,mae\n";
        os << std::setprecision(10);
        for (const auto& r : rows)
            os << r.id << "," << r.psnr_db << "," << r.ssim << "," << r.mae << "\n";
        os << "mean," << mean_psnr() << "," << mean_ssim() << "," << mean_mae() << "\n";
    }

private:
    template <class Fn>
    double mean(Fn&& fn) const {
        if (rows.empty()) return 0.0;
        double acc = 0.0;
        for (const auto& r : rows) acc += fn(r);
        return acc / static_cast<double>(rows.size());
    }
};

}  // namespace nalsuper

#endif  // NALSUPER_LOSSES_HPP
