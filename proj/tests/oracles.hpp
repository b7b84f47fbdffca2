// Independent reference implementations used as oracles by the tests.
// Plain nested loops over std::vector<double>; no dependency on the tape
// engine beyond reading tensor buffers.

#ifndef NALSUPER_TESTS_ORACLES_HPP
#define NALSUPER_TESTS_ORACLES_HPP

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

// out[co,y,x] = bias[co] + sum_{ci,dy,dx} in[ci,y+dy-p,x+dx-p] w[co,ci,dy,dx]
inline std::vector<double> conv2d(const std::vector<double>& in, int cin, int h, int w,
                                  const std::vector<double>& weight, int cout, int k,
                                  const std::vector<double>& bias, int pad) {
    int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    std::vector<double> out(static_cast<std::size_t>(cout) * ho * wo, 0.0);
    for (int co = 0; co < cout; ++co)
        for (int y = 0; y < ho; ++y)
            for (int x = 0; x < wo; ++x) {
                double acc = bias[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < cin; ++ci)
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                            int iy = y + dy - pad, ix = x + dx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += in[(static_cast<std::size_t>(ci) * h + iy) * w + ix] *
                                   weight[((static_cast<std::size_t>(co) * cin + ci) * k + dy) * k + dx];
                        }
                out[(static_cast<std::size_t>(co) * ho + y) * wo + x] = acc;
            }
    return out;
}

inline std::vector<double> depthwise_conv2d(const std::vector<double>& in, int c, int h, int w,
                                            const std::vector<double>& weight, int k,
                                            const std::vector<double>& bias, int pad) {
    int ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
    std::vector<double> out(static_cast<std::size_t>(c) * ho * wo, 0.0);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < ho; ++y)
            for (int x = 0; x < wo; ++x) {
                double acc = bias[static_cast<std::size_t>(ci)];
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        int iy = y + dy - pad, ix = x + dx - pad;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        acc += in[(static_cast<std::size_t>(ci) * h + iy) * w + ix] *
                               weight[(static_cast<std::size_t>(ci) * k + dy) * k + dx];
                    }
                out[(static_cast<std::size_t>(ci) * ho + y) * wo + x] = acc;
            }
    return out;
}

inline std::vector<double> matmul(const std::vector<double>& a, int m, int k,
                                  const std::vector<double>& b, int n) {
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p)
                out[static_cast<std::size_t>(i) * n + j] +=
                    a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
    return out;
}

inline std::vector<double> softmax_rows(const std::vector<double>& x, int m, int n) {
    std::vector<double> out(x.size());
    for (int i = 0; i < m; ++i) {
        double mx = x[static_cast<std::size_t>(i) * n];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[static_cast<std::size_t>(i) * n + j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            out[static_cast<std::size_t>(i) * n + j] = std::exp(x[static_cast<std::size_t>(i) * n + j] - mx);
            z += out[static_cast<std::size_t>(i) * n + j];
        }
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] /= z;
    }
    return out;
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                      double hi = 1.0) {
    std::vector<double> v(n);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& x : v) x = dist(rng);
    return v;
}

}  // namespace oracle

#endif  // NALSUPER_TESTS_ORACLES_HPP
