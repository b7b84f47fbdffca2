// Finite-difference verification of analytic gradients.

#ifndef NALSUPER_GRADCHECK_HPP
#define NALSUPER_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "nalsuper/tensor.hpp"

namespace nalsuper {

// Evaluates a scalar function of the given parameters. The function must
// rebuild its computation on the supplied tape each call.
using ScalarFn = std::function<Tensor<double>(Tape<double>&)>;

// Central differences (f(p+h) - f(p-h)) / (2h) per coordinate, compared to
// the analytic gradients. The error is measured per parameter tensor as
// ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, 1e-8),
// so coordinates whose true gradient is tiny are judged against the tensor's
// overall gradient scale instead of amplifying finite-difference roundoff.
inline double finite_diff_check(const std::vector<Tensor<double>>& params,
                                const ScalarFn& f, double h = 1e-5) {
    for (const auto& p : params) const_cast<Tensor<double>&>(p).zero_grad();
    {
        Tape<double> tape;
        Tensor<double> loss = f(tape);
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(*p.grad);

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& buf = *params[pi].data;
        double diff_inf = 0.0, scale = 1e-8;
        for (std::size_t i = 0; i < buf.size(); ++i) {
            double saved = buf[i];
            buf[i] = saved + h;
            Tape<double> tp;
            double fp = f(tp).value();
            buf[i] = saved - h;
            Tape<double> tm;
            double fm = f(tm).value();
            buf[i] = saved;
            double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[pi][i];
            diff_inf = std::max(diff_inf, std::abs(a - numeric));
            scale = std::max({scale, std::abs(a), std::abs(numeric)});
        }
        max_rel = std::max(max_rel, diff_inf / scale);
    }
    return max_rel;
}

}  // namespace nalsuper

#endif  // NALSUPER_GRADCHECK_HPP
