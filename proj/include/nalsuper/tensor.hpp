// Dense tensor engine with reverse-mode automatic differentiation.
//
// Tensors are shape + shared contiguous storage. Every differentiable op
// records a backward closure on a Tape; the tape is rebuilt each forward
// pass (define-by-run) and replayed in reverse by Tape::backward.
//
// The scalar type is a template parameter: instantiate with double for
// gradient checks and float for training.

#ifndef NALSUPER_TENSOR_HPP
#define NALSUPER_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nalsuper {

struct DimError : std::runtime_error {
    explicit DimError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw DimError("non-positive dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <class Real>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<Real>> data;
    std::shared_ptr<std::vector<Real>> grad;  // same length as data when present
    bool requires_grad = false;

    Tensor() = default;

    static Tensor zeros(Shape s) {
        Tensor t;
        std::size_t n = shape_numel(s);
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<Real>>(n, Real(0));
        return t;
    }

    static Tensor full(Shape s, Real v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data->begin(), t.data->end(), v);
        return t;
    }

    static Tensor from(Shape s, std::vector<Real> values) {
        if (shape_numel(s) != values.size())
            throw DimError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(s));
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<Real>>(std::move(values));
        return t;
    }

    static Tensor scalar(Real v) { return from({1}, {v}); }

    // A trainable parameter: gradient buffer allocated up front.
    static Tensor param(Shape s, std::vector<Real> values) {
        Tensor t = from(std::move(s), std::move(values));
        t.requires_grad = true;
        t.grad = std::make_shared<std::vector<Real>>(t.data->size(), Real(0));
        return t;
    }

    std::size_t numel() const { return data ? data->size() : 0; }
    Real& at(std::size_t i) { return (*data)[i]; }
    Real at(std::size_t i) const { return (*data)[i]; }

    Real value() const {
        if (numel() != 1) throw UsageError("value() requires a scalar tensor");
        return (*data)[0];
    }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), Real(0));
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// Allocates an op output; outputs that need gradients get a zeroed buffer
// so fan-out accumulation is additive.
template <class Real>
Tensor<Real> make_output(Shape s, bool requires_grad) {
    Tensor<Real> t = Tensor<Real>::zeros(std::move(s));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<Real>>(t.data->size(), Real(0));
    return t;
}

template <class Real>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse.
    void backward(Tensor<Real>& loss) {
        if (loss.numel() != 1) throw UsageError("backward() requires a scalar loss");
        if (!loss.requires_grad || !loss.grad)
            throw UsageError("backward() loss does not require grad");
        (*loss.grad)[0] += Real(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

// ---------------------------------------------------------------------------
// Broadcasting: equal shapes, scalar-with-anything, or same rank with
// per-axis dims equal or 1 (covers [C,1,1] vs [C,H,W] and [1,M] vs [HW,M]).
// ---------------------------------------------------------------------------

namespace detail {

inline Shape pad_rank(const Shape& s, std::size_t rank) {
    if (s.size() == rank) return s;
    if (shape_numel(s) == 1) return Shape(rank, 1);
    throw DimError("broadcast rank mismatch: " + shape_str(s));
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape pa = pad_rank(a, rank), pb = pad_rank(b, rank), out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] == pb[i]) out[i] = pa[i];
        else if (pa[i] == 1) out[i] = pb[i];
        else if (pb[i] == 1) out[i] = pa[i];
        else
            throw DimError("incompatible shapes for broadcast: " + shape_str(a) +
                           " vs " + shape_str(b));
    }
    return out;
}

// Row-major strides with 0 on broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
    Shape p = pad_rank(s, out.size());
    std::vector<std::size_t> st(out.size(), 0);
    std::size_t acc = 1;
    for (int i = static_cast<int>(out.size()) - 1; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] = (p[static_cast<std::size_t>(i)] == 1) ? 0 : acc;
        acc *= static_cast<std::size_t>(p[static_cast<std::size_t>(i)]);
    }
    return st;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <class Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
    auto sa = broadcast_strides(a, out);
    auto sb = broadcast_strides(b, out);
    std::size_t n = shape_numel(out);
    std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t o = 0; o < n; ++o) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t k = 0; k < rank; ++k) {
            ia += idx[k] * sa[k];
            ib += idx[k] * sb[k];
        }
        fn(o, ia, ib);
        for (int k = static_cast<int>(rank) - 1; k >= 0; --k) {
            auto ku = static_cast<std::size_t>(k);
            if (++idx[ku] < static_cast<std::size_t>(out[ku])) break;
            idx[ku] = 0;
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

enum class BinOp { Add, Sub, Mul, Div };

template <class Real>
Tensor<Real> binary(Tape<Real>& tape, BinOp op, const Tensor<Real>& a, const Tensor<Real>& b) {
    Shape out_shape = detail::broadcast_shape(a.shape, b.shape);
    bool req = a.requires_grad || b.requires_grad;
    Tensor<Real> out = make_output<Real>(out_shape, req);
    const auto& av = *a.data;
    const auto& bv = *b.data;
    auto& ov = *out.data;
    detail::for_each_broadcast(out_shape, a.shape, b.shape,
                               [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                   switch (op) {
                                       case BinOp::Add: ov[o] = av[ia] + bv[ib]; break;
                                       case BinOp::Sub: ov[o] = av[ia] - bv[ib]; break;
                                       case BinOp::Mul: ov[o] = av[ia] * bv[ib]; break;
                                       case BinOp::Div: ov[o] = av[ia] / bv[ib]; break;
                                   }
                               });
    if (req) {
        tape.record([op, a, b, out]() {
            const auto& g = *out.grad;
            const auto& av2 = *a.data;
            const auto& bv2 = *b.data;
            auto* ga = (a.requires_grad && a.grad) ? a.grad.get() : nullptr;
            auto* gb = (b.requires_grad && b.grad) ? b.grad.get() : nullptr;
            detail::for_each_broadcast(out.shape, a.shape, b.shape,
                                       [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                           switch (op) {
                                               case BinOp::Add:
                                                   if (ga) (*ga)[ia] += g[o];
                                                   if (gb) (*gb)[ib] += g[o];
                                                   break;
                                               case BinOp::Sub:
                                                   if (ga) (*ga)[ia] += g[o];
                                                   if (gb) (*gb)[ib] -= g[o];
                                                   break;
                                               case BinOp::Mul:
                                                   if (ga) (*ga)[ia] += g[o] * bv2[ib];
                                                   if (gb) (*gb)[ib] += g[o] * av2[ia];
                                                   break;
                                               case BinOp::Div:
                                                   if (ga) (*ga)[ia] += g[o] / bv2[ib];
                                                   if (gb) (*gb)[ib] -= g[o] * av2[ia] / (bv2[ib] * bv2[ib]);
                                                   break;
                                           }
                                       });
        });
    }
    return out;
}

template <class Real>
Tensor<Real> add(Tape<Real>& t, const Tensor<Real>& a, const Tensor<Real>& b) { return binary(t, BinOp::Add, a, b); }
template <class Real>
Tensor<Real> sub(Tape<Real>& t, const Tensor<Real>& a, const Tensor<Real>& b) { return binary(t, BinOp::Sub, a, b); }
template <class Real>
Tensor<Real> mul(Tape<Real>& t, const Tensor<Real>& a, const Tensor<Real>& b) { return binary(t, BinOp::Mul, a, b); }
template <class Real>
Tensor<Real> div(Tape<Real>& t, const Tensor<Real>& a, const Tensor<Real>& b) { return binary(t, BinOp::Div, a, b); }

template <class Real>
Tensor<Real> scale(Tape<Real>& tape, const Tensor<Real>& x, Real c) {
    Tensor<Real> out = make_output<Real>(x.shape, x.requires_grad);
    for (std::size_t i = 0; i < x.numel(); ++i) (*out.data)[i] = (*x.data)[i] * c;
    if (out.requires_grad) {
        tape.record([x, out, c]() {
            if (!x.grad) return;
            for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += (*out.grad)[i] * c;
        });
    }
    return out;
}

template <class Real>
Tensor<Real> relu(Tape<Real>& tape, const Tensor<Real>& x) {
    Tensor<Real> out = make_output<Real>(x.shape, x.requires_grad);
    for (std::size_t i = 0; i < x.numel(); ++i)
        (*out.data)[i] = (*x.data)[i] > Real(0) ? (*x.data)[i] : Real(0);
    if (out.requires_grad) {
        // subgradient at exactly 0 is 0
        tape.record([x, out]() {
            if (!x.grad) return;
            for (std::size_t i = 0; i < x.numel(); ++i)
                if ((*x.data)[i] > Real(0)) (*x.grad)[i] += (*out.grad)[i];
        });
    }
    return out;
}

template <class Real>
Tensor<Real> sigmoid(Tape<Real>& tape, const Tensor<Real>& x) {
    Tensor<Real> out = make_output<Real>(x.shape, x.requires_grad);
    for (std::size_t i = 0; i < x.numel(); ++i)
        (*out.data)[i] = Real(1) / (Real(1) + std::exp(-(*x.data)[i]));
    if (out.requires_grad) {
        tape.record([x, out]() {
            if (!x.grad) return;
            for (std::size_t i = 0; i < x.numel(); ++i) {
                Real s = (*out.data)[i];
                (*x.grad)[i] += (*out.grad)[i] * s * (Real(1) - s);
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> abs_val(Tape<Real>& tape, const Tensor<Real>& x) {
    Tensor<Real> out = make_output<Real>(x.shape, x.requires_grad);
    for (std::size_t i = 0; i < x.numel(); ++i) (*out.data)[i] = std::abs((*x.data)[i]);
    if (out.requires_grad) {
        // sign subgradient, 0 at ties
        tape.record([x, out]() {
            if (!x.grad) return;
            for (std::size_t i = 0; i < x.numel(); ++i) {
                Real v = (*x.data)[i];
                Real s = v > Real(0) ? Real(1) : (v < Real(0) ? Real(-1) : Real(0));
                (*x.grad)[i] += (*out.grad)[i] * s;
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> exp_val(Tape<Real>& tape, const Tensor<Real>& x) {
    Tensor<Real> out = make_output<Real>(x.shape, x.requires_grad);
    for (std::size_t i = 0; i < x.numel(); ++i) (*out.data)[i] = std::exp((*x.data)[i]);
    if (out.requires_grad) {
        tape.record([x, out]() {
            if (!x.grad) return;
            for (std::size_t i = 0; i < x.numel(); ++i)
                (*x.grad)[i] += (*out.grad)[i] * (*out.data)[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> sum_all(Tape<Real>& tape, const Tensor<Real>& x) {
    Tensor<Real> out = make_output<Real>({1}, x.requires_grad);
    Real acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += (*x.data)[i];
    (*out.data)[0] = acc;
    if (out.requires_grad) {
        tape.record([x, out]() {
            if (!x.grad) return;
            Real g = (*out.grad)[0];
            for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += g;
        });
    }
    return out;
}

template <class Real>
Tensor<Real> mean_all(Tape<Real>& tape, const Tensor<Real>& x) {
    return scale(tape, sum_all(tape, x), Real(1) / static_cast<Real>(x.numel()));
}

// g_c = (1/(H*W)) * sum_{i,j} X_c(i,j)
template <class Real>
Tensor<Real> global_avg_pool(Tape<Real>& tape, const Tensor<Real>& x) {
    if (x.shape.size() != 3) throw DimError("global_avg_pool expects [C,H,W]");
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor<Real> out = make_output<Real>({C, 1, 1}, x.requires_grad);
    for (int c = 0; c < C; ++c) {
        Real acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += (*x.data)[c * plane + i];
        (*out.data)[static_cast<std::size_t>(c)] = acc / static_cast<Real>(plane);
    }
    if (out.requires_grad) {
        tape.record([x, out, C, plane]() {
            if (!x.grad) return;
            for (int c = 0; c < C; ++c) {
                Real g = (*out.grad)[static_cast<std::size_t>(c)] / static_cast<Real>(plane);
                for (std::size_t i = 0; i < plane; ++i) (*x.grad)[c * plane + i] += g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> matmul(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2)
        throw DimError("matmul expects 2-D operands");
    int m = a.shape[0], k = a.shape[1], k2 = b.shape[0], n = b.shape[1];
    if (k != k2)
        throw DimError("matmul inner dimension mismatch: " + shape_str(a.shape) +
                       " x " + shape_str(b.shape));
    Tensor<Real> out = make_output<Real>({m, n}, a.requires_grad || b.requires_grad);
    const auto& av = *a.data;
    const auto& bv = *b.data;
    auto& ov = *out.data;
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            Real aip = av[static_cast<std::size_t>(i) * k + p];
            if (aip == Real(0)) continue;
            for (int j = 0; j < n; ++j)
                ov[static_cast<std::size_t>(i) * n + j] += aip * bv[static_cast<std::size_t>(p) * n + j];
        }
    if (out.requires_grad) {
        tape.record([a, b, out, m, k, n]() {
            const auto& g = *out.grad;
            if (a.grad && a.requires_grad) {
                // dA = G * B^T
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        Real acc = 0;
                        for (int j = 0; j < n; ++j)
                            acc += g[static_cast<std::size_t>(i) * n + j] *
                                   (*b.data)[static_cast<std::size_t>(p) * n + j];
                        (*a.grad)[static_cast<std::size_t>(i) * k + p] += acc;
                    }
            }
            if (b.grad && b.requires_grad) {
                // dB = A^T * G
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        Real acc = 0;
                        for (int i = 0; i < m; ++i)
                            acc += (*a.data)[static_cast<std::size_t>(i) * k + p] *
                                   g[static_cast<std::size_t>(i) * n + j];
                        (*b.grad)[static_cast<std::size_t>(p) * n + j] += acc;
                    }
            }
        });
    }
    return out;
}

// Row-wise softmax with max subtraction.
template <class Real>
Tensor<Real> softmax_rows(Tape<Real>& tape, const Tensor<Real>& x) {
    if (x.shape.size() != 2) throw DimError("softmax_rows expects [m,n]");
    int m = x.shape[0], n = x.shape[1];
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (std::isnan(static_cast<double>((*x.data)[i])))
            throw NumericError("softmax_rows: NaN input");
    Tensor<Real> out = make_output<Real>(x.shape, x.requires_grad);
    for (int i = 0; i < m; ++i) {
        const Real* row = x.data->data() + static_cast<std::size_t>(i) * n;
        Real* orow = out.data->data() + static_cast<std::size_t>(i) * n;
        Real mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        Real z = 0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            z += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= z;
    }
    if (out.requires_grad) {
        tape.record([x, out, m, n]() {
            if (!x.grad) return;
            for (int i = 0; i < m; ++i) {
                const Real* y = out.data->data() + static_cast<std::size_t>(i) * n;
                const Real* g = out.grad->data() + static_cast<std::size_t>(i) * n;
                Real dot = 0;
                for (int j = 0; j < n; ++j) dot += g[j] * y[j];
                Real* gx = x.grad->data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

// Contiguous view sharing data and grad buffers; no tape node needed.
template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimError("reshape element-count mismatch: " + shape_str(x.shape) +
                       " -> " + shape_str(new_shape));
    Tensor<Real> out = x;
    out.shape = std::move(new_shape);
    return out;
}

template <class Real>
Tensor<Real> permute(Tape<Real>& tape, const Tensor<Real>& x, const std::vector<int>& axes) {
    std::size_t rank = x.shape.size();
    if (axes.size() != rank) throw DimError("permute axes rank mismatch");
    std::vector<bool> seen(rank, false);
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        int a = axes[i];
        if (a < 0 || static_cast<std::size_t>(a) >= rank || seen[static_cast<std::size_t>(a)])
            throw DimError("permute axes invalid");
        seen[static_cast<std::size_t>(a)] = true;
        out_shape[i] = x.shape[static_cast<std::size_t>(a)];
    }
    std::vector<std::size_t> in_strides(rank), out_strides(rank);
    std::size_t acc = 1;
    for (int i = static_cast<int>(rank) - 1; i >= 0; --i) {
        in_strides[static_cast<std::size_t>(i)] = acc;
        acc *= static_cast<std::size_t>(x.shape[static_cast<std::size_t>(i)]);
    }
    acc = 1;
    for (int i = static_cast<int>(rank) - 1; i >= 0; --i) {
        out_strides[static_cast<std::size_t>(i)] = acc;
        acc *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(i)]);
    }
    // mapping: out index (i0..ik) reads in index with axis axes[j] = ij
    Tensor<Real> out = make_output<Real>(out_shape, x.requires_grad);
    std::size_t n = x.numel();
    std::vector<std::size_t> idx(rank, 0);
    auto in_offset = [&](const std::vector<std::size_t>& oi) {
        std::size_t off = 0;
        for (std::size_t j = 0; j < rank; ++j)
            off += oi[j] * in_strides[static_cast<std::size_t>(axes[j])];
        return off;
    };
    for (std::size_t o = 0; o < n; ++o) {
        (*out.data)[o] = (*x.data)[in_offset(idx)];
        for (int k = static_cast<int>(rank) - 1; k >= 0; --k) {
            auto ku = static_cast<std::size_t>(k);
            if (++idx[ku] < static_cast<std::size_t>(out_shape[ku])) break;
            idx[ku] = 0;
        }
    }
    if (out.requires_grad) {
        tape.record([x, out, axes, out_shape, in_strides]() {
            if (!x.grad) return;
            std::size_t rank2 = out_shape.size();
            std::vector<std::size_t> idx2(rank2, 0);
            std::size_t n2 = out.numel();
            for (std::size_t o = 0; o < n2; ++o) {
                std::size_t off = 0;
                for (std::size_t j = 0; j < rank2; ++j)
                    off += idx2[j] * in_strides[static_cast<std::size_t>(axes[j])];
                (*x.grad)[off] += (*out.grad)[o];
                for (int k = static_cast<int>(rank2) - 1; k >= 0; --k) {
                    auto ku = static_cast<std::size_t>(k);
                    if (++idx2[ku] < static_cast<std::size_t>(out_shape[ku])) break;
                    idx2[ku] = 0;
                }
            }
        });
    }
    return out;
}

template <class Real>
Tensor<Real> transpose2d(Tape<Real>& tape, const Tensor<Real>& x) {
    if (x.shape.size() != 2) throw DimError("transpose2d expects [m,n]");
    return permute(tape, x, {1, 0});
}

template <class Real>
Tensor<Real> concat_channels(Tape<Real>& tape, const std::vector<Tensor<Real>>& xs) {
    if (xs.empty()) throw DimError("concat_channels needs at least one input");
    int H = xs[0].shape.size() == 3 ? xs[0].shape[1] : -1;
    int W = xs[0].shape.size() == 3 ? xs[0].shape[2] : -1;
    int C_total = 0;
    bool req = false;
    for (const auto& x : xs) {
        if (x.shape.size() != 3) throw DimError("concat_channels expects [C,H,W] inputs");
        if (x.shape[1] != H || x.shape[2] != W)
            throw DimError("concat_channels spatial mismatch: " + shape_str(x.shape));
        C_total += x.shape[0];
        req = req || x.requires_grad;
    }
    Tensor<Real> out = make_output<Real>({C_total, H, W}, req);
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x.data->begin(), x.data->end(), out.data->begin() + static_cast<std::ptrdiff_t>(off));
        off += x.numel();
    }
    if (req) {
        tape.record([xs, out]() {
            std::size_t off2 = 0;
            for (const auto& x : xs) {
                if (x.grad && x.requires_grad)
                    for (std::size_t i = 0; i < x.numel(); ++i)
                        (*x.grad)[i] += (*out.grad)[off2 + i];
                off2 += x.numel();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> conv2d(Tape<Real>& tape, const Tensor<Real>& input, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, int padding) {
    if (input.shape.size() != 3) throw DimError("conv2d input must be [C,H,W]");
    if (weight.shape.size() != 4) throw DimError("conv2d weight must be [Cout,Cin,k,k]");
    int Cin = input.shape[0], H = input.shape[1], W = input.shape[2];
    int Cout = weight.shape[0], k = weight.shape[2];
    if (weight.shape[1] != Cin)
        throw DimError("conv2d channel mismatch: weight Cin " + std::to_string(weight.shape[1]) +
                       " vs input " + std::to_string(Cin));
    if (weight.shape[3] != k) throw DimError("conv2d kernel must be square");
    if (bias.numel() != static_cast<std::size_t>(Cout))
        throw DimError("conv2d bias size mismatch");
    int Ho = H + 2 * padding - k + 1, Wo = W + 2 * padding - k + 1;
    if (Ho < 1 || Wo < 1) throw DimError("conv2d output would be empty");
    bool req = input.requires_grad || weight.requires_grad || bias.requires_grad;
    Tensor<Real> out = make_output<Real>({Cout, Ho, Wo}, req);
    const auto& in = *input.data;
    const auto& w = *weight.data;
    auto& o = *out.data;
    auto in_at = [&](int c, int y, int x) -> Real {
        if (y < 0 || y >= H || x < 0 || x >= W) return Real(0);
        return in[(static_cast<std::size_t>(c) * H + y) * W + x];
    };
    for (int co = 0; co < Cout; ++co)
        for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) {
                Real acc = (*bias.data)[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx)
                            acc += in_at(ci, y + dy - padding, x + dx - padding) *
                                   w[((static_cast<std::size_t>(co) * Cin + ci) * k + dy) * k + dx];
                o[(static_cast<std::size_t>(co) * Ho + y) * Wo + x] = acc;
            }
    if (req) {
        tape.record([input, weight, bias, out, padding, Cin, H, W, Cout, k, Ho, Wo]() {
            const auto& g = *out.grad;
            for (int co = 0; co < Cout; ++co)
                for (int y = 0; y < Ho; ++y)
                    for (int x = 0; x < Wo; ++x) {
                        Real go = g[(static_cast<std::size_t>(co) * Ho + y) * Wo + x];
                        if (bias.grad && bias.requires_grad)
                            (*bias.grad)[static_cast<std::size_t>(co)] += go;
                        for (int ci = 0; ci < Cin; ++ci)
                            for (int dy = 0; dy < k; ++dy)
                                for (int dx = 0; dx < k; ++dx) {
                                    int iy = y + dy - padding, ix = x + dx - padding;
                                    if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                    std::size_t ii = (static_cast<std::size_t>(ci) * H + iy) * W + ix;
                                    std::size_t wi = ((static_cast<std::size_t>(co) * Cin + ci) * k + dy) * k + dx;
                                    if (weight.grad && weight.requires_grad)
                                        (*weight.grad)[wi] += go * (*input.data)[ii];
                                    if (input.grad && input.requires_grad)
                                        (*input.grad)[ii] += go * (*weight.data)[wi];
                                }
                    }
        });
    }
    return out;
}

// Per-channel spatial convolution, no cross-channel mixing.
template <class Real>
Tensor<Real> depthwise_conv2d(Tape<Real>& tape, const Tensor<Real>& input,
                              const Tensor<Real>& weight, const Tensor<Real>& bias,
                              int padding) {
    if (input.shape.size() != 3) throw DimError("depthwise_conv2d input must be [C,H,W]");
    if (weight.shape.size() != 4 || weight.shape[1] != 1)
        throw DimError("depthwise_conv2d weight must be [C,1,k,k]");
    int C = input.shape[0], H = input.shape[1], W = input.shape[2];
    int k = weight.shape[2];
    if (weight.shape[0] != C)
        throw DimError("depthwise_conv2d channel mismatch: weight " + std::to_string(weight.shape[0]) +
                       " vs input " + std::to_string(C));
    if (bias.numel() != static_cast<std::size_t>(C))
        throw DimError("depthwise_conv2d bias size mismatch");
    int Ho = H + 2 * padding - k + 1, Wo = W + 2 * padding - k + 1;
    if (Ho < 1 || Wo < 1) throw DimError("depthwise_conv2d output would be empty");
    bool req = input.requires_grad || weight.requires_grad || bias.requires_grad;
    Tensor<Real> out = make_output<Real>({C, Ho, Wo}, req);
    const auto& in = *input.data;
    const auto& w = *weight.data;
    auto& o = *out.data;
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < Ho; ++y)
            for (int x = 0; x < Wo; ++x) {
                Real acc = (*bias.data)[static_cast<std::size_t>(c)];
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx) {
                        int iy = y + dy - padding, ix = x + dx - padding;
                        if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                        acc += in[(static_cast<std::size_t>(c) * H + iy) * W + ix] *
                               w[(static_cast<std::size_t>(c) * k + dy) * k + dx];
                    }
                o[(static_cast<std::size_t>(c) * Ho + y) * Wo + x] = acc;
            }
    if (req) {
        tape.record([input, weight, bias, out, padding, C, H, W, k, Ho, Wo]() {
            const auto& g = *out.grad;
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < Ho; ++y)
                    for (int x = 0; x < Wo; ++x) {
                        Real go = g[(static_cast<std::size_t>(c) * Ho + y) * Wo + x];
                        if (bias.grad && bias.requires_grad)
                            (*bias.grad)[static_cast<std::size_t>(c)] += go;
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx) {
                                int iy = y + dy - padding, ix = x + dx - padding;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                std::size_t ii = (static_cast<std::size_t>(c) * H + iy) * W + ix;
                                std::size_t wi = (static_cast<std::size_t>(c) * k + dy) * k + dx;
                                if (weight.grad && weight.requires_grad)
                                    (*weight.grad)[wi] += go * (*input.data)[ii];
                                if (input.grad && input.requires_grad)
                                    (*input.grad)[ii] += go * (*weight.data)[wi];
                            }
                    }
        });
    }
    return out;
}

}  // namespace nalsuper

#endif  // NALSUPER_TENSOR_HPP
