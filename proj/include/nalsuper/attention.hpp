// Information Fusion Attention: channel attention, pixel attention and the
// cross-layer attention fusion block with its 3x3 layer-correlation matrix.

#ifndef NALSUPER_ATTENTION_HPP
#define NALSUPER_ATTENTION_HPP

#include <cmath>

#include "nalsuper/tensor.hpp"

namespace nalsuper {

template <class Real>
struct ConvParams {
    Tensor<Real> weight;  // [Cout,Cin,k,k]
    Tensor<Real> bias;    // [Cout]
};

template <class Real>
struct ChannelAttentionParams {
    ConvParams<Real> conv1;  // 1x1, C -> C/r
    ConvParams<Real> conv2;  // 1x1, C/r -> C
    int reduction = 1;
};

template <class Real>
struct PixelAttentionParams {
    ConvParams<Real> conv1;  // 1x1, C -> C/r
    ConvParams<Real> conv2;  // 1x1, C/r -> 1
};

enum class DeltaMode { Fixed, Learnable };

template <class Real>
struct CafbParams {
    ConvParams<Real> q_point, k_point, v_point;  // 1x1, 3C -> 3C
    ConvParams<Real> q_depth, k_depth, v_depth;  // depthwise 3x3
    DeltaMode delta_mode = DeltaMode::Fixed;
    Tensor<Real> log_delta;  // scalar, used when learnable; delta = exp(log_delta) > 0
    ConvParams<Real> out_proj;  // 1x1, 3C -> C, zero-initialized
};

// w = sigmoid(conv2(relu(conv1(gap(F))))); output = w (x) F per channel
template <class Real>
Tensor<Real> channel_attention(Tape<Real>& tape, const Tensor<Real>& f,
                               const ChannelAttentionParams<Real>& p) {
    Tensor<Real> g = global_avg_pool(tape, f);                   // [C,1,1]
    Tensor<Real> h = relu(tape, conv2d(tape, g, p.conv1.weight, p.conv1.bias, 0));
    Tensor<Real> w = sigmoid(tape, conv2d(tape, h, p.conv2.weight, p.conv2.bias, 0));
    return mul(tape, f, w);
}

// m = sigmoid(conv2(relu(conv1(F)))) in [1,H,W]; output = m (x) F over channels
template <class Real>
Tensor<Real> pixel_attention(Tape<Real>& tape, const Tensor<Real>& f,
                             const PixelAttentionParams<Real>& p) {
    Tensor<Real> h = relu(tape, conv2d(tape, f, p.conv1.weight, p.conv1.bias, 0));
    Tensor<Real> m = sigmoid(tape, conv2d(tape, h, p.conv2.weight, p.conv2.bias, 0));
    return mul(tape, f, m);
}

namespace detail {

template <class Real>
Tensor<Real> cafb_qkv(Tape<Real>& tape, const Tensor<Real>& f_in,
                      const ConvParams<Real>& point, const ConvParams<Real>& depth) {
    Tensor<Real> h = conv2d(tape, f_in, point.weight, point.bias, 0);
    return depthwise_conv2d(tape, h, depth.weight, depth.bias, 1);
}

}  // namespace detail

// The attention weights A: softmax over rows of Q' K'^T / delta, always 3x3.
template <class Real>
Tensor<Real> cafb_attention_matrix(Tape<Real>& tape, const Tensor<Real>& f_in,
                                   const CafbParams<Real>& p) {
    int C3 = f_in.shape[0], H = f_in.shape[1], W = f_in.shape[2];
    int layer_c = C3 / 3;
    int hwc = layer_c * H * W;
    Tensor<Real> q = reshape(detail::cafb_qkv(tape, f_in, p.q_point, p.q_depth), {3, hwc});
    Tensor<Real> k = reshape(detail::cafb_qkv(tape, f_in, p.k_point, p.k_depth), {3, hwc});
    Tensor<Real> scores = matmul(tape, q, transpose2d(tape, k));  // [3,3]
    if (p.delta_mode == DeltaMode::Fixed) {
        Real delta = std::sqrt(static_cast<Real>(hwc));
        scores = scale(tape, scores, Real(1) / delta);
    } else {
        scores = div(tape, scores, exp_val(tape, p.log_delta));
    }
    return softmax_rows(tape, scores);
}

// F_in = concat(F_i, F_hat, F_tilde); fused = A V reshaped back; the
// residual-added [3C,H,W] map is projected to C channels by out_proj.
template <class Real>
Tensor<Real> cafb(Tape<Real>& tape, const Tensor<Real>& f_i, const Tensor<Real>& f_hat,
                  const Tensor<Real>& f_tilde, const CafbParams<Real>& p) {
    if (!f_i.same_shape(f_hat) || !f_i.same_shape(f_tilde))
        throw DimError("cafb inputs must share shape");
    int C = f_i.shape[0], H = f_i.shape[1], W = f_i.shape[2];
    int hwc = C * H * W;
    Tensor<Real> f_in = concat_channels(tape, {f_i, f_hat, f_tilde});  // [3C,H,W]
    Tensor<Real> a = cafb_attention_matrix(tape, f_in, p);
    Tensor<Real> v = reshape(detail::cafb_qkv(tape, f_in, p.v_point, p.v_depth), {3, hwc});
    Tensor<Real> fused = reshape(matmul(tape, a, v), {3 * C, H, W});
    Tensor<Real> f_out = add(tape, fused, f_in);
    return conv2d(tape, f_out, p.out_proj.weight, p.out_proj.bias, 0);  // [C,H,W]
}

template <class Real>
struct IfaParams {
    ChannelAttentionParams<Real> ca;
    PixelAttentionParams<Real> pa;
    CafbParams<Real> cafb;
};

// CA then PA on the post-TCM feature; CAFB fuses (block input, post-TCM,
// post-CA/PA).
template <class Real>
Tensor<Real> ifa_forward(Tape<Real>& tape, const Tensor<Real>& f_block_in,
                         const Tensor<Real>& f_post_tcm, const IfaParams<Real>& p) {
    Tensor<Real> f_ca = channel_attention(tape, f_post_tcm, p.ca);
    Tensor<Real> f_capa = pixel_attention(tape, f_ca, p.pa);
    return cafb(tape, f_block_in, f_post_tcm, f_capa, p.cafb);
}

}  // namespace nalsuper

#endif  // NALSUPER_ATTENTION_HPP
