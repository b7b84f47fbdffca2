// Text embeddings (frozen stand-in for a pretrained encoder) and the
// cross-attention conditioning that injects them into image features.

#ifndef NALSUPER_TEXT_HPP
#define NALSUPER_TEXT_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "nalsuper/tensor.hpp"

namespace nalsuper {

struct TextEmbedding {
    std::string prompt;
    std::vector<float> vector;  // dimension d_tau, frozen
};

struct EmbeddingSet {
    std::vector<TextEmbedding> entries;
    int d_tau = 0;

    int count() const { return static_cast<int>(entries.size()); }

    void validate() const {
        if (entries.empty()) throw UsageError("EmbeddingSet must contain at least one entry");
        std::set<std::string> prompts;
        for (const auto& e : entries) {
            if (static_cast<int>(e.vector.size()) != d_tau)
                throw DimError("embedding dimension mismatch for prompt '" + e.prompt + "'");
            if (!prompts.insert(e.prompt).second)
                throw UsageError("duplicate prompt '" + e.prompt + "'");
            for (float v : e.vector)
                if (!std::isfinite(v)) throw NumericError("non-finite embedding value");
        }
    }

    // [M, d_tau] constant tensor; never requires grad.
    template <class Real>
    Tensor<Real> as_tensor() const {
        std::vector<Real> vals;
        vals.reserve(static_cast<std::size_t>(count()) * d_tau);
        for (const auto& e : entries)
            for (float v : e.vector) vals.push_back(static_cast<Real>(v));
        return Tensor<Real>::from({count(), d_tau}, std::move(vals));
    }
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Deterministic unit-norm embedding: PRNG seeded from FNV-1a(prompt) XOR seed,
// d_tau standard normals via Box-Muller, then L2 normalization.
inline TextEmbedding test_embedder(const std::string& prompt, int d_tau, std::uint64_t seed) {
    if (prompt.empty()) throw UsageError("test_embedder: empty prompt");
    if (d_tau < 1) throw UsageError("test_embedder: d_tau must be >= 1");
    std::mt19937_64 rng(fnv1a64(prompt) ^ seed);
    auto uniform01 = [&rng]() {
        return (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    };
    std::vector<float> v(static_cast<std::size_t>(d_tau));
    for (int i = 0; i < d_tau; i += 2) {
        double u1 = uniform01(), u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        v[static_cast<std::size_t>(i)] = static_cast<float>(r * std::cos(2.0 * M_PI * u2));
        if (i + 1 < d_tau)
            v[static_cast<std::size_t>(i) + 1] = static_cast<float>(r * std::sin(2.0 * M_PI * u2));
    }
    double norm = 0.0;
    for (float x : v) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    for (float& x : v) x = static_cast<float>(x / norm);
    return {prompt, std::move(v)};
}

inline EmbeddingSet make_test_embedding_set(const std::vector<std::string>& prompts,
                                            int d_tau, std::uint64_t seed) {
    EmbeddingSet set;
    set.d_tau = d_tau;
    for (const auto& p : prompts) set.entries.push_back(test_embedder(p, d_tau, seed));
    set.validate();
    return set;
}

inline std::vector<std::string> default_prompts() {
    return {"normal light image", "low light image"};
}

// ---------------------------------------------------------------------------
// NLSE file format (little-endian):
//   magic "NLSE", version u32=1, M u32, d_tau u32,
//   then M records of [prompt_len u32, prompt bytes, d_tau x f32]
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what, std::streamoff& off) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("truncated file reading ") + what + " at byte offset " +
                          std::to_string(off));
    off += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

inline float get_f32(std::istream& is, const char* what, std::streamoff& off) {
    std::uint32_t u = get_u32(is, what, off);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

}  // namespace detail

inline void write_embeddings(const EmbeddingSet& set, const std::string& path) {
    set.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write("NLSE", 4);
    detail::put_u32(os, 1u);
    detail::put_u32(os, static_cast<std::uint32_t>(set.count()));
    detail::put_u32(os, static_cast<std::uint32_t>(set.d_tau));
    for (const auto& e : set.entries) {
        detail::put_u32(os, static_cast<std::uint32_t>(e.prompt.size()));
        os.write(e.prompt.data(), static_cast<std::streamsize>(e.prompt.size()));
        for (float v : e.vector) detail::put_f32(os, v);
    }
    if (!os) throw FormatError("write failed for '" + path + "'");
}

inline EmbeddingSet load_embeddings(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    std::streamoff off = 0;
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated file reading magic at byte offset 0");
    off += 4;
    if (std::memcmp(magic, "NLSE", 4) != 0)
        throw FormatError("bad magic in '" + path + "' (expected NLSE)");
    std::uint32_t version = detail::get_u32(is, "version", off);
    if (version != 1)
        throw FormatError("unsupported NLSE version " + std::to_string(version));
    std::uint32_t M = detail::get_u32(is, "entry count", off);
    std::uint32_t d_tau = detail::get_u32(is, "d_tau", off);
    EmbeddingSet set;
    set.d_tau = static_cast<int>(d_tau);
    for (std::uint32_t i = 0; i < M; ++i) {
        std::uint32_t plen = detail::get_u32(is, "prompt length", off);
        std::string prompt(plen, '\0');
        if (!is.read(prompt.data(), plen))
            throw FormatError("truncated prompt: expected " + std::to_string(plen) +
                              " bytes at offset " + std::to_string(off) + ", got fewer");
        off += plen;
        std::vector<float> vec(d_tau);
        for (std::uint32_t j = 0; j < d_tau; ++j) vec[j] = detail::get_f32(is, "vector", off);
        set.entries.push_back({std::move(prompt), std::move(vec)});
    }
    set.validate();
    return set;
}

// ---------------------------------------------------------------------------
// Textual Guidance Conditioning Mechanism
// ---------------------------------------------------------------------------

// Single-head cross-attention parameters. B is a per-key bias broadcast over
// all queries; W_out returns the attended vectors to the C-channel stream and
// starts at zero so the whole mechanism is initially the identity.
template <class Real>
struct TcmParams {
    Tensor<Real> w_q;    // [d, C]
    Tensor<Real> w_k;    // [d, d_tau]
    Tensor<Real> w_v;    // [d, d_tau]
    Tensor<Real> bias;   // [1, M]
    Tensor<Real> w_out;  // [C, d]

    int attn_dim() const { return w_q.shape[0]; }
    int channels() const { return w_q.shape[1]; }
    int num_keys() const { return bias.shape[1]; }
};

// feature [C,H,W] -> feature + reshape(softmax(Q K^T / sqrt(d) + B) V W_out^T)
template <class Real>
Tensor<Real> tcm_forward(Tape<Real>& tape, const Tensor<Real>& feature,
                         const Tensor<Real>& text, const TcmParams<Real>& p) {
    if (feature.shape.size() != 3) throw DimError("tcm_forward expects [C,H,W] feature");
    int C = feature.shape[0], H = feature.shape[1], W = feature.shape[2];
    if (C != p.channels())
        throw DimError("tcm_forward: feature channels " + std::to_string(C) +
                       " != d_zeta " + std::to_string(p.channels()));
    if (text.shape.size() != 2 || text.shape[0] != p.num_keys())
        throw DimError("tcm_forward: embedding count mismatch (expected " +
                       std::to_string(p.num_keys()) + ")");
    int d = p.attn_dim();
    int hw = H * W;

    Tensor<Real> tokens = transpose2d(tape, reshape(feature, {C, hw}));   // [HW, C]
    Tensor<Real> q = matmul(tape, tokens, transpose2d(tape, p.w_q));      // [HW, d]
    Tensor<Real> k = matmul(tape, text, transpose2d(tape, p.w_k));        // [M, d]
    Tensor<Real> v = matmul(tape, text, transpose2d(tape, p.w_v));        // [M, d]

    Tensor<Real> scores = scale(tape, matmul(tape, q, transpose2d(tape, k)),
                                Real(1) / std::sqrt(static_cast<Real>(d)));
    scores = add(tape, scores, p.bias);                                   // [HW, M]
    Tensor<Real> attn = softmax_rows(tape, scores);
    Tensor<Real> ctx = matmul(tape, attn, v);                             // [HW, d]
    Tensor<Real> proj = matmul(tape, ctx, transpose2d(tape, p.w_out));    // [HW, C]
    Tensor<Real> injected = reshape(transpose2d(tape, proj), {C, H, W});
    return add(tape, feature, injected);
}

// Same computation, exposing the attention weights for property tests.
template <class Real>
Tensor<Real> tcm_attention_weights(Tape<Real>& tape, const Tensor<Real>& feature,
                                   const Tensor<Real>& text, const TcmParams<Real>& p) {
    int C = feature.shape[0], H = feature.shape[1], W = feature.shape[2];
    int d = p.attn_dim();
    Tensor<Real> tokens = transpose2d(tape, reshape(feature, {C, H * W}));
    Tensor<Real> q = matmul(tape, tokens, transpose2d(tape, p.w_q));
    Tensor<Real> k = matmul(tape, text, transpose2d(tape, p.w_k));
    Tensor<Real> scores = scale(tape, matmul(tape, q, transpose2d(tape, k)),
                                Real(1) / std::sqrt(static_cast<Real>(d)));
    return softmax_rows(tape, add(tape, scores, p.bias));
}

}  // namespace nalsuper

#endif  // NALSUPER_TEXT_HPP
