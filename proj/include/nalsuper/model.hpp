// NaLSuper model: shallow 3x3 projection, N residual text-guided fusion
// blocks, channel concatenation of all block outputs, reconstruction convs
// and a global residual. Fresh models are exact identities thanks to the
// zero-initialized output projections.

#ifndef NALSUPER_MODEL_HPP
#define NALSUPER_MODEL_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nalsuper/attention.hpp"
#include "nalsuper/losses.hpp"
#include "nalsuper/tensor.hpp"
#include "nalsuper/text.hpp"

namespace nalsuper {

struct ModelConfig {
    int channels = 8;       // C
    int num_blocks = 3;     // N
    int attention_dim = 16; // d
    int d_tau = 32;
    int reduction = 1;      // r
    DeltaMode delta_mode = DeltaMode::Fixed;
    SsimWindow ssim_window = SsimWindow::Gaussian11;
    std::uint64_t seed = 0;

    void validate() const {
        if (channels < 1 || num_blocks < 1 || attention_dim < 1 || d_tau < 1 || reduction < 1)
            throw UsageError("ModelConfig: all dimensions must be positive");
        if (channels % reduction != 0)
            throw UsageError("ModelConfig: channels must be divisible by reduction");
    }
};

template <class Real>
struct RtfbParams {
    ConvParams<Real> pre_conv;  // 3x3, C -> C
    TcmParams<Real> tcm;
    IfaParams<Real> ifa;
};

template <class Real>
struct ParamRef {
    std::string name;
    Tensor<Real> tensor;
};

template <class Real>
struct NaLSuperModel {
    ModelConfig config;
    ConvParams<Real> shallow;               // 3x3, 3 -> C
    std::vector<RtfbParams<Real>> blocks;
    ConvParams<Real> recon1;                // 1x1, N*C -> C
    ConvParams<Real> recon2;                // 3x3, C -> 3, zero-initialized
    EmbeddingSet embeddings;
    Tensor<Real> text;                      // [M, d_tau] constant view of embeddings

    std::vector<ParamRef<Real>> parameters() {
        std::vector<ParamRef<Real>> out;
        auto conv = [&out](const std::string& prefix, ConvParams<Real>& c) {
            out.push_back({prefix + ".weight", c.weight});
            out.push_back({prefix + ".bias", c.bias});
        };
        conv("shallow", shallow);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            std::string b = "block" + std::to_string(i);
            auto& blk = blocks[i];
            conv(b + ".pre_conv", blk.pre_conv);
            out.push_back({b + ".tcm.w_q", blk.tcm.w_q});
            out.push_back({b + ".tcm.w_k", blk.tcm.w_k});
            out.push_back({b + ".tcm.w_v", blk.tcm.w_v});
            out.push_back({b + ".tcm.bias", blk.tcm.bias});
            out.push_back({b + ".tcm.w_out", blk.tcm.w_out});
            conv(b + ".ca.conv1", blk.ifa.ca.conv1);
            conv(b + ".ca.conv2", blk.ifa.ca.conv2);
            conv(b + ".pa.conv1", blk.ifa.pa.conv1);
            conv(b + ".pa.conv2", blk.ifa.pa.conv2);
            conv(b + ".cafb.q_point", blk.ifa.cafb.q_point);
            conv(b + ".cafb.k_point", blk.ifa.cafb.k_point);
            conv(b + ".cafb.v_point", blk.ifa.cafb.v_point);
            conv(b + ".cafb.q_depth", blk.ifa.cafb.q_depth);
            conv(b + ".cafb.k_depth", blk.ifa.cafb.k_depth);
            conv(b + ".cafb.v_depth", blk.ifa.cafb.v_depth);
            if (config.delta_mode == DeltaMode::Learnable)
                out.push_back({b + ".cafb.log_delta", blk.ifa.cafb.log_delta});
            conv(b + ".cafb.out_proj", blk.ifa.cafb.out_proj);
        }
        conv("recon1", recon1);
        conv("recon2", recon2);
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.tensor.zero_grad();
    }
};

namespace detail {

// Fan-in uniform init; draws go through float so parameters survive the f32
// checkpoint payload bit-exactly in every precision mode.
template <class Real>
class ParamInit {
public:
    explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

    Tensor<Real> uniform(Shape s, int fan_in) {
        double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::size_t n = shape_numel(s);
        std::vector<Real> v(n);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& x : v) x = static_cast<Real>(static_cast<float>(dist(rng_)));
        return Tensor<Real>::param(std::move(s), std::move(v));
    }

    Tensor<Real> zeros(Shape s) {
        std::size_t n = shape_numel(s);
        return Tensor<Real>::param(std::move(s), std::vector<Real>(n, Real(0)));
    }

    ConvParams<Real> conv(int c_out, int c_in, int k) {
        return {uniform({c_out, c_in, k, k}, c_in * k * k), zeros({c_out})};
    }

    ConvParams<Real> zero_conv(int c_out, int c_in, int k) {
        return {zeros({c_out, c_in, k, k}), zeros({c_out})};
    }

    ConvParams<Real> depthwise(int c, int k) {
        return {uniform({c, 1, k, k}, k * k), zeros({c})};
    }

private:
    std::mt19937_64 rng_;
};

}  // namespace detail

template <class Real>
NaLSuperModel<Real> init_model(const ModelConfig& config, const EmbeddingSet& embeddings) {
    config.validate();
    embeddings.validate();
    if (embeddings.d_tau != config.d_tau)
        throw UsageError("embedding d_tau " + std::to_string(embeddings.d_tau) +
                         " != config d_tau " + std::to_string(config.d_tau));
    int C = config.channels, N = config.num_blocks, d = config.attention_dim;
    int r = config.reduction, d_tau = config.d_tau, M = embeddings.count();

    NaLSuperModel<Real> m;
    m.config = config;
    m.embeddings = embeddings;
    m.text = embeddings.as_tensor<Real>();
    detail::ParamInit<Real> init(config.seed);

    m.shallow = init.conv(C, 3, 3);
    for (int i = 0; i < N; ++i) {
        RtfbParams<Real> blk;
        blk.pre_conv = init.conv(C, C, 3);
        blk.tcm.w_q = init.uniform({d, C}, C);
        blk.tcm.w_k = init.uniform({d, d_tau}, d_tau);
        blk.tcm.w_v = init.uniform({d, d_tau}, d_tau);
        blk.tcm.bias = init.zeros({1, M});
        blk.tcm.w_out = init.zeros({C, d});
        blk.ifa.ca.reduction = r;
        blk.ifa.ca.conv1 = init.conv(C / r, C, 1);
        blk.ifa.ca.conv2 = init.conv(C, C / r, 1);
        blk.ifa.pa.conv1 = init.conv(C / r, C, 1);
        blk.ifa.pa.conv2 = init.conv(1, C / r, 1);
        blk.ifa.cafb.q_point = init.conv(3 * C, 3 * C, 1);
        blk.ifa.cafb.k_point = init.conv(3 * C, 3 * C, 1);
        blk.ifa.cafb.v_point = init.conv(3 * C, 3 * C, 1);
        blk.ifa.cafb.q_depth = init.depthwise(3 * C, 3);
        blk.ifa.cafb.k_depth = init.depthwise(3 * C, 3);
        blk.ifa.cafb.v_depth = init.depthwise(3 * C, 3);
        blk.ifa.cafb.delta_mode = config.delta_mode;
        blk.ifa.cafb.log_delta = init.zeros({1});
        blk.ifa.cafb.out_proj = init.zero_conv(C, 3 * C, 1);
        m.blocks.push_back(std::move(blk));
    }
    m.recon1 = init.conv(C, N * C, 1);
    m.recon2 = init.zero_conv(3, C, 3);
    return m;
}

// F_a = relu(pre_conv(F_prev)); F_b = TCM(F_a); F_c = IFA(F_prev, F_b);
// returns F_prev + F_c (local residual).
template <class Real>
Tensor<Real> rtfb_forward(Tape<Real>& tape, const Tensor<Real>& f_prev,
                          const RtfbParams<Real>& blk, const Tensor<Real>& text) {
    Tensor<Real> f_a = relu(tape, conv2d(tape, f_prev, blk.pre_conv.weight, blk.pre_conv.bias, 1));
    Tensor<Real> f_b = tcm_forward(tape, f_a, text, blk.tcm);
    Tensor<Real> f_c = ifa_forward(tape, f_prev, f_b, blk.ifa);
    return add(tape, f_prev, f_c);
}

template <class Real>
Tensor<Real> forward(Tape<Real>& tape, NaLSuperModel<Real>& m, const Tensor<Real>& i_low) {
    if (i_low.shape.size() != 3 || i_low.shape[0] != 3)
        throw DimError("forward expects a [3,H,W] input, got " + shape_str(i_low.shape));
    if (i_low.shape[1] < 3 || i_low.shape[2] < 3)
        throw DimError("forward requires H,W >= 3");
    Tensor<Real> f = conv2d(tape, i_low, m.shallow.weight, m.shallow.bias, 1);
    std::vector<Tensor<Real>> features;
    features.reserve(m.blocks.size());
    for (auto& blk : m.blocks) {
        f = rtfb_forward(tape, f, blk, m.text);
        features.push_back(f);
    }
    Tensor<Real> f_con = concat_channels(tape, features);
    Tensor<Real> h = relu(tape, conv2d(tape, f_con, m.recon1.weight, m.recon1.bias, 0));
    Tensor<Real> delta = conv2d(tape, h, m.recon2.weight, m.recon2.bias, 1);
    return add(tape, i_low, delta);
}

// ---------------------------------------------------------------------------
// NLSC checkpoint format (little-endian):
//   magic "NLSC", version u32=1, manifest_len u32 + key=value lines,
//   param_count u32, then per parameter
//   [name_len u32, name, rank u32, dims u32..., f32 payload]
// ---------------------------------------------------------------------------

struct CheckpointInfo {
    ModelConfig config;
    int num_prompts = 0;
};

namespace detail {

inline std::string config_manifest(const ModelConfig& c, int num_prompts) {
    std::ostringstream os;
    os << "channels=" << c.channels << "\n"
       << "num_blocks=" << c.num_blocks << "\n"
       << "attention_dim=" << c.attention_dim << "\n"
       << "d_tau=" << c.d_tau << "\n"
       << "reduction=" << c.reduction << "\n"
       << "delta_mode=" << (c.delta_mode == DeltaMode::Fixed ? "fixed" : "learnable") << "\n"
       << "ssim_window=" << (c.ssim_window == SsimWindow::Gaussian11 ? "gaussian11" : "global") << "\n"
       << "seed=" << c.seed << "\n"
       << "num_prompts=" << num_prompts << "\n";
    return os.str();
}

inline CheckpointInfo parse_manifest(const std::string& manifest) {
    std::map<std::string, std::string> kv;
    std::istringstream is(manifest);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&kv](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("checkpoint manifest missing key '" + key + "'");
        return it->second;
    };
    CheckpointInfo info;
    info.config.channels = std::stoi(need("channels"));
    info.config.num_blocks = std::stoi(need("num_blocks"));
    info.config.attention_dim = std::stoi(need("attention_dim"));
    info.config.d_tau = std::stoi(need("d_tau"));
    info.config.reduction = std::stoi(need("reduction"));
    info.config.delta_mode = need("delta_mode") == "learnable" ? DeltaMode::Learnable : DeltaMode::Fixed;
    info.config.ssim_window = need("ssim_window") == "global" ? SsimWindow::Global : SsimWindow::Gaussian11;
    info.config.seed = std::stoull(need("seed"));
    info.num_prompts = std::stoi(need("num_prompts"));
    return info;
}

}  // namespace detail

template <class Real>
void save_checkpoint(NaLSuperModel<Real>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write("NLSC", 4);
    detail::put_u32(os, 1u);
    std::string manifest = detail::config_manifest(m.config, m.embeddings.count());
    detail::put_u32(os, static_cast<std::uint32_t>(manifest.size()));
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    auto params = m.parameters();
    detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (auto& p : params) {
        detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(p.tensor.shape.size()));
        for (int dim : p.tensor.shape) detail::put_u32(os, static_cast<std::uint32_t>(dim));
        for (std::size_t i = 0; i < p.tensor.numel(); ++i)
            detail::put_f32(os, static_cast<float>((*p.tensor.data)[i]));
    }
    if (!os) throw FormatError("write failed for '" + path + "'");
}

inline CheckpointInfo read_checkpoint_header(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    std::streamoff off = 0;
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated checkpoint reading magic");
    off += 4;
    if (std::memcmp(magic, "NLSC", 4) != 0)
        throw FormatError("bad magic in '" + path + "' (expected NLSC)");
    std::uint32_t version = detail::get_u32(is, "version", off);
    if (version != 1) throw FormatError("unsupported NLSC version " + std::to_string(version));
    std::uint32_t mlen = detail::get_u32(is, "manifest length", off);
    std::string manifest(mlen, '\0');
    if (!is.read(manifest.data(), mlen)) throw FormatError("truncated checkpoint manifest");
    return detail::parse_manifest(manifest);
}

// Overwrites the model's parameters from the file; the manifest and every
// parameter name/shape must match the model exactly.
template <class Real>
void restore_into(NaLSuperModel<Real>& m, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    std::streamoff off = 0;
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated checkpoint reading magic");
    off += 4;
    if (std::memcmp(magic, "NLSC", 4) != 0)
        throw FormatError("bad magic in '" + path + "' (expected NLSC)");
    std::uint32_t version = detail::get_u32(is, "version", off);
    if (version != 1) throw FormatError("unsupported NLSC version " + std::to_string(version));
    std::uint32_t mlen = detail::get_u32(is, "manifest length", off);
    std::string manifest(mlen, '\0');
    if (!is.read(manifest.data(), mlen)) throw FormatError("truncated checkpoint manifest");
    off += mlen;
    CheckpointInfo info = detail::parse_manifest(manifest);
    if (info.config.channels != m.config.channels || info.config.num_blocks != m.config.num_blocks ||
        info.config.attention_dim != m.config.attention_dim || info.config.d_tau != m.config.d_tau ||
        info.config.reduction != m.config.reduction || info.num_prompts != m.embeddings.count())
        throw FormatError("checkpoint config does not match model: file has C=" +
                          std::to_string(info.config.channels) + " N=" +
                          std::to_string(info.config.num_blocks) + ", model has C=" +
                          std::to_string(m.config.channels) + " N=" +
                          std::to_string(m.config.num_blocks));
    auto params = m.parameters();
    std::uint32_t count = detail::get_u32(is, "parameter count", off);
    if (count != params.size())
        throw FormatError("checkpoint parameter count " + std::to_string(count) +
                          " != model parameter count " + std::to_string(params.size()));
    for (auto& p : params) {
        std::uint32_t nlen = detail::get_u32(is, "name length", off);
        std::string name(nlen, '\0');
        if (!is.read(name.data(), nlen)) throw FormatError("truncated parameter name");
        off += nlen;
        if (name != p.name)
            throw FormatError("parameter name mismatch: file '" + name + "' vs model '" + p.name + "'");
        std::uint32_t rank = detail::get_u32(is, "rank", off);
        Shape s(rank);
        for (auto& dim : s) dim = static_cast<int>(detail::get_u32(is, "dim", off));
        if (s != p.tensor.shape)
            throw FormatError("shape mismatch for '" + name + "': file " + shape_str(s) +
                              " vs model " + shape_str(p.tensor.shape));
        for (std::size_t i = 0; i < p.tensor.numel(); ++i)
            (*p.tensor.data)[i] = static_cast<Real>(detail::get_f32(is, "payload", off));
    }
}

template <class Real>
NaLSuperModel<Real> load_checkpoint(const std::string& path, const EmbeddingSet& embeddings) {
    CheckpointInfo info = read_checkpoint_header(path);
    if (embeddings.count() != info.num_prompts)
        throw FormatError("checkpoint expects " + std::to_string(info.num_prompts) +
                          " prompts, got " + std::to_string(embeddings.count()));
    NaLSuperModel<Real> m = init_model<Real>(info.config, embeddings);
    restore_into(m, path);
    return m;
}

}  // namespace nalsuper

#endif  // NALSUPER_MODEL_HPP
