#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "losf/common.hpp"
#include "losf/tensor.hpp"

namespace losf {

// The UDF prediction network: a point encoder and a relative-vector encoder
// (shared-MLP residual blocks + max pool), cross-attention fusing pooled
// vector features (query) with per-point features (keys/values), a per-point
// distance-correction head, and a softplus-terminated UDF regression head on
// the sorted corrected distances concatenated with the fused feature.

struct ModelConfig {
    std::int32_t l_p = 64;     // point-encoder feature width
    std::int32_t l_v = 64;     // vector-encoder feature width
    std::int32_t l_g = 128;    // fused feature width
    std::int32_t m = 64;       // points per patch
    std::int32_t hidden = 128; // residual-block / head hidden width
    std::int32_t heads = 1;
    float lambda_d = 0.01f;    // displacement regularization weight

    static constexpr int kResidualBlocks = 4;

    void validate() const {
        if (l_p != l_v) throw ContractError("ModelConfig: l_p must equal l_v");
        if (heads != 1) throw ContractError("ModelConfig: only heads=1 is supported");
        if (l_g % heads != 0) throw ContractError("ModelConfig: l_g must be a multiple of heads");
        if (m < 1 || l_p < 1 || l_g < 1 || hidden < 1)
            throw ContractError("ModelConfig: widths must be positive");
    }

    bool operator==(const ModelConfig& o) const {
        return l_p == o.l_p && l_v == o.l_v && l_g == o.l_g && m == o.m &&
               hidden == o.hidden && heads == o.heads && lambda_d == o.lambda_d;
    }
};

template <typename T>
struct ParamTensor {
    std::string name;
    int rank = 2;
    std::int32_t rows = 0, cols = 0;
    std::vector<T> value;
    std::vector<T> grad;

    std::int64_t numel() const { return rank == 1 ? rows : std::int64_t(rows) * cols; }
};

template <typename T>
class ModelParams {
public:
    ModelParams() = default;

    explicit ModelParams(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        auto enc = [&](const std::string& prefix) {
            mat(prefix + ".lift.w", 3, cfg.l_p);
            vec(prefix + ".lift.b", cfg.l_p);
            for (int b = 0; b < ModelConfig::kResidualBlocks; ++b) {
                std::string base = prefix + ".block" + std::to_string(b);
                mat(base + ".w1", cfg.l_p, cfg.hidden);
                vec(base + ".b1", cfg.hidden);
                mat(base + ".w2", cfg.hidden, cfg.l_p);
                vec(base + ".b2", cfg.l_p);
            }
        };
        enc("pnet");
        enc("vnet");
        mat("attn.wq", cfg.l_v, cfg.l_g);
        mat("attn.wk", cfg.l_p, cfg.l_g);
        mat("attn.wv", cfg.l_p, cfg.l_g);
        mat("attn.wo", cfg.l_g, cfg.l_g);
        mat("denoise.l0.w", cfg.l_v, cfg.hidden);
        vec("denoise.l0.b", cfg.hidden);
        mat("denoise.l1.w", cfg.hidden, cfg.hidden);
        vec("denoise.l1.b", cfg.hidden);
        mat("denoise.l2.w", cfg.hidden, 1);
        vec("denoise.l2.b", 1);
        mat("udf.l0.w", cfg.m + cfg.l_g, cfg.hidden);
        vec("udf.l0.b", cfg.hidden);
        mat("udf.l1.w", cfg.hidden, cfg.hidden);
        vec("udf.l1.b", cfg.hidden);
        mat("udf.l2.w", cfg.hidden, 1);
        vec("udf.l2.b", 1);
    }

    // Kaiming-style fan-in uniform init for weights, zero biases. The final
    // denoise layer starts at zero so training begins from delta_d == 0.
    void init(std::uint64_t seed) {
        Rng rng = make_rng(mix_seed(seed, 0x10d31));
        for (auto& p : tensors_) {
            if (p.rank == 1 || p.name.rfind("denoise.l2", 0) == 0) {
                std::fill(p.value.begin(), p.value.end(), T(0));
                continue;
            }
            T bound = std::sqrt(T(6) / T(p.rows));
            for (auto& w : p.value) w = T(uniform(rng, -double(bound), double(bound)));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<ParamTensor<T>>& tensors() { return tensors_; }
    const std::vector<ParamTensor<T>>& tensors() const { return tensors_; }

    ParamTensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("no parameter named " + name);
        return tensors_[it->second];
    }
    const ParamTensor<T>& at(const std::string& name) const {
        return const_cast<ModelParams*>(this)->at(name);
    }

    std::int64_t total_params() const {
        std::int64_t n = 0;
        for (const auto& p : tensors_) n += p.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : tensors_) std::fill(p.grad.begin(), p.grad.end(), T(0));
    }

    bool all_finite() const {
        for (const auto& p : tensors_)
            for (T v : p.value)
                if (!std::isfinite(double(v))) return false;
        return true;
    }

private:
    void mat(const std::string& name, std::int32_t rows, std::int32_t cols) {
        ParamTensor<T> p;
        p.name = name;
        p.rank = 2;
        p.rows = rows;
        p.cols = cols;
        p.value.assign(std::size_t(rows) * cols, T(0));
        p.grad.assign(std::size_t(rows) * cols, T(0));
        index_[name] = std::int32_t(tensors_.size());
        tensors_.push_back(std::move(p));
    }
    void vec(const std::string& name, std::int32_t n) {
        ParamTensor<T> p;
        p.name = name;
        p.rank = 1;
        p.rows = n;
        p.cols = 1;
        p.value.assign(n, T(0));
        p.grad.assign(n, T(0));
        index_[name] = std::int32_t(tensors_.size());
        tensors_.push_back(std::move(p));
    }

    ModelConfig cfg_;
    std::vector<ParamTensor<T>> tensors_;
    std::map<std::string, std::int32_t> index_;
};

namespace detail {

template <typename T>
Tensor<T> param_leaf(Tape<T>& tape, ParamTensor<T>& p, bool with_grad) {
    T* g = with_grad ? p.grad.data() : nullptr;
    if (p.rank == 1) return tape.leaf_vector(p.rows, p.value.data(), g);
    return tape.leaf_matrix(p.rows, p.cols, p.value.data(), g);
}

template <typename T>
Tensor<T> encoder_stack(Tape<T>& tape, ModelParams<T>& params, const std::string& prefix,
                        Tensor<T> input, bool with_grad) {
    auto P = [&](const std::string& n) { return param_leaf(tape, params.at(prefix + n), with_grad); };
    Tensor<T> x = tape.add(tape.matmul(input, P(".lift.w")), P(".lift.b"));
    for (int b = 0; b < ModelConfig::kResidualBlocks; ++b) {
        std::string base = ".block" + std::to_string(b);
        Tensor<T> h = tape.relu(tape.add(tape.matmul(x, P(base + ".w1")), P(base + ".b1")));
        x = tape.add(x, tape.add(tape.matmul(h, P(base + ".w2")), P(base + ".b2")));
    }
    return x;
}

}  // namespace detail

template <typename T>
struct EncoderOutput {
    Tensor<T> per_point;  // m x width
    Tensor<T> pooled;     // width
};

// Point-Net over patch coordinates: shared residual MLP + column max pool.
template <typename T>
EncoderOutput<T> encode_points(Tape<T>& tape, ModelParams<T>& params, Tensor<T> patch,
                               bool with_grad = true) {
    if (patch.rank() != 2 || patch.cols() != 3 || patch.rows() != params.config().m)
        throw ShapeError("encode_points: expected " + std::to_string(params.config().m) +
                         "x3 patch, got " + tape.shape_str(patch.id));
    Tensor<T> per_point = detail::encoder_stack(tape, params, "pnet", patch, with_grad);
    return {per_point, tape.max_reduce(per_point)};
}

// Same structure over the relative vectors p_i - q, with its own parameters.
template <typename T>
EncoderOutput<T> encode_vectors(Tape<T>& tape, ModelParams<T>& params, Tensor<T> rel_vectors,
                                bool with_grad = true) {
    if (rel_vectors.rank() != 2 || rel_vectors.cols() != 3 || rel_vectors.rows() != params.config().m)
        throw ShapeError("encode_vectors: expected " + std::to_string(params.config().m) +
                         "x3 input, got " + tape.shape_str(rel_vectors.id));
    Tensor<T> per_vec = detail::encoder_stack(tape, params, "vnet", rel_vectors, with_grad);
    return {per_vec, tape.max_reduce(per_vec)};
}

// Cross-attention: pooled vector feature as the single query, per-point
// features as the m-token key/value sequence; scaled dot-product softmax.
template <typename T>
Tensor<T> fuse(Tape<T>& tape, ModelParams<T>& params, Tensor<T> per_point, Tensor<T> f_v,
               bool with_grad = true) {
    const ModelConfig& cfg = params.config();
    if (per_point.cols() != cfg.l_p || f_v.numel() != cfg.l_v)
        throw ShapeError("fuse: width mismatch, per_point " + tape.shape_str(per_point.id) +
                         ", f_v " + tape.shape_str(f_v.id));
    auto P = [&](const std::string& n) { return detail::param_leaf(tape, params.at(n), with_grad); };
    Tensor<T> q_row = tape.reshape(f_v, 2, 1, cfg.l_v);
    Tensor<T> q = tape.matmul(q_row, P("attn.wq"));                       // 1 x l_g
    Tensor<T> k = tape.matmul(per_point, P("attn.wk"));                   // m x l_g
    Tensor<T> v = tape.matmul(per_point, P("attn.wv"));                   // m x l_g
    T inv_sqrt = T(1) / std::sqrt(T(cfg.l_g));
    Tensor<T> scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt);  // 1 x m
    Tensor<T> weights = tape.softmax(scores);
    Tensor<T> ctx = tape.matmul(weights, v);                              // 1 x l_g
    return tape.matmul(ctx, P("attn.wo"));                                // 1 x l_g
}

template <typename T>
struct ForwardNodes {
    Tensor<T> udf;      // scalar, >= 0
    Tensor<T> delta_d;  // m distance corrections
};

template <typename T>
struct Prediction {
    T udf = T(0);
    std::vector<T> delta_d;
};

// Full network forward on a caller-provided tape. Patch rows are brought into
// a canonical lexicographic order first, which makes the whole evaluation
// exactly (bitwise) invariant to the input row order.
template <typename T>
ForwardNodes<T> forward_on_tape(Tape<T>& tape, ModelParams<T>& params,
                                std::span<const T> patch_xyz, std::span<const T> query,
                                bool with_grad = true) {
    const ModelConfig& cfg = params.config();
    const std::int32_t m = cfg.m;
    if (std::int64_t(patch_xyz.size()) != std::int64_t(m) * 3 || query.size() != 3)
        throw ShapeError("forward: expected " + std::to_string(m) + "x3 patch and 3-vector query");
    for (T v : patch_xyz)
        if (!std::isfinite(double(v))) throw ContractError("forward: non-finite patch coordinate");
    for (T v : query)
        if (!std::isfinite(double(v))) throw ContractError("forward: non-finite query coordinate");

    std::vector<std::int32_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        const T* pa = patch_xyz.data() + 3 * a;
        const T* pb = patch_xyz.data() + 3 * b;
        if (pa[0] != pb[0]) return pa[0] < pb[0];
        if (pa[1] != pb[1]) return pa[1] < pb[1];
        return pa[2] < pb[2];
    });

    std::vector<T> pts(std::size_t(m) * 3), rel(std::size_t(m) * 3), dist(m);
    for (std::int32_t i = 0; i < m; ++i) {
        const T* src = patch_xyz.data() + 3 * order[i];
        T dx = src[0] - query[0], dy = src[1] - query[1], dz = src[2] - query[2];
        pts[3 * i] = src[0];
        pts[3 * i + 1] = src[1];
        pts[3 * i + 2] = src[2];
        rel[3 * i] = dx;
        rel[3 * i + 1] = dy;
        rel[3 * i + 2] = dz;
        dist[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
    }

    Tensor<T> patch = tape.constant_matrix(m, 3, pts.data());
    Tensor<T> vectors = tape.constant_matrix(m, 3, rel.data());
    Tensor<T> d = tape.constant_vector(m, dist.data());

    EncoderOutput<T> pe = encode_points(tape, params, patch, with_grad);
    EncoderOutput<T> ve = encode_vectors(tape, params, vectors, with_grad);
    Tensor<T> f_g = fuse(tape, params, pe.per_point, ve.pooled, with_grad);

    auto P = [&](const std::string& n) { return detail::param_leaf(tape, params.at(n), with_grad); };

    // Per-point displacement head on the vector features.
    Tensor<T> h0 = tape.relu(tape.add(tape.matmul(ve.per_point, P("denoise.l0.w")), P("denoise.l0.b")));
    Tensor<T> h1 = tape.relu(tape.add(tape.matmul(h0, P("denoise.l1.w")), P("denoise.l1.b")));
    Tensor<T> dd = tape.add(tape.matmul(h1, P("denoise.l2.w")), P("denoise.l2.b"));  // m x 1
    Tensor<T> delta_d = tape.reshape(dd, 1, m);

    // Corrected distances, sorted ascending, concatenated with the fused code.
    Tensor<T> d_corr = tape.sort_ascending(tape.add(d, delta_d));
    Tensor<T> features = tape.reshape(tape.concat(d_corr, tape.reshape(f_g, 1, cfg.l_g)), 2, 1, m + cfg.l_g);

    Tensor<T> u0 = tape.relu(tape.add(tape.matmul(features, P("udf.l0.w")), P("udf.l0.b")));
    Tensor<T> u1 = tape.relu(tape.add(tape.matmul(u0, P("udf.l1.w")), P("udf.l1.b")));
    Tensor<T> u = tape.softplus(tape.add(tape.matmul(u1, P("udf.l2.w")), P("udf.l2.b")));
    return {tape.reshape(u, 0, 1), delta_d};
}

template <typename T>
Prediction<T> forward(ModelParams<T>& params, std::span<const T> patch_xyz, std::span<const T> query) {
    Tape<T> tape;
    ForwardNodes<T> out = forward_on_tape(tape, params, patch_xyz, query, /*with_grad=*/false);
    Prediction<T> pred;
    pred.udf = out.udf.value();
    pred.delta_d.assign(out.delta_d.data(), out.delta_d.data() + out.delta_d.numel());
    return pred;
}

// L = |gt - udf| + lambda_d * mean_i |delta_d_i|
template <typename T>
Tensor<T> loss_on_tape(Tape<T>& tape, const ForwardNodes<T>& pred, T gt_udf, T lambda_d) {
    if (gt_udf < T(0)) throw ContractError("loss: ground-truth udf must be >= 0");
    Tensor<T> l_u = tape.abs(tape.sub(pred.udf, tape.constant_scalar(gt_udf)));
    Tensor<T> l_r = tape.mean(tape.abs(pred.delta_d));
    return tape.add(l_u, tape.scale(l_r, lambda_d));
}

template <typename T>
T loss_value(const Prediction<T>& pred, T gt_udf, T lambda_d) {
    if (gt_udf < T(0)) throw ContractError("loss: ground-truth udf must be >= 0");
    T l_r = T(0);
    for (T v : pred.delta_d) l_r += std::abs(v);
    if (!pred.delta_d.empty()) l_r /= T(pred.delta_d.size());
    return std::abs(gt_udf - pred.udf) + lambda_d * l_r;
}

// ---------------------------------------------------------------------------
// Checkpoint format "LSFW": little-endian; magic, version, config block, then
// named tensors (name length, name bytes, rank, extents, f32 payload).

namespace detail {
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'L', 'S', 'F', 'W'};
}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot open checkpoint for writing: " + path);
    std::vector<std::uint8_t> buf;
    auto put_u32 = [&](std::uint32_t v) {
        std::uint8_t b[4];
        store_le(b, v);
        buf.insert(buf.end(), b, b + 4);
    };
    auto put_u64 = [&](std::uint64_t v) {
        std::uint8_t b[8];
        store_le(b, v);
        buf.insert(buf.end(), b, b + 8);
    };
    auto put_f32 = [&](float v) {
        std::uint8_t b[4];
        store_le(b, v);
        buf.insert(buf.end(), b, b + 4);
    };
    buf.insert(buf.end(), detail::kCheckpointMagic, detail::kCheckpointMagic + 4);
    put_u32(detail::kCheckpointVersion);
    const ModelConfig& cfg = params.config();
    put_u32(std::uint32_t(cfg.l_p));
    put_u32(std::uint32_t(cfg.l_v));
    put_u32(std::uint32_t(cfg.l_g));
    put_u32(std::uint32_t(cfg.m));
    put_u32(std::uint32_t(cfg.hidden));
    put_u32(std::uint32_t(cfg.heads));
    put_f32(cfg.lambda_d);
    put_u32(std::uint32_t(params.tensors().size()));
    for (const auto& p : params.tensors()) {
        put_u32(std::uint32_t(p.name.size()));
        buf.insert(buf.end(), p.name.begin(), p.name.end());
        put_u32(std::uint32_t(p.rank));
        put_u64(std::uint64_t(p.rows));
        if (p.rank == 2) put_u64(std::uint64_t(p.cols));
        for (T v : p.value) put_f32(float(v));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw ContractError("checkpoint write failed: " + path);
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open checkpoint: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw FormatError(std::string("checkpoint truncated reading ") + what, pos);
    };
    auto get_u32 = [&](const char* what) {
        need(4, what);
        std::uint32_t v = load_le<std::uint32_t>(buf.data() + pos);
        pos += 4;
        return v;
    };
    auto get_u64 = [&](const char* what) {
        need(8, what);
        std::uint64_t v = load_le<std::uint64_t>(buf.data() + pos);
        pos += 8;
        return v;
    };
    auto get_f32 = [&](const char* what) {
        need(4, what);
        float v = load_le<float>(buf.data() + pos);
        pos += 4;
        return v;
    };
    need(4, "magic");
    if (std::memcmp(buf.data(), detail::kCheckpointMagic, 4) != 0)
        throw FormatError("bad checkpoint magic", 0);
    pos = 4;
    std::uint32_t version = get_u32("version");
    if (version != detail::kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    ModelConfig cfg;
    cfg.l_p = std::int32_t(get_u32("l_p"));
    cfg.l_v = std::int32_t(get_u32("l_v"));
    cfg.l_g = std::int32_t(get_u32("l_g"));
    cfg.m = std::int32_t(get_u32("m"));
    cfg.hidden = std::int32_t(get_u32("hidden"));
    cfg.heads = std::int32_t(get_u32("heads"));
    cfg.lambda_d = get_f32("lambda_d");
    ModelParams<T> params(cfg);
    std::uint32_t count = get_u32("tensor count");
    if (count != params.tensors().size())
        throw FormatError("checkpoint tensor count " + std::to_string(count) +
                          " does not match config (" + std::to_string(params.tensors().size()) + ")",
                          pos - 4);
    for (auto& p : params.tensors()) {
        std::uint32_t name_len = get_u32("name length");
        need(name_len, "tensor name");
        std::string name(reinterpret_cast<const char*>(buf.data() + pos), name_len);
        pos += name_len;
        if (name != p.name)
            throw FormatError("unexpected tensor '" + name + "', expected '" + p.name + "'",
                              pos - name_len);
        std::uint32_t rank = get_u32("rank");
        std::uint64_t rows = get_u64("rows");
        std::uint64_t cols = rank == 2 ? get_u64("cols") : 1;
        if (std::int32_t(rank) != p.rank || std::int64_t(rows) != p.rows ||
            (p.rank == 2 && std::int64_t(cols) != p.cols))
            throw FormatError("tensor '" + name + "' shape mismatch against config", pos);
        for (auto& v : p.value) v = T(get_f32("payload"));
    }
    if (pos != buf.size()) throw FormatError("trailing bytes after checkpoint payload", pos);
    return params;
}

}  // namespace losf
