#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "losf/common.hpp"

namespace losf {

// Reverse-mode tape for dense tensors, covering exactly the operator set the
// UDF network needs (rank 0..2, row-major). A tape is single-owner: record a
// forward pass, call backward() once, reset(), repeat. Buffers live in a bump
// arena so steady-state recording performs no allocation.
//
// Scalar type is a template parameter: float for training/inference, double
// for gradient checking.

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Add,       // same shape, or rank-2 + rank-1 trailing-axis bias
    Sub,
    Mul,       // elementwise
    Scale,     // by compile-time constant scalar
    Relu,
    Softplus,
    Softmax,   // over the last axis
    MaxReduce, // over axis 0 (rank-2 -> rank-1) or rank-1 -> scalar; records argmax
    Mean,      // all elements -> scalar
    Abs,
    Concat,    // rank-1 axis 0, or rank-2 axis 0/1
    Transpose, // rank-2
    SortAsc,   // rank-1; records permutation
    Reshape,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Relu: return "relu";
        case Op::Softplus: return "softplus";
        case Op::Softmax: return "softmax";
        case Op::MaxReduce: return "max_reduce";
        case Op::Mean: return "mean";
        case Op::Abs: return "abs";
        case Op::Concat: return "concat";
        case Op::Transpose: return "transpose";
        case Op::SortAsc: return "sort_ascending";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

template <typename T>
class Tape;

template <typename T>
struct Tensor {
    Tape<T>* tape = nullptr;
    std::int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    std::int32_t rows() const;
    std::int32_t cols() const;
    int rank() const;
    std::int64_t numel() const;
    const T* data() const;
    T value() const;  // scalar tensors only
};

template <typename T>
class Tape {
public:
    struct Node {
        Op op;
        std::uint8_t rank;
        bool requires_grad;
        bool ext;
        std::int32_t in0, in1;
        std::int32_t rows, cols;
        std::int64_t off;       // data offset into arena_ (ext nodes: unused)
        const T* ext_data;
        T* ext_grad;            // leaves only; gradient accumulates here
        std::int64_t aux_off;   // argmax / permutation storage
        std::int32_t axis;
        T scalar;
    };

    explicit Tape(std::size_t reserve_elems = 1 << 20) {
        arena_.reserve(reserve_elems);
        nodes_.reserve(256);
        aux_.reserve(4096);
    }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Drops all recorded nodes; keeps arena capacity for the next recording.
    void reset() {
        nodes_.clear();
        arena_.clear();
        aux_.clear();
    }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::int32_t id) const { return nodes_[id]; }

    const T* data(std::int32_t id) const {
        const Node& n = nodes_[id];
        return n.ext ? n.ext_data : arena_.data() + n.off;
    }
    std::int64_t numel(std::int32_t id) const {
        const Node& n = nodes_[id];
        return n.rank == 0 ? 1 : (n.rank == 1 ? n.rows : std::int64_t(n.rows) * n.cols);
    }

    // -- leaves ------------------------------------------------------------

    // Views external storage. If grad is non-null the tensor participates in
    // differentiation and backward() accumulates (+=) into grad.
    Tensor<T> leaf_matrix(std::int32_t rows, std::int32_t cols, const T* data, T* grad = nullptr) {
        return push_ext(2, rows, cols, data, grad);
    }
    Tensor<T> leaf_vector(std::int32_t n, const T* data, T* grad = nullptr) {
        return push_ext(1, n, 1, data, grad);
    }
    Tensor<T> leaf_scalar(const T* data, T* grad = nullptr) {
        return push_ext(0, 1, 1, data, grad);
    }

    // Copies values into the tape (non-differentiable constant).
    Tensor<T> constant_matrix(std::int32_t rows, std::int32_t cols, const T* values) {
        Tensor<T> t = push_owned(Op::Leaf, 2, rows, cols, -1, -1, false);
        std::copy(values, values + std::int64_t(rows) * cols, mut_data(t.id));
        return t;
    }
    Tensor<T> constant_vector(std::int32_t n, const T* values) {
        Tensor<T> t = push_owned(Op::Leaf, 1, n, 1, -1, -1, false);
        std::copy(values, values + n, mut_data(t.id));
        return t;
    }
    Tensor<T> constant_scalar(T value) {
        Tensor<T> t = push_owned(Op::Leaf, 0, 1, 1, -1, -1, false);
        *mut_data(t.id) = value;
        return t;
    }

    // -- ops ----------------------------------------------------------------

    Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
        const Node &na = nodes_[a.id], &nb = nodes_[b.id];
        if (na.rank != 2 || nb.rank != 2 || na.cols != nb.rows)
            shape_fail("matmul", a, b);
        Tensor<T> out = push_owned(Op::MatMul, 2, na.rows, nb.cols, a.id, b.id,
                                   na.requires_grad || nb.requires_grad);
        emap(out.id).noalias() = cmap(a.id) * cmap(b.id);
        return out;
    }

    Tensor<T> add(Tensor<T> a, Tensor<T> b) { return add_like("add", Op::Add, a, b); }
    Tensor<T> sub(Tensor<T> a, Tensor<T> b) { return add_like("sub", Op::Sub, a, b); }

    Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
        const Node &na = nodes_[a.id], &nb = nodes_[b.id];
        if (na.rank != nb.rank || na.rows != nb.rows || na.cols != nb.cols)
            shape_fail("mul", a, b);
        Tensor<T> out = push_owned(Op::Mul, na.rank, na.rows, na.cols, a.id, b.id,
                                   na.requires_grad || nb.requires_grad);
        const T* pa = data(a.id);
        const T* pb = data(b.id);
        T* po = mut_data(out.id);
        for (std::int64_t i = 0, n = numel(out.id); i < n; ++i) po[i] = pa[i] * pb[i];
        return out;
    }

    Tensor<T> scale(Tensor<T> a, T c) {
        const Node& na = nodes_[a.id];
        Tensor<T> out = push_owned(Op::Scale, na.rank, na.rows, na.cols, a.id, -1, na.requires_grad);
        nodes_[out.id].scalar = c;
        const T* pa = data(a.id);
        T* po = mut_data(out.id);
        for (std::int64_t i = 0, n = numel(out.id); i < n; ++i) po[i] = c * pa[i];
        return out;
    }

    Tensor<T> relu(Tensor<T> a) {
        return unary(Op::Relu, a, [](T x) { return x > T(0) ? x : T(0); });
    }

    Tensor<T> softplus(Tensor<T> a) {
        // max(x,0) + log1p(exp(-|x|)) is overflow-safe on both tails.
        return unary(Op::Softplus, a, [](T x) {
            return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
        });
    }

    Tensor<T> abs(Tensor<T> a) {
        return unary(Op::Abs, a, [](T x) { return std::abs(x); });
    }

    // Softmax over the last axis: rank-1 whole vector, rank-2 per row.
    Tensor<T> softmax(Tensor<T> a) {
        const Node na = nodes_[a.id];
        if (na.rank == 0) shape_fail("softmax", a, a);
        Tensor<T> out = push_owned(Op::Softmax, na.rank, na.rows, na.cols, a.id, -1, na.requires_grad);
        std::int32_t nrows = na.rank == 1 ? 1 : na.rows;
        std::int32_t width = na.rank == 1 ? na.rows : na.cols;
        const T* pa = data(a.id);
        T* po = mut_data(out.id);
        for (std::int32_t r = 0; r < nrows; ++r) {
            const T* x = pa + std::int64_t(r) * width;
            T* y = po + std::int64_t(r) * width;
            T mx = x[0];
            for (std::int32_t i = 1; i < width; ++i) mx = std::max(mx, x[i]);
            T sum = T(0);
            for (std::int32_t i = 0; i < width; ++i) {
                y[i] = std::exp(x[i] - mx);
                sum += y[i];
            }
            T inv = T(1) / sum;
            for (std::int32_t i = 0; i < width; ++i) y[i] *= inv;
        }
        return out;
    }

    // Column-wise max over axis 0 (rank-2 -> rank-1 of length cols), or
    // rank-1 -> scalar. Records argmax; ties resolve to the lowest index.
    Tensor<T> max_reduce(Tensor<T> a, int axis = 0) {
        const Node na = nodes_[a.id];
        if (axis != 0 || na.rank == 0) shape_fail("max_reduce", a, a);
        if (na.rank == 1) {
            Tensor<T> out = push_owned(Op::MaxReduce, 0, 1, 1, a.id, -1, na.requires_grad);
            std::int64_t aux = push_aux(1);
            nodes_[out.id].aux_off = aux;
            const T* pa = data(a.id);
            std::int32_t arg = 0;
            T best = pa[0];
            for (std::int32_t i = 1; i < na.rows; ++i)
                if (pa[i] > best) { best = pa[i]; arg = i; }
            aux_[aux] = arg;
            *mut_data(out.id) = best;
            return out;
        }
        Tensor<T> out = push_owned(Op::MaxReduce, 1, na.cols, 1, a.id, -1, na.requires_grad);
        std::int64_t aux = push_aux(na.cols);
        nodes_[out.id].aux_off = aux;
        const T* pa = data(a.id);
        T* po = mut_data(out.id);
        for (std::int32_t j = 0; j < na.cols; ++j) {
            T best = pa[j];
            std::int32_t arg = 0;
            for (std::int32_t i = 1; i < na.rows; ++i) {
                T v = pa[std::int64_t(i) * na.cols + j];
                if (v > best) { best = v; arg = i; }
            }
            po[j] = best;
            aux_[aux + j] = arg;
        }
        return out;
    }

    Tensor<T> mean(Tensor<T> a) {
        const Node& na = nodes_[a.id];
        Tensor<T> out = push_owned(Op::Mean, 0, 1, 1, a.id, -1, na.requires_grad);
        const T* pa = data(a.id);
        T sum = T(0);
        std::int64_t n = numel(a.id);
        for (std::int64_t i = 0; i < n; ++i) sum += pa[i];
        *mut_data(out.id) = sum / T(n);
        return out;
    }

    Tensor<T> concat(Tensor<T> a, Tensor<T> b, int axis = 0) {
        const Node na = nodes_[a.id], nb = nodes_[b.id];
        bool rg = na.requires_grad || nb.requires_grad;
        if (na.rank == 1 && nb.rank == 1 && axis == 0) {
            Tensor<T> out = push_owned(Op::Concat, 1, na.rows + nb.rows, 1, a.id, b.id, rg);
            nodes_[out.id].axis = 0;
            T* po = mut_data(out.id);
            std::copy(data(a.id), data(a.id) + na.rows, po);
            std::copy(data(b.id), data(b.id) + nb.rows, po + na.rows);
            return out;
        }
        if (na.rank == 2 && nb.rank == 2 && axis == 0 && na.cols == nb.cols) {
            Tensor<T> out = push_owned(Op::Concat, 2, na.rows + nb.rows, na.cols, a.id, b.id, rg);
            nodes_[out.id].axis = 0;
            T* po = mut_data(out.id);
            std::copy(data(a.id), data(a.id) + numel(a.id), po);
            std::copy(data(b.id), data(b.id) + numel(b.id), po + numel(a.id));
            return out;
        }
        if (na.rank == 2 && nb.rank == 2 && axis == 1 && na.rows == nb.rows) {
            Tensor<T> out = push_owned(Op::Concat, 2, na.rows, na.cols + nb.cols, a.id, b.id, rg);
            nodes_[out.id].axis = 1;
            T* po = mut_data(out.id);
            for (std::int32_t r = 0; r < na.rows; ++r) {
                std::copy(data(a.id) + std::int64_t(r) * na.cols,
                          data(a.id) + std::int64_t(r + 1) * na.cols,
                          po + std::int64_t(r) * (na.cols + nb.cols));
                std::copy(data(b.id) + std::int64_t(r) * nb.cols,
                          data(b.id) + std::int64_t(r + 1) * nb.cols,
                          po + std::int64_t(r) * (na.cols + nb.cols) + na.cols);
            }
            return out;
        }
        shape_fail("concat", a, b);
        return {};
    }

    Tensor<T> transpose(Tensor<T> a) {
        const Node& na = nodes_[a.id];
        if (na.rank != 2) shape_fail("transpose", a, a);
        Tensor<T> out = push_owned(Op::Transpose, 2, na.cols, na.rows, a.id, -1, na.requires_grad);
        emap(out.id).noalias() = cmap(a.id).transpose();
        return out;
    }

    // Ascending value sort of a rank-1 tensor; ties keep input order.
    Tensor<T> sort_ascending(Tensor<T> a) {
        const Node na = nodes_[a.id];
        if (na.rank != 1) shape_fail("sort_ascending", a, a);
        Tensor<T> out = push_owned(Op::SortAsc, 1, na.rows, 1, a.id, -1, na.requires_grad);
        std::int64_t aux = push_aux(na.rows);
        nodes_[out.id].aux_off = aux;
        const T* pa = data(a.id);
        std::int32_t n = na.rows;
        for (std::int32_t i = 0; i < n; ++i) aux_[aux + i] = i;
        std::stable_sort(aux_.begin() + aux, aux_.begin() + aux + n,
                         [pa](std::int32_t i, std::int32_t j) { return pa[i] < pa[j]; });
        T* po = mut_data(out.id);
        for (std::int32_t i = 0; i < n; ++i) po[i] = pa[aux_[aux + i]];
        return out;
    }

    Tensor<T> reshape(Tensor<T> a, int rank, std::int32_t rows, std::int32_t cols = 1) {
        const Node& na = nodes_[a.id];
        std::int64_t want = rank == 0 ? 1 : (rank == 1 ? rows : std::int64_t(rows) * cols);
        if (want != numel(a.id)) shape_fail("reshape", a, a);
        Tensor<T> out = push_owned(Op::Reshape, std::uint8_t(rank), rows, cols, a.id, -1, na.requires_grad);
        std::copy(data(a.id), data(a.id) + want, mut_data(out.id));
        return out;
    }

    // -- backward ------------------------------------------------------------

    // Populates gradients of every differentiable leaf reachable from `loss`,
    // accumulating (+=) into the leaves' external grad buffers. `seed` is the
    // upstream gradient of the loss (1/batch_size when averaging a batch).
    void backward(Tensor<T> loss, T seed = T(1)) {
        const Node& ln = nodes_[loss.id];
        if (numel(loss.id) != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss.id));
        if (!ln.requires_grad)
            throw ContractError("backward: loss is not connected to any differentiable leaf");
        grads_.assign(arena_.size(), T(0));
        *grad_ptr(loss.id) += seed;
        for (std::int32_t id = loss.id; id >= 0; --id) {
            const Node& n = nodes_[id];
            if (!n.requires_grad || n.op == Op::Leaf) continue;
            backprop(id);
        }
    }

    // Gradient of a node from the most recent backward() (owned nodes only).
    const T* grad(std::int32_t id) const {
        const Node& n = nodes_[id];
        return n.ext ? n.ext_grad : grads_.data() + n.off;
    }

    std::string shape_str(std::int32_t id) const {
        const Node& n = nodes_[id];
        if (n.rank == 0) return "[]";
        if (n.rank == 1) return "[" + std::to_string(n.rows) + "]";
        return "[" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + "]";
    }

private:
    using EMap = Eigen::Map<MatX<T>>;
    using ECMap = Eigen::Map<const MatX<T>>;

    ECMap cmap(std::int32_t id) const {
        const Node& n = nodes_[id];
        return ECMap(data(id), n.rows, n.cols);
    }
    EMap emap(std::int32_t id) {
        Node& n = nodes_[id];
        return EMap(mut_data(id), n.rows, n.cols);
    }
    T* mut_data(std::int32_t id) {
        Node& n = nodes_[id];
        return const_cast<T*>(n.ext ? n.ext_data : arena_.data() + n.off);
    }
    T* grad_ptr(std::int32_t id) {
        Node& n = nodes_[id];
        return n.ext ? n.ext_grad : grads_.data() + n.off;
    }

    Tensor<T> push_owned(Op op, std::uint8_t rank, std::int32_t rows, std::int32_t cols,
                         std::int32_t in0, std::int32_t in1, bool requires_grad) {
        Node n{};
        n.op = op;
        n.rank = rank;
        n.requires_grad = requires_grad;
        n.ext = false;
        n.in0 = in0;
        n.in1 = in1;
        n.rows = rows;
        n.cols = cols;
        std::int64_t count = rank == 0 ? 1 : (rank == 1 ? rows : std::int64_t(rows) * cols);
        n.off = static_cast<std::int64_t>(arena_.size());
        arena_.resize(arena_.size() + count);
        n.aux_off = -1;
        n.axis = -1;
        n.scalar = T(0);
        nodes_.push_back(n);
        return Tensor<T>{this, std::int32_t(nodes_.size() - 1)};
    }

    Tensor<T> push_ext(std::uint8_t rank, std::int32_t rows, std::int32_t cols,
                       const T* data, T* grad) {
        Node n{};
        n.op = Op::Leaf;
        n.rank = rank;
        n.requires_grad = grad != nullptr;
        n.ext = true;
        n.in0 = n.in1 = -1;
        n.rows = rows;
        n.cols = cols;
        n.off = -1;
        n.ext_data = data;
        n.ext_grad = grad;
        n.aux_off = -1;
        nodes_.push_back(n);
        return Tensor<T>{this, std::int32_t(nodes_.size() - 1)};
    }

    std::int64_t push_aux(std::int64_t count) {
        std::int64_t off = static_cast<std::int64_t>(aux_.size());
        aux_.resize(aux_.size() + count);
        return off;
    }

    template <typename F>
    Tensor<T> unary(Op op, Tensor<T> a, F f) {
        const Node& na = nodes_[a.id];
        Tensor<T> out = push_owned(op, na.rank, na.rows, na.cols, a.id, -1, na.requires_grad);
        const T* pa = data(a.id);
        T* po = mut_data(out.id);
        for (std::int64_t i = 0, n = numel(out.id); i < n; ++i) po[i] = f(pa[i]);
        return out;
    }

    Tensor<T> add_like(const char* name, Op op, Tensor<T> a, Tensor<T> b) {
        const Node na = nodes_[a.id], nb = nodes_[b.id];
        bool rg = na.requires_grad || nb.requires_grad;
        T sgn = op == Op::Sub ? T(-1) : T(1);
        if (na.rank == nb.rank && na.rows == nb.rows && na.cols == nb.cols) {
            Tensor<T> out = push_owned(op, na.rank, na.rows, na.cols, a.id, b.id, rg);
            const T* pa = data(a.id);
            const T* pb = data(b.id);
            T* po = mut_data(out.id);
            for (std::int64_t i = 0, n = numel(out.id); i < n; ++i) po[i] = pa[i] + sgn * pb[i];
            return out;
        }
        // Trailing-axis bias broadcast: (r x c) + (c).
        if (op == Op::Add && na.rank == 2 && nb.rank == 1 && nb.rows == na.cols) {
            Tensor<T> out = push_owned(op, 2, na.rows, na.cols, a.id, b.id, rg);
            const T* pa = data(a.id);
            const T* pb = data(b.id);
            T* po = mut_data(out.id);
            for (std::int32_t r = 0; r < na.rows; ++r)
                for (std::int32_t c = 0; c < na.cols; ++c)
                    po[std::int64_t(r) * na.cols + c] = pa[std::int64_t(r) * na.cols + c] + pb[c];
            return out;
        }
        shape_fail(name, a, b);
        return {};
    }

    [[noreturn]] void shape_fail(const char* op, Tensor<T> a, Tensor<T> b) const {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.id) +
                         " and " + shape_str(b.id));
    }

    void backprop(std::int32_t id) {
        Node& n = nodes_[id];
        const T* gout = grad_ptr(id);
        switch (n.op) {
            case Op::MatMul: {
                const Node &na = nodes_[n.in0], &nb = nodes_[n.in1];
                ECMap A(data(n.in0), na.rows, na.cols), B(data(n.in1), nb.rows, nb.cols);
                ECMap G(gout, n.rows, n.cols);
                if (na.requires_grad)
                    EMap(grad_ptr(n.in0), na.rows, na.cols).noalias() += G * B.transpose();
                if (nb.requires_grad)
                    EMap(grad_ptr(n.in1), nb.rows, nb.cols).noalias() += A.transpose() * G;
                break;
            }
            case Op::Add:
            case Op::Sub: {
                const Node &na = nodes_[n.in0], &nb = nodes_[n.in1];
                std::int64_t count = numel(id);
                if (na.requires_grad) {
                    T* g = grad_ptr(n.in0);
                    for (std::int64_t i = 0; i < count; ++i) g[i] += gout[i];
                }
                if (nb.requires_grad) {
                    T* g = grad_ptr(n.in1);
                    T sgn = n.op == Op::Sub ? T(-1) : T(1);
                    if (nb.rank == 1 && na.rank == 2 && nb.rows == na.cols) {
                        for (std::int32_t r = 0; r < n.rows; ++r)
                            for (std::int32_t c = 0; c < n.cols; ++c)
                                g[c] += gout[std::int64_t(r) * n.cols + c];
                    } else {
                        for (std::int64_t i = 0; i < count; ++i) g[i] += sgn * gout[i];
                    }
                }
                break;
            }
            case Op::Mul: {
                const Node &na = nodes_[n.in0], &nb = nodes_[n.in1];
                const T* pa = data(n.in0);
                const T* pb = data(n.in1);
                std::int64_t count = numel(id);
                if (na.requires_grad) {
                    T* g = grad_ptr(n.in0);
                    for (std::int64_t i = 0; i < count; ++i) g[i] += gout[i] * pb[i];
                }
                if (nb.requires_grad) {
                    T* g = grad_ptr(n.in1);
                    for (std::int64_t i = 0; i < count; ++i) g[i] += gout[i] * pa[i];
                }
                break;
            }
            case Op::Scale: {
                T* g = grad_ptr(n.in0);
                for (std::int64_t i = 0, count = numel(id); i < count; ++i)
                    g[i] += n.scalar * gout[i];
                break;
            }
            case Op::Relu: {
                const T* x = data(n.in0);
                T* g = grad_ptr(n.in0);
                for (std::int64_t i = 0, count = numel(id); i < count; ++i)
                    if (x[i] > T(0)) g[i] += gout[i];
                break;
            }
            case Op::Softplus: {
                const T* x = data(n.in0);
                T* g = grad_ptr(n.in0);
                for (std::int64_t i = 0, count = numel(id); i < count; ++i) {
                    T s = x[i] >= T(0) ? T(1) / (T(1) + std::exp(-x[i]))
                                       : std::exp(x[i]) / (T(1) + std::exp(x[i]));
                    g[i] += gout[i] * s;
                }
                break;
            }
            case Op::Softmax: {
                const T* y = data(id);
                T* g = grad_ptr(n.in0);
                std::int32_t nrows = n.rank == 1 ? 1 : n.rows;
                std::int32_t width = n.rank == 1 ? n.rows : n.cols;
                for (std::int32_t r = 0; r < nrows; ++r) {
                    const T* yr = y + std::int64_t(r) * width;
                    const T* gr = gout + std::int64_t(r) * width;
                    T* gx = g + std::int64_t(r) * width;
                    T dot = T(0);
                    for (std::int32_t i = 0; i < width; ++i) dot += gr[i] * yr[i];
                    for (std::int32_t i = 0; i < width; ++i) gx[i] += yr[i] * (gr[i] - dot);
                }
                break;
            }
            case Op::MaxReduce: {
                const Node& na = nodes_[n.in0];
                T* g = grad_ptr(n.in0);
                if (na.rank == 1) {
                    g[aux_[n.aux_off]] += gout[0];
                } else {
                    for (std::int32_t j = 0; j < na.cols; ++j)
                        g[std::int64_t(aux_[n.aux_off + j]) * na.cols + j] += gout[j];
                }
                break;
            }
            case Op::Mean: {
                T* g = grad_ptr(n.in0);
                std::int64_t count = numel(n.in0);
                T w = gout[0] / T(count);
                for (std::int64_t i = 0; i < count; ++i) g[i] += w;
                break;
            }
            case Op::Abs: {
                const T* x = data(n.in0);
                T* g = grad_ptr(n.in0);
                // sign(0) = 0
                for (std::int64_t i = 0, count = numel(id); i < count; ++i) {
                    if (x[i] > T(0)) g[i] += gout[i];
                    else if (x[i] < T(0)) g[i] -= gout[i];
                }
                break;
            }
            case Op::Concat: {
                const Node &na = nodes_[n.in0], &nb = nodes_[n.in1];
                if (n.axis == 0 || n.rank == 1) {
                    std::int64_t ca = numel(n.in0);
                    if (na.requires_grad) {
                        T* g = grad_ptr(n.in0);
                        for (std::int64_t i = 0; i < ca; ++i) g[i] += gout[i];
                    }
                    if (nb.requires_grad) {
                        T* g = grad_ptr(n.in1);
                        for (std::int64_t i = 0, cb = numel(n.in1); i < cb; ++i) g[i] += gout[ca + i];
                    }
                } else {
                    for (std::int32_t r = 0; r < n.rows; ++r) {
                        const T* gr = gout + std::int64_t(r) * n.cols;
                        if (na.requires_grad) {
                            T* g = grad_ptr(n.in0) + std::int64_t(r) * na.cols;
                            for (std::int32_t c = 0; c < na.cols; ++c) g[c] += gr[c];
                        }
                        if (nb.requires_grad) {
                            T* g = grad_ptr(n.in1) + std::int64_t(r) * nb.cols;
                            for (std::int32_t c = 0; c < nb.cols; ++c) g[c] += gr[na.cols + c];
                        }
                    }
                }
                break;
            }
            case Op::Transpose: {
                const Node& na = nodes_[n.in0];
                EMap(grad_ptr(n.in0), na.rows, na.cols).noalias() +=
                    ECMap(gout, n.rows, n.cols).transpose();
                break;
            }
            case Op::SortAsc: {
                T* g = grad_ptr(n.in0);
                for (std::int32_t i = 0; i < n.rows; ++i) g[aux_[n.aux_off + i]] += gout[i];
                break;
            }
            case Op::Reshape: {
                T* g = grad_ptr(n.in0);
                for (std::int64_t i = 0, count = numel(id); i < count; ++i) g[i] += gout[i];
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    std::vector<Node> nodes_;
    std::vector<T> arena_;
    std::vector<T> grads_;
    std::vector<std::int32_t> aux_;
};

template <typename T>
std::int32_t Tensor<T>::rows() const { return tape->node(id).rows; }
template <typename T>
std::int32_t Tensor<T>::cols() const { return tape->node(id).cols; }
template <typename T>
int Tensor<T>::rank() const { return tape->node(id).rank; }
template <typename T>
std::int64_t Tensor<T>::numel() const { return tape->numel(id); }
template <typename T>
const T* Tensor<T>::data() const { return tape->data(id); }
template <typename T>
T Tensor<T>::value() const { return tape->data(id)[0]; }

// ---------------------------------------------------------------------------
// Gradient check: central finite differences against the tape gradient.
// `f` maps (tape, leaf-tensor over x) to a scalar tensor. Returns the max
// over components of |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename T, typename F>
T grad_check(F f, std::vector<T> x, T eps) {
    std::vector<T> analytic(x.size(), T(0));
    {
        Tape<T> tape;
        Tensor<T> lx = tape.leaf_vector(std::int32_t(x.size()), x.data(), analytic.data());
        Tensor<T> loss = f(tape, lx);
        tape.backward(loss);
    }
    T worst = T(0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        T saved = x[i];
        x[i] = saved + eps;
        Tape<T> tp;
        T up = f(tp, tp.leaf_vector(std::int32_t(x.size()), x.data(), nullptr)).value();
        x[i] = saved - eps;
        Tape<T> tm;
        T dn = f(tm, tm.leaf_vector(std::int32_t(x.size()), x.data(), nullptr)).value();
        x[i] = saved;
        T numeric = (up - dn) / (T(2) * eps);
        T denom = std::max(T(1), std::max(std::abs(analytic[i]), std::abs(numeric)));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace losf
