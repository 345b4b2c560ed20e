#pragma once

#include "losf/model.hpp"

namespace losf {

// Central-difference verification of the tape gradients of loss(forward(.))
// with respect to the network parameters. Checks a deterministic random
// subset of components from every parameter tensor plus one whole-parameter
// directional probe; the relative error is |a - n| / max(1, |a|, |n|).

template <typename T>
struct ParamGradCheck {
    T max_rel_err = T(0);
    std::string worst_tensor;
    std::int64_t components_checked = 0;
};

template <typename T>
T eval_loss(ModelParams<T>& params, std::span<const T> patch, std::span<const T> query, T gt,
            Tape<T>& tape, bool with_grad) {
    tape.reset();
    ForwardNodes<T> out = forward_on_tape(tape, params, patch, query, with_grad);
    Tensor<T> l = loss_on_tape(tape, out, gt, T(params.config().lambda_d));
    if (with_grad) tape.backward(l);
    return l.value();
}

template <typename T>
ParamGradCheck<T> grad_check_params(ModelParams<T>& params, std::span<const T> patch,
                                    std::span<const T> query, T gt, int comps_per_tensor, T eps,
                                    std::uint64_t seed) {
    Tape<T> tape;
    params.zero_grad();
    eval_loss(params, patch, query, gt, tape, /*with_grad=*/true);

    ParamGradCheck<T> result;
    auto update = [&](T analytic, T numeric, const std::string& name) {
        T denom = std::max(T(1), std::max(std::abs(analytic), std::abs(numeric)));
        T err = std::abs(analytic - numeric) / denom;
        if (err > result.max_rel_err) {
            result.max_rel_err = err;
            result.worst_tensor = name;
        }
        result.components_checked++;
    };

    Rng rng = make_rng(mix_seed(seed, 0x6c9d));
    for (auto& p : params.tensors()) {
        std::int64_t n = p.numel();
        int want = int(std::min<std::int64_t>(comps_per_tensor, n));
        for (int c = 0; c < want; ++c) {
            std::size_t i = std::size_t(uniform_index(rng, std::uint64_t(n)));
            T saved = p.value[i];
            p.value[i] = saved + eps;
            T up = eval_loss(params, patch, query, gt, tape, false);
            p.value[i] = saved - eps;
            T dn = eval_loss(params, patch, query, gt, tape, false);
            p.value[i] = saved;
            update(p.grad[i], (up - dn) / (T(2) * eps), p.name);
        }
    }

    // Directional probe over the whole parameter vector.
    std::vector<std::vector<T>> dir;
    T analytic_dir = T(0);
    for (auto& p : params.tensors()) {
        dir.emplace_back(p.value.size());
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            dir.back()[i] = T(uniform(rng, -1.0, 1.0));
            analytic_dir += p.grad[i] * dir.back()[i];
        }
    }
    auto shift = [&](T a) {
        for (std::size_t ti = 0; ti < params.tensors().size(); ++ti) {
            auto& p = params.tensors()[ti];
            for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] += a * dir[ti][i];
        }
    };
    shift(eps);
    T up = eval_loss(params, patch, query, gt, tape, false);
    shift(-T(2) * eps);
    T dn = eval_loss(params, patch, query, gt, tape, false);
    shift(eps);
    update(analytic_dir, (up - dn) / (T(2) * eps), "<direction>");
    return result;
}

}  // namespace losf
