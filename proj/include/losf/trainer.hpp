#pragma once

#include <chrono>
#include <functional>
#include <ostream>
#include <memory>
#include <thread>

#include "losf/config.hpp"
#include "losf/model.hpp"
#include "losf/patchgen.hpp"

namespace losf {

struct TrainConfig {
    std::int32_t batch_size = 512;
    std::int32_t epochs = 8;
    float lr = 1e-3f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    float noise_fraction = 0.30f;     // per batch
    float truncate_fraction = 0.20f;  // smooth samples per epoch
    float sigma_train = 0.1f;         // generation-frame noise std
    float val_split = 0.1f;
    std::uint64_t seed = 1;
    std::int32_t checkpoint_every = 0;  // epochs between periodic checkpoints, 0 = off
    std::string checkpoint_path;
    std::int32_t threads = 1;
    bool augment_rotate = true;  // test hook; rotation is on for real training

    void validate() const {
        if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
        if (epochs < 0) throw ContractError("train config: epochs must be >= 0");
        if (!(lr > 0.0f)) throw ContractError("train config: lr must be positive");
        auto frac = [](float f, const char* name) {
            if (f < 0.0f || f > 1.0f)
                throw ContractError(std::string("train config: ") + name + " must be in [0,1]");
        };
        frac(noise_fraction, "noise_fraction");
        frac(truncate_fraction, "truncate_fraction");
        if (sigma_train < 0.0f) throw ContractError("train config: sigma_train must be >= 0");
        if (threads < 1) throw ContractError("train config: threads must be >= 1");
    }

    static TrainConfig from_config(const KeyValueConfig& cfg) {
        TrainConfig t;
        if (auto v = cfg.get_int("batch_size")) t.batch_size = std::int32_t(*v);
        if (auto v = cfg.get_int("epochs")) t.epochs = std::int32_t(*v);
        if (auto v = cfg.get_double("lr")) t.lr = float(*v);
        if (auto v = cfg.get_double("adam_beta1")) t.adam_beta1 = float(*v);
        if (auto v = cfg.get_double("adam_beta2")) t.adam_beta2 = float(*v);
        if (auto v = cfg.get_double("adam_eps")) t.adam_eps = float(*v);
        if (auto v = cfg.get_double("noise_fraction")) t.noise_fraction = float(*v);
        if (auto v = cfg.get_double("truncate_fraction")) t.truncate_fraction = float(*v);
        if (auto v = cfg.get_double("sigma_train")) t.sigma_train = float(*v);
        if (auto v = cfg.get_double("val_split")) t.val_split = float(*v);
        if (auto v = cfg.get_u64("seed")) t.seed = *v;
        if (auto v = cfg.get_int("checkpoint_every")) t.checkpoint_every = std::int32_t(*v);
        if (auto v = cfg.get_int("threads")) t.threads = std::int32_t(*v);
        if (auto v = cfg.get_bool("augment_rotate")) t.augment_rotate = *v;
        t.validate();
        return t;
    }
};

struct TrainLogRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mae = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;

    void to_csv(std::ostream& out) const {
        out << "epoch,train_loss,val_mae,seconds\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.3f\n", r.epoch, r.train_loss,
                          r.val_mae, r.seconds);
            out << buf;
        }
    }
};

// ---------------------------------------------------------------------------
// Adam with bias correction.

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m, v;
    std::int64_t t = 0;

    explicit AdamState(const ModelParams<T>& params) {
        for (const auto& p : params.tensors()) {
            m.emplace_back(p.value.size(), T(0));
            v.emplace_back(p.value.size(), T(0));
        }
    }
};

template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, const TrainConfig& cfg) {
    state.t += 1;
    T b1 = T(cfg.adam_beta1), b2 = T(cfg.adam_beta2);
    T bc1 = T(1) - std::pow(b1, T(state.t));
    T bc2 = T(1) - std::pow(b2, T(state.t));
    auto& tensors = params.tensors();
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        auto& p = tensors[ti];
        auto& m = state.m[ti];
        auto& v = state.v[ti];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            T g = p.grad[i];
            if (!std::isfinite(double(g)))
                throw ContractError("adam_step: non-finite gradient in tensor '" + p.name + "'");
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            T mhat = m[i] / bc1;
            T vhat = v[i] / bc2;
            p.value[i] -= T(cfg.lr) * mhat / (std::sqrt(vhat) + T(cfg.adam_eps));
        }
    }
}

// ---------------------------------------------------------------------------

template <typename T>
double evaluate_model(ModelParams<T>& params, std::span<const PatchSample> samples) {
    double sum = 0.0;
    Tape<T> tape;
    std::vector<T> pts(std::size_t(params.config().m) * 3);
    std::array<T, 3> q;
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = T(s.points[i]);
        for (int i = 0; i < 3; ++i) q[i] = T(s.query[i]);
        tape.reset();
        ForwardNodes<T> out = forward_on_tape(tape, params, std::span<const T>(pts),
                                              std::span<const T>(q), /*with_grad=*/false);
        sum += std::abs(double(out.udf.value()) - double(s.udf));
    }
    return samples.empty() ? 0.0 : sum / double(samples.size());
}

namespace detail {

// Exactly round(fraction * n) distinct positions, drawn by partial shuffle.
inline std::vector<std::uint8_t> pick_fraction(int n, float fraction, Rng& rng) {
    std::vector<std::uint8_t> mask(n, 0);
    int want = int(std::lround(double(fraction) * n));
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < want; ++i) {
        int j = i + int(uniform_index(rng, std::uint64_t(n - i)));
        std::swap(idx[i], idx[j]);
        mask[idx[i]] = 1;
    }
    return mask;
}

}  // namespace detail

struct TrainResult {
    TrainLog log;
    double best_val_mae = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
};

// Mini-batch training with on-the-fly augmentation: every sample is randomly
// rotated, truncate_fraction of smooth samples are boundary-truncated, and
// noise_fraction of each batch gets Gaussian point noise. Validation always
// sees clean samples, and the returned parameters are the best-validation
// snapshot. Fully deterministic given (seed, config, dataset) at threads=1.
template <typename T>
TrainResult train(ModelParams<T>& params, std::span<const PatchSample> dataset, float val_split,
                  const TrainConfig& cfg,
                  const std::function<void(const TrainLogRow&)>& on_epoch = nullptr) {
    cfg.validate();
    if (dataset.empty()) throw ContractError("train: empty dataset");
    if (!(val_split > 0.0f && val_split <= 0.5f))
        throw ContractError("train: val_split must be in (0, 0.5]");
    const int m = params.config().m;
    for (const auto& s : dataset)
        if (s.m() != m)
            throw ContractError("train: dataset patch size " + std::to_string(s.m()) +
                                " does not match model m=" + std::to_string(m));

    const std::int64_t n = std::int64_t(dataset.size());
    std::vector<std::int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    {
        Rng split_rng = make_rng(mix_seed(cfg.seed, 0x5b1d));
        for (std::int64_t i = n - 1; i > 0; --i)
            std::swap(order[i], order[uniform_index(split_rng, std::uint64_t(i + 1))]);
    }
    std::int64_t n_val = std::max<std::int64_t>(1, std::int64_t(double(val_split) * double(n)));
    if (n_val >= n) n_val = n - 1;
    std::vector<std::int64_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::int64_t> train_idx(order.begin() + n_val, order.end());
    std::vector<PatchSample> val_samples;
    val_samples.reserve(val_idx.size());
    for (auto i : val_idx) val_samples.push_back(dataset[std::size_t(i)]);

    TrainResult result;
    AdamState<T> adam(params);
    std::vector<std::vector<T>> best_values;

    const int threads = std::max(1, cfg.threads);
    std::vector<ModelParams<T>> worker_params;
    std::vector<std::unique_ptr<Tape<T>>> tapes;
    for (int w = 0; w < threads; ++w) {
        if (w > 0) worker_params.push_back(params);
        tapes.push_back(std::make_unique<Tape<T>>());
    }

    auto run_shard = [&](ModelParams<T>& local, Tape<T>& tape, std::span<const std::int64_t> batch,
                         const std::vector<std::uint8_t>& noise_mask, std::size_t lo, std::size_t hi,
                         int epoch, double& loss_sum) {
        std::vector<T> pts(std::size_t(m) * 3);
        std::array<T, 3> q;
        T inv_batch = T(1) / T(batch.size());
        for (std::size_t bi = lo; bi < hi; ++bi) {
            std::int64_t di = batch[bi];
            const PatchSample& raw = dataset[std::size_t(di)];
            Rng srng = make_rng(mix_seed(cfg.seed, std::uint64_t(epoch) * 0x9d7 + 3, std::uint64_t(di)));
            AugmentPolicy policy;
            policy.rotate = cfg.augment_rotate;
            policy.truncate = raw.family == ShapeFamily::Smooth &&
                              uniform01(srng) < double(cfg.truncate_fraction);
            policy.noise = noise_mask[bi] != 0;
            policy.sigma_train = cfg.sigma_train;
            PatchSample s = augment(raw, policy, srng);
            for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = T(s.points[i]);
            for (int i = 0; i < 3; ++i) q[i] = T(s.query[i]);
            tape.reset();
            ForwardNodes<T> out =
                forward_on_tape(tape, local, std::span<const T>(pts), std::span<const T>(q), true);
            Tensor<T> l = loss_on_tape(tape, out, T(s.udf), T(params.config().lambda_d));
            loss_sum += double(l.value());
            tape.backward(l, inv_batch);
        }
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng = make_rng(mix_seed(cfg.seed, 0xe70c4, std::uint64_t(epoch)));
        for (std::int64_t i = std::int64_t(train_idx.size()) - 1; i > 0; --i)
            std::swap(train_idx[std::size_t(i)],
                      train_idx[std::size_t(uniform_index(shuffle_rng, std::uint64_t(i + 1)))]);

        double epoch_loss = 0.0;
        std::int64_t seen = 0;
        std::int64_t n_train = std::int64_t(train_idx.size());
        std::int64_t n_batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;
        for (std::int64_t b = 0; b < n_batches; ++b) {
            std::int64_t lo = b * cfg.batch_size;
            std::int64_t hi = std::min(n_train, lo + cfg.batch_size);
            std::span<const std::int64_t> batch(train_idx.data() + lo, std::size_t(hi - lo));
            Rng brng = make_rng(mix_seed(cfg.seed, 0xba7c4 + std::uint64_t(epoch), std::uint64_t(b)));
            std::vector<std::uint8_t> noise_mask =
                detail::pick_fraction(int(batch.size()), cfg.noise_fraction, brng);

            params.zero_grad();
            if (threads == 1) {
                run_shard(params, *tapes[0], batch, noise_mask, 0, batch.size(), epoch, epoch_loss);
            } else {
                for (auto& wp : worker_params)
                    for (std::size_t ti = 0; ti < params.tensors().size(); ++ti) {
                        wp.tensors()[ti].value = params.tensors()[ti].value;
                        std::fill(wp.tensors()[ti].grad.begin(), wp.tensors()[ti].grad.end(), T(0));
                    }
                std::vector<double> shard_loss(std::size_t(threads), 0.0);
                std::vector<std::thread> pool;
                std::size_t chunk = (batch.size() + threads - 1) / std::size_t(threads);
                for (int w = 0; w < threads; ++w) {
                    std::size_t slo = std::size_t(w) * chunk;
                    std::size_t shi = std::min(batch.size(), slo + chunk);
                    if (slo >= shi) break;
                    ModelParams<T>& local = w == 0 ? params : worker_params[std::size_t(w - 1)];
                    pool.emplace_back([&, w, slo, shi]() {
                        run_shard(local, *tapes[std::size_t(w)], batch, noise_mask, slo, shi, epoch,
                                  shard_loss[std::size_t(w)]);
                    });
                }
                for (auto& th : pool) th.join();
                for (int w = 1; w < threads; ++w) {
                    auto& wp = worker_params[std::size_t(w - 1)];
                    for (std::size_t ti = 0; ti < params.tensors().size(); ++ti) {
                        auto& dst = params.tensors()[ti].grad;
                        const auto& src = wp.tensors()[ti].grad;
                        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                    }
                }
                for (double l : shard_loss) epoch_loss += l;
            }
            seen += std::int64_t(batch.size());
            adam_step(params, adam, cfg);
        }

        double val_mae = evaluate_model(params, std::span<const PatchSample>(val_samples));
        TrainLogRow row;
        row.epoch = epoch;
        row.train_loss = seen > 0 ? epoch_loss / double(seen) : 0.0;
        row.val_mae = val_mae;
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.rows.push_back(row);
        if (on_epoch) on_epoch(row);

        if (val_mae < result.best_val_mae) {
            result.best_val_mae = val_mae;
            result.best_epoch = epoch;
            best_values.clear();
            for (const auto& p : params.tensors()) best_values.push_back(p.value);
        }
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            (epoch + 1) % cfg.checkpoint_every == 0) {
            save_checkpoint(cfg.checkpoint_path + ".epoch" + std::to_string(epoch), params);
        }
    }

    if (!best_values.empty())
        for (std::size_t ti = 0; ti < params.tensors().size(); ++ti)
            params.tensors()[ti].value = best_values[ti];
    return result;
}

}  // namespace losf
