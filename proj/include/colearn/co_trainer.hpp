#pragma once

// Synchronous co-training. Per minibatch:
//   phase 1: every member runs forward on the same batch;
//   barrier: the set of member predictions is frozen;
//   phase 2: every trainable member computes its coupled gradient against the
//            frozen set, backpropagates and takes an SGD step.
// Members only ever read the frozen set in phase 2, so no update made in
// phase 2 is visible to another member before the next batch.

#include "colearn/analytics.hpp"
#include "colearn/coupled_loss.hpp"
#include "colearn/data.hpp"
#include "colearn/ensemble.hpp"
#include "colearn/parallel.hpp"
#include "colearn/rng.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace colearn {

enum class ScheduleKind { constant, step, cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

struct LrSchedule {
    ScheduleKind kind = ScheduleKind::constant;
    double eta0 = 0.01;
    int t_max = 1;
    /// kind == step: epochs at which the rate is multiplied by step_factor.
    /// Empty means 50% and 75% of t_max.
    std::vector<int> step_epochs;
    double step_factor = 0.1;

    void validate() const;
};

/// Learning rate for epoch t (0 <= t <= t_max).
double lr_at_epoch(const LrSchedule& schedule, int t);

struct TrainConfig {
    int batch_size = 128;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int epochs = 30;
    LrSchedule schedule;
    std::uint64_t seed = 0;
    bool shuffle = true;
    /// Evaluate on the test set every this many epochs (0: final epoch only).
    int eval_every = 0;
    bool decay_biases = false;
    bool augment = false;
    /// Record pairwise dissimilarity every this many epochs (0: never).
    int snapshot_every = 0;
    /// Test samples whose predictions are kept with each snapshot (for
    /// trajectory embeddings); 0 keeps none.
    int probe_size = 0;
    /// Workers for the per-member phases.
    int threads = 1;

    void validate() const;
};

/// SGD with classical momentum and L2 weight decay:
///   v <- momentum * v + (grad + weight_decay * w)
///   w <- w - lr * v
/// Bias tensors are decayed only when config.decay_biases is set.
template <typename Scalar>
void sgd_step(NetworkParams<Scalar>& params, const NetworkParams<Scalar>& grads, NetworkParams<Scalar>& velocity,
              double lr, const TrainConfig& config) {
    if (params.layers.size() != grads.layers.size() || params.layers.size() != velocity.layers.size())
        throw ShapeError("sgd_step: parameter, gradient and momentum layouts differ");
    const auto mu = static_cast<Scalar>(config.momentum);
    const auto decay = static_cast<Scalar>(config.weight_decay);
    const auto rate = static_cast<Scalar>(lr);
    auto update = [&](Tensor<Scalar>& w, const Tensor<Scalar>& g, Tensor<Scalar>& v, bool decayed) {
        if (w.shape != g.shape || w.shape != v.shape) throw ShapeError("sgd_step: tensor shape mismatch");
        if (decayed && decay != Scalar(0))
            v.data = mu * v.data + (g.data + decay * w.data);
        else
            v.data = mu * v.data + g.data;
        w.data -= rate * v.data;
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        if (params.layers[l].weight.empty()) continue;
        update(params.layers[l].weight, grads.layers[l].weight, velocity.layers[l].weight, true);
        update(params.layers[l].bias, grads.layers[l].bias, velocity.layers[l].bias, config.decay_biases);
    }
    ++params.generation;
}

template <typename Scalar>
struct StepResult {
    std::vector<Scalar> loss;       // mean coupled loss per member
    std::vector<Scalar> task_term;  // mean KL(q || p_i) per member
    std::vector<int> correct;       // correct argmaxes per member on this batch
};

/// Frozen predictions of one minibatch.
template <typename Scalar>
struct PredictionExchange {
    std::vector<RowMatrixX<Scalar>> probs;
    std::vector<std::uint64_t> generations;

    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : probs) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(p.data());
            for (std::size_t i = 0; i < sizeof(Scalar) * static_cast<std::size_t>(p.size()); ++i) {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        }
        return h;
    }
};

/// One synchronous co-training step on a minibatch (inputs and one-hot targets).
/// Throws DivergenceError on a non-finite loss and ContractError if the frozen
/// prediction set changes while phase 2 runs.
template <typename Scalar>
StepResult<Scalar> train_step(Ensemble<Scalar>& ensemble, const RowMatrixX<Scalar>& inputs,
                              const RowMatrixX<Scalar>& targets, const TrainConfig& config, int epoch,
                              WorkerPool* pool = nullptr, int batch_index = 0) {
    ensemble.validate();
    const auto n = static_cast<std::size_t>(ensemble.size());
    const double lr = lr_at_epoch(config.schedule, epoch);
    auto run = [&](std::size_t count, const std::function<void(std::size_t)>& fn) {
        if (pool != nullptr)
            pool->parallel_for(count, fn);
        else
            for (std::size_t k = 0; k < count; ++k) fn(k);
    };

    // Phase 1: simultaneous predictions.
    std::vector<ForwardCache<Scalar>> caches(n);
    PredictionExchange<Scalar> exchange;
    exchange.probs.resize(n);
    exchange.generations.resize(n);
    run(n, [&](std::size_t i) {
        const auto& m = ensemble.members[i];
        caches[i] = forward(m.arch, m.params, inputs, m.trainable);
        exchange.probs[i] = softmax(caches[i].logits());
        exchange.generations[i] = m.params.generation;
    });

    // Barrier: the exchange is read-only from here on.
    const PredictionExchange<Scalar>& frozen = exchange;
    const std::uint64_t frozen_sum = frozen.checksum();
    const std::span<const RowMatrixX<Scalar>> peers(frozen.probs);

    StepResult<Scalar> result;
    result.loss.assign(n, Scalar(0));
    result.task_term.assign(n, Scalar(0));
    result.correct.assign(n, 0);

    // Phase 2: coupled gradients against the frozen set, then local updates.
    run(n, [&](std::size_t i) {
        auto& m = ensemble.members[i];
        const auto batch = coupled_batch_loss<Scalar>(static_cast<Index>(i), peers, targets, ensemble.coupling);
        if (!std::isfinite(static_cast<double>(batch.loss)))
            throw DivergenceError("non-finite loss for network " + std::to_string(i) + " at epoch " +
                                  std::to_string(epoch) + ", batch " + std::to_string(batch_index));
        result.loss[i] = batch.loss;
        result.task_term[i] = batch.task_term;
        int correct = 0;
        for (Index r = 0; r < targets.rows(); ++r)
            if (targets(r, argmax(frozen.probs[i].row(r))) == Scalar(1)) ++correct;
        result.correct[i] = correct;
        if (m.params.generation != frozen.generations[i])
            throw ContractError("barrier violated: network " + std::to_string(i) + " changed before its update");
        if (m.trainable) {
            const auto grads = backward(m.arch, m.params, caches[i], batch.grad_logits);
            sgd_step(m.params, grads, m.velocity, lr, config);
        }
    });
    if (frozen.checksum() != frozen_sum) throw ContractError("barrier violated: frozen predictions were modified");
    return result;
}

struct EpochRecord {
    int epoch = 0;  // epochs completed
    double lr = 0;
    std::vector<double> train_accuracy;  // running accuracy over the epoch's batches
    std::vector<double> train_loss;      // mean coupled loss over the epoch
    std::vector<double> test_accuracy;
    std::vector<double> test_task_kl;    // <KL(q || p_i)> on the test set
    double ensemble_accuracy = 0;        // arithmetic combiner, test set
    std::optional<MatrixX<double>> dissimilarity;
    /// Probe-sample predictions per member, plus the ensemble mean last.
    std::vector<RowMatrixX<double>> probe_predictions;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
};

template <typename Scalar>
struct TrainObserver {
    std::function<void(const EpochRecord&)> on_record;
    std::function<void(int epoch, const Ensemble<Scalar>&)> on_epoch_end;
};

/// Order of samples for one epoch; identical for every member.
std::vector<Index> epoch_order(Index samples, std::uint64_t seed, int epoch, bool shuffle);

/// Full training loop. Deterministic given config.seed and the member seeds,
/// independent of config.threads.
template <typename Scalar>
TrainHistory train(Ensemble<Scalar>& ensemble, const Dataset<Scalar>& train_set, const Dataset<Scalar>& test_set,
                   const TrainConfig& config, const TrainObserver<Scalar>& observer = {}) {
    config.validate();
    ensemble.validate();
    train_set.validate();
    test_set.validate();
    const auto n = static_cast<std::size_t>(ensemble.size());
    WorkerPool pool(static_cast<std::size_t>(std::max(1, config.threads)));
    TrainHistory history;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = epoch_order(train_set.size(), config.seed, epoch, config.shuffle);
        std::vector<double> loss_sum(n, 0.0);
        std::vector<long> correct(n, 0);
        long seen = 0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            RowMatrixX<Scalar> inputs(static_cast<Index>(idx.size()), train_set.inputs.cols());
            if (config.augment) {
                Rng rng(derive_seed({config.seed, 0x617567ULL, static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(batch_index)}));
                for (std::size_t r = 0; r < idx.size(); ++r)
                    inputs.row(static_cast<Index>(r)) =
                        augment<Scalar>(train_set.inputs.row(idx[r]).transpose(), train_set.sample_shape, rng,
                                        train_set.flip_allowed)
                            .transpose();
            } else {
                for (std::size_t r = 0; r < idx.size(); ++r) inputs.row(static_cast<Index>(r)) = train_set.inputs.row(idx[r]);
            }
            const RowMatrixX<Scalar> targets = train_set.targets(idx);
            const auto step = train_step(ensemble, inputs, targets, config, epoch, &pool, batch_index);
            for (std::size_t i = 0; i < n; ++i) {
                loss_sum[i] += static_cast<double>(step.loss[i]) * static_cast<double>(idx.size());
                correct[i] += step.correct[i];
            }
            seen += static_cast<long>(idx.size());
        }

        const int done = epoch + 1;
        const bool last = done == config.epochs;
        const bool eval = last || (config.eval_every > 0 && done % config.eval_every == 0);
        const bool snap = config.snapshot_every > 0 && done % config.snapshot_every == 0;
        if (eval || snap) {
            EpochRecord rec;
            rec.epoch = done;
            rec.lr = lr_at_epoch(config.schedule, epoch);
            for (std::size_t i = 0; i < n; ++i) {
                rec.train_accuracy.push_back(static_cast<double>(correct[i]) / static_cast<double>(seen));
                rec.train_loss.push_back(loss_sum[i] / static_cast<double>(seen));
            }
            const auto probs = member_predictions(ensemble, test_set, &pool);
            const RowMatrixX<Scalar> q = test_set.targets();
            for (std::size_t i = 0; i < n; ++i) {
                rec.test_accuracy.push_back(accuracy_from_probs(probs[i], test_set.labels));
                const auto kl = (q.array() * (detail::clipped_log(q.array()) - detail::clipped_log(probs[i].array())))
                                    .rowwise()
                                    .sum();
                rec.test_task_kl.push_back(static_cast<double>(kl.sum()) / static_cast<double>(test_set.size()));
            }
            const std::span<const RowMatrixX<Scalar>> view(probs);
            rec.ensemble_accuracy = accuracy_from_classes(ensemble_predictions(view, Combiner::arithmetic), test_set.labels);
            if (snap) {
                rec.dissimilarity = pairwise_dissimilarity(view);
                if (config.probe_size > 0) {
                    const Index rows = std::min<Index>(config.probe_size, test_set.size());
                    for (const auto& p : probs) rec.probe_predictions.push_back(p.topRows(rows).template cast<double>());
                    rec.probe_predictions.push_back(ensemble_mean(view).topRows(rows).template cast<double>());
                }
            }
            if (observer.on_record) observer.on_record(rec);
            history.records.push_back(std::move(rec));
        }
        if (observer.on_epoch_end) observer.on_epoch_end(done, ensemble);
    }
    return history;
}

}  // namespace colearn
