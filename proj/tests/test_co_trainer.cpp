#include "colearn/co_trainer.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace colearn;

namespace {

TrainConfig quick_config(int epochs, double lr = 0.05) {
    TrainConfig c;
    c.batch_size = 16;
    c.epochs = epochs;
    c.schedule.eta0 = lr;
    c.seed = 21;
    return c;
}

struct Task {
    Dataset<double> train, test;
};

Task two_class_task(double separation = 3.0) {
    const auto all = synth_gaussian<double>(2, 4, separation, 150, 77);
    auto [train, test] = train_test_split(all, 0.3, 5);
    return {train, test};
}

Ensemble<double> make_pair(const Architecture& arch, double beta_bar, std::uint64_t s1 = 101, std::uint64_t s2 = 202) {
    return Ensemble<double>::create(arch, {s1, s2}, CouplingMatrix<double>::uniform(beta_bar, 2));
}

NetworkParams<double> one_tensor_params(double w0, double b0) {
    NetworkParams<double> p;
    p.layers.resize(1);
    p.layers[0].weight = Tensor<double>({1});
    p.layers[0].bias = Tensor<double>({1});
    p.layers[0].weight.data[0] = w0;
    p.layers[0].bias.data[0] = b0;
    return p;
}

}  // namespace

LrSchedule schedule(ScheduleKind kind, double eta0, int t_max) {
    LrSchedule s;
    s.kind = kind;
    s.eta0 = eta0;
    s.t_max = t_max;
    return s;
}

TEST_CASE("lr_at_epoch") {
    auto cos = schedule(ScheduleKind::cosine, 0.1, 30);
    CHECK(lr_at_epoch(cos, 0) == 0.1);
    CHECK(lr_at_epoch(cos, 30) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(std::abs(lr_at_epoch(cos, 30)) < 1e-15);
    CHECK(lr_at_epoch(cos, 15) == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(lr_at_epoch(cos, 10) == doctest::Approx(0.05 * (1 + std::cos(std::numbers::pi / 3))).epsilon(1e-15));
    CHECK_THROWS_AS(lr_at_epoch(cos, 31), std::out_of_range);
    CHECK_THROWS_AS(lr_at_epoch(cos, -1), std::out_of_range);

    auto flat = schedule(ScheduleKind::constant, 0.01, 1);
    CHECK(lr_at_epoch(flat, 0) == 0.01);
    CHECK(lr_at_epoch(flat, 100) == 0.01);

    auto step = schedule(ScheduleKind::step, 1.0, 40);
    CHECK(lr_at_epoch(step, 19) == 1.0);
    CHECK(lr_at_epoch(step, 20) == doctest::Approx(0.1));
    CHECK(lr_at_epoch(step, 30) == doctest::Approx(0.01));
    step.step_epochs = {5};
    step.step_factor = 0.5;
    CHECK(lr_at_epoch(step, 4) == 1.0);
    CHECK(lr_at_epoch(step, 5) == 0.5);

    CHECK_THROWS_AS(schedule(ScheduleKind::constant, 0.0, 1).validate(), std::invalid_argument);
    CHECK_THROWS_AS(schedule(ScheduleKind::cosine, 0.1, 0).validate(), std::invalid_argument);
}

TEST_CASE("schedule names") {
    for (auto k : {ScheduleKind::constant, ScheduleKind::step, ScheduleKind::cosine})
        CHECK(schedule_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(schedule_kind_from_string("linear"), std::invalid_argument);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.momentum = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.weight_decay = -1e-4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("sgd_step examples") {
    TrainConfig c;
    c.momentum = 0.9;
    c.weight_decay = 0.0;

    auto p = one_tensor_params(0.3, -0.2);
    auto v = p.zeros_like();
    const auto zero = p.zeros_like();
    sgd_step(p, zero, v, 0.1, c);
    CHECK(p.layers[0].weight.data[0] == 0.3);
    CHECK(p.layers[0].bias.data[0] == -0.2);

    c.momentum = 0.0;
    auto g = one_tensor_params(2.0, -1.0);
    sgd_step(p, g, v, 0.1, c);
    CHECK(p.layers[0].weight.data[0] == 0.3 - 0.1 * 2.0);
    CHECK(p.layers[0].bias.data[0] == -0.2 + 0.1 * 1.0);

    // Hand-rolled recurrence: v1 = g, v2 = 0.9 g + g; displacement lr g (1 + 1.9).
    c.momentum = 0.9;
    auto q = one_tensor_params(1.0, 1.0);
    auto vq = q.zeros_like();
    const auto gq = one_tensor_params(0.5, 0.5);
    sgd_step(q, gq, vq, 0.1, c);
    sgd_step(q, gq, vq, 0.1, c);
    CHECK(1.0 - q.layers[0].weight.data[0] == doctest::Approx(0.1 * 0.5 * 2.9).epsilon(1e-14));
    CHECK(vq.layers[0].weight.data[0] == doctest::Approx(0.5 * 1.9).epsilon(1e-14));
    CHECK(q.generation == 2);
}

TEST_CASE("weight decay touches weights and, when asked, biases") {
    TrainConfig c;
    c.momentum = 0.0;
    c.weight_decay = 0.5;
    auto p = one_tensor_params(2.0, 2.0);
    auto v = p.zeros_like();
    sgd_step(p, p.zeros_like(), v, 0.1, c);
    CHECK(p.layers[0].weight.data[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
    CHECK(p.layers[0].bias.data[0] == 2.0);

    c.decay_biases = true;
    auto b = one_tensor_params(2.0, 2.0);
    auto vb = b.zeros_like();
    sgd_step(b, b.zeros_like(), vb, 0.1, c);
    CHECK(b.layers[0].bias.data[0] == doctest::Approx(1.9));
}

TEST_CASE("sgd_step shape errors") {
    TrainConfig c;
    auto p = one_tensor_params(1, 1);
    auto v = p.zeros_like();
    NetworkParams<double> g;
    CHECK_THROWS_AS(sgd_step(p, g, v, 0.1, c), ShapeError);
    g = p.zeros_like();
    g.layers[0].weight = Tensor<double>({2});
    CHECK_THROWS_AS(sgd_step(p, g, v, 0.1, c), ShapeError);
}

TEST_CASE("epoch order is a seeded permutation shared by all members") {
    const auto a = epoch_order(50, 3, 0, true);
    CHECK(a == epoch_order(50, 3, 0, true));
    CHECK(a != epoch_order(50, 3, 1, true));
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == epoch_order(50, 3, 0, false));
}

TEST_CASE("zero epochs leave the ensemble untouched") {
    const auto task = two_class_task();
    auto e = make_pair(mlp(4, {8}, 2), -1.0);
    const auto before = e.members[0].params;
    const auto history = train(e, task.train, task.test, quick_config(0));
    CHECK(history.records.empty());
    CHECK(bitwise_equal(e.members[0].params, before));
}

TEST_CASE("beta = 0 co-training equals independent training bitwise") {
    const auto task = two_class_task();
    const auto arch = mlp(4, {8, 6}, 2);
    const auto cfg = quick_config(4);
    auto pair = make_pair(arch, 0.0);
    train(pair, task.train, task.test, cfg);
    for (std::size_t i = 0; i < 2; ++i) {
        auto alone = Ensemble<double>::create(arch, {pair.members[i].seed}, CouplingMatrix<double>::constant(0.0, 1));
        train(alone, task.train, task.test, cfg);
        CHECK(bitwise_equal(alone.members[0].params, pair.members[i].params));
        CHECK(bitwise_equal(alone.members[0].velocity, pair.members[i].velocity));
    }
}

TEST_CASE("serial and threaded phases give identical results") {
    const auto task = two_class_task();
    const auto arch = mlp(4, {8}, 2);
    for (double beta_bar : {-1.0, 0.5}) {
        auto cfg = quick_config(3);
        cfg.eval_every = 1;
        cfg.snapshot_every = 1;
        auto serial = Ensemble<double>::create(arch, {1, 2, 3}, CouplingMatrix<double>::uniform(beta_bar, 3));
        auto threaded = serial;
        cfg.threads = 1;
        const auto h1 = train(serial, task.train, task.test, cfg);
        cfg.threads = 3;
        const auto h3 = train(threaded, task.train, task.test, cfg);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(parameter_hash(serial.members[i].params) == parameter_hash(threaded.members[i].params));
        REQUIRE(h1.records.size() == h3.records.size());
        for (std::size_t r = 0; r < h1.records.size(); ++r) {
            CHECK(h1.records[r].test_accuracy == h3.records[r].test_accuracy);
            CHECK(h1.records[r].train_loss == h3.records[r].train_loss);
            CHECK(*h1.records[r].dissimilarity == *h3.records[r].dissimilarity);
        }
    }
}

TEST_CASE("training is reproducible run to run") {
    const auto task = two_class_task();
    auto cfg = quick_config(2);
    cfg.augment = true;
    auto a = make_pair(mlp(4, {8}, 2), -0.5);
    auto b = a;
    train(a, task.train, task.test, cfg);
    train(b, task.train, task.test, cfg);
    for (std::size_t i = 0; i < 2; ++i) CHECK(bitwise_equal(a.members[i].params, b.members[i].params));
}

TEST_CASE("identical initialization stays identical under symmetric coupling") {
    // Degenerate case: with equal seeds and a shared data order the two
    // members receive the same gradient every step. Distinct seeds are needed.
    const auto task = two_class_task();
    auto e = make_pair(mlp(4, {8}, 2), -1.0, 7, 7);
    train(e, task.train, task.test, quick_config(3));
    CHECK(bitwise_equal(e.members[0].params, e.members[1].params));

    auto d = make_pair(mlp(4, {8}, 2), -1.0, 7, 8);
    train(d, task.train, task.test, quick_config(3));
    CHECK_FALSE(bitwise_equal(d.members[0].params, d.members[1].params));
}

TEST_CASE("train_step updates each trainable member exactly once") {
    const auto task = two_class_task();
    auto e = Ensemble<double>::create(mlp(4, {8}, 2), {1, 2, 3}, CouplingMatrix<double>::uniform(-1.0, 3));
    e.members[1].trainable = false;
    const auto frozen = e.members[1].params;
    std::vector<Index> idx(16);
    for (Index k = 0; k < 16; ++k) idx[static_cast<std::size_t>(k)] = k;
    const RowMatrixX<double> x = task.train.inputs.topRows(16);
    const auto q = task.train.targets(idx);
    WorkerPool pool(3);
    const auto r = train_step(e, x, q, quick_config(1), 0, &pool);
    CHECK(e.members[0].params.generation == 1);
    CHECK(e.members[1].params.generation == 0);
    CHECK(e.members[2].params.generation == 1);
    CHECK(bitwise_equal(e.members[1].params, frozen));
    CHECK(r.loss.size() == 3);
    for (auto c : r.correct) CHECK((c >= 0 && c <= 16));
}

TEST_CASE("phase 2 gradients use the frozen pre-step predictions") {
    // The step of member 0 must be the same whether member 1 has already
    // been updated or not; compare against a manual computation that only
    // ever uses the initial parameters.
    const auto task = two_class_task();
    const auto arch = mlp(4, {5}, 2);
    auto e = make_pair(arch, -0.8);
    const auto init = e;
    std::vector<Index> idx(12);
    for (Index k = 0; k < 12; ++k) idx[static_cast<std::size_t>(k)] = k + 3;
    RowMatrixX<double> x(12, 4);
    for (std::size_t r = 0; r < idx.size(); ++r) x.row(static_cast<Index>(r)) = task.train.inputs.row(idx[r]);
    const auto q = task.train.targets(idx);
    const auto cfg = quick_config(1);
    train_step(e, x, q, cfg, 0);

    std::vector<RowMatrixX<double>> probs;
    for (const auto& m : init.members) probs.push_back(predict(m.arch, m.params, x));
    for (std::size_t i = 0; i < 2; ++i) {
        auto m = init.members[i];
        const auto cache = forward(m.arch, m.params, x, true);
        const auto loss = coupled_batch_loss<double>(static_cast<Index>(i), probs, q, init.coupling);
        const auto g = backward(m.arch, m.params, cache, loss.grad_logits);
        sgd_step(m.params, g, m.velocity, cfg.schedule.eta0, cfg);
        CHECK(bitwise_equal(m.params, e.members[i].params));
    }
}

TEST_CASE("exchange checksum sees any change") {
    PredictionExchange<double> ex;
    ex.probs = {RowMatrixX<double>::Constant(2, 3, 0.25), RowMatrixX<double>::Constant(2, 3, 0.5)};
    const auto before = ex.checksum();
    ex.probs[1](1, 2) = 0.5000000001;
    CHECK(ex.checksum() != before);
}

TEST_CASE("per-sample loss stays within the clipping bound") {
    // Extreme, disagreeing one-hot predictions are the worst case for the
    // clipped logs: every KL term is at most -ln(1e-12) = 27.63 nats.
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const Index n = 2 + static_cast<Index>(rng.below(4));
        const Index classes = 2 + static_cast<Index>(rng.below(8));
        const double beta_bar = rng.uniform(-3.0, 3.0);
        const auto coupling = CouplingMatrix<double>::uniform(beta_bar, n);
        std::vector<RowMatrixX<double>> probs;
        for (Index i = 0; i < n; ++i) {
            RowMatrixX<double> p = RowMatrixX<double>::Zero(1, classes);
            if (rng.bernoulli(0.7))
                p(0, static_cast<Index>(rng.below(static_cast<std::uint64_t>(classes)))) = 1.0;
            else
                p.row(0) = testing::random_distribution(rng, classes).transpose();
            probs.push_back(p);
        }
        RowMatrixX<double> q = RowMatrixX<double>::Zero(1, classes);
        q(0, static_cast<Index>(rng.below(static_cast<std::uint64_t>(classes)))) = 1.0;
        for (Index i = 0; i < n; ++i) {
            const auto out = coupled_batch_loss<double>(i, probs, q, coupling);
            const double bound = (1.0 + coupling.matrix().row(i).cwiseAbs().sum()) * 27.7;
            CHECK(std::isfinite(out.loss));
            CHECK(std::abs(out.loss) <= bound);
            CHECK(out.grad_logits.allFinite());
        }
    }
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    const auto task = two_class_task();
    auto e = make_pair(mlp(4, {8}, 2), 0.0);
    e.members[1].params.layers[0].weight.data[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        train(e, task.train, task.test, quick_config(1));
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& err) {
        const std::string msg = err.what();
        CHECK(msg.find("network 1") != std::string::npos);
        CHECK(msg.find("epoch 0") != std::string::npos);
        CHECK(msg.find("batch 0") != std::string::npos);
    }
}

TEST_CASE("history records per evaluated epoch") {
    const auto task = two_class_task();
    auto e = make_pair(mlp(4, {8}, 2), -0.5);
    auto cfg = quick_config(5);
    cfg.eval_every = 2;
    cfg.snapshot_every = 5;
    cfg.probe_size = 7;
    int seen = 0;
    TrainObserver<double> obs;
    obs.on_epoch_end = [&](int, const Ensemble<double>&) { ++seen; };
    const auto h = train(e, task.train, task.test, cfg, obs);
    CHECK(seen == 5);
    REQUIRE(h.records.size() == 3);
    CHECK(h.records[0].epoch == 2);
    CHECK(h.records[1].epoch == 4);
    CHECK(h.records[2].epoch == 5);
    CHECK_FALSE(h.records[0].dissimilarity.has_value());
    REQUIRE(h.records[2].dissimilarity.has_value());
    CHECK(h.records[2].probe_predictions.size() == 3);
    CHECK(h.records[2].probe_predictions[0].rows() == 7);
    for (const auto& r : h.records) {
        for (double a : r.test_accuracy) CHECK((a >= 0 && a <= 1));
        for (double a : r.train_accuracy) CHECK((a >= 0 && a <= 1));
        CHECK((r.ensemble_accuracy >= 0 && r.ensemble_accuracy <= 1));
    }
}

TEST_CASE("tiny separable task: an independent pair learns it") {
    const auto task = two_class_task();
    auto pair = make_pair(mlp(4, {8}, 2), 0.0);
    const auto h = train(pair, task.train, task.test, quick_config(50));
    CHECK(h.records.back().test_accuracy[0] > 0.9);
    CHECK(h.records.back().test_accuracy[1] > 0.9);
}

TEST_CASE("negative coupling lowers individual accuracy") {
    // Four overlapping classes so that pushing members apart has room to cost
    // accuracy; averaged over three seed pairs.
    const auto all = synth_gaussian<double>(4, 4, 2.5, 150, 77);
    const auto [train_set, test_set] = train_test_split(all, 0.3, 5);
    auto mean_individual = [&](double beta_bar) {
        double total = 0;
        for (std::uint64_t r = 0; r < 3; ++r) {
            auto e = Ensemble<double>::create(mlp(4, {8}, 4), {101 + r, 202 + r},
                                              CouplingMatrix<double>::uniform(beta_bar, 2));
            const auto h = train(e, train_set, test_set, quick_config(50));
            for (double a : h.records.back().test_accuracy) total += a / 6.0;
        }
        return total;
    };
    const double base = mean_individual(0.0);
    const double neg = mean_individual(-1.0);
    MESSAGE("mean individual accuracy: beta=0 " << base << ", beta_bar=-1 " << neg);
    CHECK(base > 0.9);
    CHECK(neg < base);
}
