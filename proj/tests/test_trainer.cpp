#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "phasezoo/rng.hpp"
#include "phasezoo/trainer.hpp"

using namespace phasezoo;

namespace {

DataPair separable_pair(std::uint64_t seed = 1) {
    Dataset full = make_gaussian_mixture(260, 2, 10.0, seed);
    return train_test_split(full, 0.23, seed);
}

}  // namespace

TEST_CASE("lr schedule: warmup apex, floors, continuity") {
    TrainConfig cfg;
    cfg.peak_lr = 0.5;
    cfg.warmup_fraction = 0.25;
    const std::int64_t total = 400;
    const std::int64_t warmup_end = 100;

    CHECK(lr_at(cfg, 0, total) == doctest::Approx(0.5 / 25.0));
    CHECK(lr_at(cfg, warmup_end, total) == doctest::Approx(0.5));
    CHECK(lr_at(cfg, total, total) == doctest::Approx(0.5 / 1e4));

    // continuous and monotone after the apex
    double prev = lr_at(cfg, warmup_end, total);
    for (std::int64_t s = warmup_end + 1; s <= total; ++s) {
        const double cur = lr_at(cfg, s, total);
        CHECK(cur <= prev + 1e-12);
        CHECK(std::abs(cur - prev) < 0.02);
        prev = cur;
    }

    CHECK_THROWS_AS(lr_at(cfg, -1, total), precondition_error);
    CHECK_THROWS_AS(lr_at(cfg, total + 1, total), precondition_error);

    cfg.schedule = LrSchedule::constant;
    CHECK(lr_at(cfg, 0, total) == doctest::Approx(0.5));
    CHECK(lr_at(cfg, total, total) == doctest::Approx(0.5));
}

TEST_CASE("epochs=0 gives only the initial checkpoint") {
    ModelSpec spec;
    spec.hidden_width = 4;
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 16;
    DataPair data = separable_pair();
    RunRecord run = train(spec, data, cfg);
    CHECK(run.history.empty());
    CHECK(run.checkpoints.size() == 1);
    CHECK(run.checkpoints[0].first == 0);
    CHECK_FALSE(run.diverged);
    CHECK(run.checkpoints[0].second.values == build_model(spec).values);
}

TEST_CASE("separable data reaches train accuracy 1.0") {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_width = 64;
    spec.num_hidden_layers = 2;
    spec.output_dim = 2;
    spec.seed = 3;
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.peak_lr = 0.1;
    cfg.seed = 3;
    cfg.strict_eval = true;
    DataPair data = separable_pair(1);
    RunRecord run = train(spec, data, cfg);
    CHECK_FALSE(run.diverged);
    CHECK(run.final.train_acc == doctest::Approx(1.0));

    // a perfect memorizer evaluated on its own train split
    auto [loss, acc] = evaluate(run.final_params(), spec, data.train);
    CHECK(acc == doctest::Approx(1.0));
    CHECK(loss < 0.2);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    ModelSpec spec;
    spec.hidden_width = 8;
    spec.seed = 9;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.peak_lr = 0.0;
    cfg.weight_decay = 0.0;
    DataPair data = separable_pair(2);
    RunRecord run = train(spec, data, cfg);
    CHECK(run.final_params().values == build_model(spec).values);
}

TEST_CASE("checkpoint cadence matches the contract") {
    ModelSpec spec;
    spec.hidden_width = 4;
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.peak_lr = 0.05;
    DataPair data = separable_pair(3);

    for (auto [epochs, every] : std::vector<std::pair<int, int>>{{10, 5}, {7, 5}, {10, 3}, {1, 1}}) {
        cfg.epochs = epochs;
        cfg.checkpoint_every = every;
        RunRecord run = train(spec, data, cfg);
        const std::size_t expect =
            static_cast<std::size_t>((epochs + every - 1) / every) + 1;
        CHECK(run.checkpoints.size() == expect);
        CHECK(run.checkpoints.front().first == 0);
        CHECK(run.checkpoints.back().first == epochs);
        for (std::size_t i = 1; i < run.checkpoints.size(); ++i)
            CHECK(run.checkpoints[i - 1].first < run.checkpoints[i].first);
        CHECK(run.history.size() == static_cast<std::size_t>(epochs));
    }
}

TEST_CASE("replay is bit identical") {
    ModelSpec spec;
    spec.hidden_width = 12;
    spec.seed = 5;
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 8;
    cfg.peak_lr = 0.2;
    cfg.momentum = 0.9;
    cfg.weight_decay = 1e-4;
    cfg.seed = 17;
    DataPair data = separable_pair(4);

    RunRecord a = train(spec, data, cfg);
    RunRecord b = train(spec, data, cfg);
    CHECK(a.final_params().values == b.final_params().values);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].test_acc == b.history[i].test_acc);
    }
    CHECK(a.generalization_gap == doctest::Approx(a.final.test_loss - a.final.train_loss));
}

TEST_CASE("single plain-SGD step matches the hand-computed update") {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_width = 3;
    spec.num_hidden_layers = 1;
    spec.output_dim = 2;
    spec.seed = 21;

    Dataset one;
    one.inputs = Matrix(1, 2);
    one.inputs(0, 0) = 0.3;
    one.inputs(0, 1) = -0.7;
    one.labels = {1};
    one.num_classes = 2;
    DataPair data{one, one};

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    cfg.peak_lr = 0.05;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.schedule = LrSchedule::constant;

    ParameterVector init = build_model(spec);
    LossGrad lg = loss_and_grad(init, spec, full_batch(one));
    RunRecord run = train(spec, data, cfg);
    REQUIRE(run.final_params().size() == init.size());
    for (std::size_t i = 0; i < init.size(); ++i) {
        const double expect = init.values[i] - 0.05 * lg.grad.values[i];
        CHECK(run.final_params().values[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("divergence is recorded as data, not thrown") {
    ModelSpec spec;
    spec.hidden_width = 16;
    spec.seed = 1;
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 2;
    cfg.peak_lr = 1e9;  // with weight decay the update multiplies params by ~ -lr*wd each step
    cfg.weight_decay = 1e-2;
    cfg.schedule = LrSchedule::constant;
    DataPair data = separable_pair(5);
    RunRecord run = train(spec, data, cfg);
    CHECK(run.diverged);
    CHECK(run.history.size() < 30);
    for (double v : run.final_params().values) CHECK(std::isfinite(v));
    for (const auto& [epoch, p] : run.checkpoints)
        for (double v : p.values) CHECK(std::isfinite(v));
}

TEST_CASE("evaluate: zero model gives ln C, random logits near 1/C") {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_width = 4;
    spec.output_dim = 3;
    ParameterVector p = build_model(spec);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    Dataset ds = make_spirals(600, 3, 0.2, 12);
    auto [loss, acc] = evaluate(p, spec, ds);
    CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    // all-zero logits: argmax resolves to class 0, a third of balanced labels
    CHECK(acc == doctest::Approx(1.0 / 3.0).epsilon(0.01));

    // random nets guess at chance up to a 3-sigma binomial bound
    const double sigma = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / 600.0);
    double mean_acc = 0.0;
    const int reps = 10;
    for (int r = 0; r < reps; ++r) {
        spec.seed = static_cast<std::uint64_t>(100 + r);
        mean_acc += evaluate(build_model(spec), spec, ds).second;
    }
    mean_acc /= reps;
    CHECK(std::abs(mean_acc - 1.0 / 3.0) < 3.0 * sigma);

    Dataset empty;
    empty.inputs = Matrix(0, 2);
    empty.num_classes = 3;
    CHECK_THROWS_AS(evaluate(p, spec, empty), precondition_error);
}

TEST_CASE("strict eval recomputes the epoch loss on a full pass") {
    ModelSpec spec;
    spec.hidden_width = 8;
    spec.seed = 2;
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.peak_lr = 0.15;
    DataPair data = separable_pair(6);

    RunRecord running = train(spec, data, cfg);
    cfg.strict_eval = true;
    RunRecord strict = train(spec, data, cfg);
    // identical parameter trajectory, different train-loss bookkeeping
    CHECK(running.final_params().values == strict.final_params().values);
    auto [tl, ta] = evaluate(strict.final_params(), spec, data.train);
    CHECK(strict.final.train_loss == doctest::Approx(tl));
    CHECK(strict.final.train_acc == doctest::Approx(ta));
}

TEST_CASE("batch size larger than the train split is rejected") {
    ModelSpec spec;
    TrainConfig cfg;
    cfg.batch_size = 10000;
    DataPair data = separable_pair(7);
    CHECK_THROWS_AS(train(spec, data, cfg), invalid_spec_error);
}
