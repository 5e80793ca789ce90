#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "phasezoo/nn.hpp"
#include "phasezoo/rng.hpp"

using namespace phasezoo;

namespace {

ParameterVector random_params(const ModelSpec& spec, std::uint64_t seed) {
    ParameterVector p = build_model(spec);
    Rng rng(seed);
    for (double& v : p.values) v = 0.5 * rng.normal();
    return p;
}

Batch random_batch(int n, int input_dim, int classes, std::uint64_t seed) {
    Batch b;
    b.inputs = Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(input_dim));
    b.labels.resize(static_cast<std::size_t>(n));
    Rng rng(seed);
    for (double& v : b.inputs.data) v = rng.normal();
    for (int i = 0; i < n; ++i) b.labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(classes));
    return b;
}

}  // namespace

TEST_CASE("parameter count closed form") {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_width = 4;
    spec.num_hidden_layers = 2;
    spec.output_dim = 2;
    CHECK(spec.parameter_count() == 42);

    ModelSpec tiny;
    tiny.input_dim = 1;
    tiny.hidden_width = 1;
    tiny.num_hidden_layers = 1;
    tiny.output_dim = 1;
    CHECK(tiny.parameter_count() == 4);

    CHECK(build_model(spec).size() == 42);
    std::size_t from_layout = 0;
    for (const auto& d : make_layout(spec)) from_layout += d.size();
    CHECK(from_layout == 42);
}

TEST_CASE("invalid specs rejected") {
    ModelSpec spec;
    spec.hidden_width = 0;
    CHECK_THROWS_AS(spec.parameter_count(), invalid_spec_error);
    spec.hidden_width = 8;
    spec.input_dim = -1;
    CHECK_THROWS_AS(build_model(spec), invalid_spec_error);
    spec.input_dim = 2;
    spec.hidden_width = 1 << 20;  // w^2 overflows the budget
    CHECK_THROWS_AS(spec.parameter_count(), invalid_spec_error);
}

TEST_CASE("build is deterministic and respects the kaiming bound") {
    ModelSpec spec;
    spec.input_dim = 3;
    spec.hidden_width = 16;
    spec.num_hidden_layers = 2;
    spec.output_dim = 4;
    spec.seed = 1234;

    ParameterVector a = build_model(spec);
    ParameterVector b = build_model(spec);
    CHECK(a.values == b.values);
    CHECK(a.same_layout(b));

    const double gain = std::sqrt(2.0);
    for (std::size_t t = 0; t < a.layout.size(); t += 2) {
        const double bound = gain * std::sqrt(3.0 / static_cast<double>(a.layout[t].cols));
        for (double v : a.tensor(t)) CHECK(std::abs(v) <= bound);
    }

    spec.seed = 1235;
    ParameterVector c = build_model(spec);
    CHECK(a.values != c.values);
}

TEST_CASE("layout offsets are contiguous and cover the vector") {
    ModelSpec spec;
    spec.input_dim = 5;
    spec.hidden_width = 7;
    spec.num_hidden_layers = 3;
    spec.output_dim = 4;
    const auto layout = make_layout(spec);
    std::size_t expect = 0;
    for (const auto& d : layout) {
        CHECK(d.offset == expect);
        expect += d.size();
    }
    CHECK(expect == spec.parameter_count());
}

TEST_CASE("split/join tensors round trip is bit identical") {
    ModelSpec spec;
    spec.hidden_width = 6;
    spec.seed = 77;
    ParameterVector p = build_model(spec);
    auto tensors = split_tensors(p);
    ParameterVector q = join_tensors(p.layout, tensors);
    CHECK(p.values == q.values);
    auto again = split_tensors(q);
    CHECK(join_tensors(p.layout, again).values == p.values);
}

TEST_CASE("forward: zero parameters give zero logits") {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_width = 4;
    spec.output_dim = 3;
    ParameterVector p = build_model(spec);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    Batch batch = random_batch(5, 2, 3, 9);
    Matrix logits = forward(p, spec, batch);
    CHECK(logits.rows == 5);
    CHECK(logits.cols == 3);
    for (double v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("forward: hand-evaluated 1-1-1 relu net") {
    ModelSpec spec;
    spec.input_dim = 1;
    spec.hidden_width = 1;
    spec.num_hidden_layers = 1;
    spec.output_dim = 1;
    ParameterVector p = build_model(spec);
    p.values = {1.0, 0.0, 1.0, 0.0};  // W0=1, b0=0, W1=1, b1=0
    Batch batch;
    batch.inputs = Matrix(1, 1);
    batch.inputs(0, 0) = 2.0;
    batch.labels = {0};
    Matrix logits = forward(p, spec, batch);
    CHECK(logits(0, 0) == doctest::Approx(2.0));

    batch.inputs(0, 0) = -2.0;  // relu clips
    CHECK(forward(p, spec, batch)(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("forward rejects dimension mismatch") {
    ModelSpec spec;
    spec.input_dim = 3;
    ParameterVector p = build_model(spec);
    Batch batch = random_batch(4, 2, 2, 1);
    CHECK_THROWS_AS(forward(p, spec, batch), shape_error);
}

TEST_CASE("uniform logits give ln C loss") {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_width = 4;
    spec.output_dim = 5;
    ParameterVector p = build_model(spec);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    Batch batch = random_batch(17, 2, 5, 3);
    CHECK(loss_value(p, spec, batch) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    spec.output_dim = 2;
    ParameterVector p2 = build_model(spec);
    std::fill(p2.values.begin(), p2.values.end(), 0.0);
    Batch b2 = random_batch(11, 2, 2, 4);
    CHECK(loss_value(p2, spec, b2) == doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("gradient matches central finite differences") {
    for (auto act : {Activation::relu, Activation::tanh}) {
        ModelSpec spec;
        spec.input_dim = 2;
        spec.hidden_width = 8;
        spec.num_hidden_layers = 2;
        spec.output_dim = 2;
        spec.activation = act;
        spec.seed = 42;
        ParameterVector p = random_params(spec, 5);
        Batch batch = random_batch(12, 2, 2, 6);

        LossGrad lg = loss_and_grad(p, spec, batch);
        CHECK(lg.grad.same_layout(p));
        auto fd = oracles::fd_gradient(p, spec, batch);
        CHECK(oracles::max_rel_err(lg.grad.values, fd) < 1e-4);
    }
}

TEST_CASE("loss_and_grad is pure") {
    ModelSpec spec;
    spec.seed = 3;
    ParameterVector p = random_params(spec, 8);
    Batch batch = random_batch(6, 2, 2, 2);
    auto a = loss_and_grad(p, spec, batch);
    auto b = loss_and_grad(p, spec, batch);
    CHECK(a.loss == b.loss);
    CHECK(a.grad.values == b.grad.values);
}

TEST_CASE("hvp: zero direction and linearity") {
    ModelSpec spec;
    spec.hidden_width = 6;
    spec.activation = Activation::tanh;
    spec.seed = 11;
    ParameterVector p = random_params(spec, 21);
    Batch batch = random_batch(9, 2, 2, 13);

    ParameterVector z = zeros_like(p);
    ParameterVector hz = hvp(p, spec, batch, z);
    for (double v : hz.values) CHECK(v == 0.0);

    ParameterVector v = random_params(spec, 22);
    ParameterVector hv = hvp(p, spec, batch, v);
    ParameterVector v3 = v;
    for (double& x : v3.values) x *= 3.0;
    ParameterVector hv3 = hvp(p, spec, batch, v3);
    for (std::size_t i = 0; i < hv.values.size(); ++i)
        CHECK(hv3.values[i] == doctest::Approx(3.0 * hv.values[i]).epsilon(1e-10));
}

TEST_CASE("hvp matches finite difference of gradients") {
    for (auto act : {Activation::relu, Activation::tanh}) {
        ModelSpec spec;
        spec.input_dim = 2;
        spec.hidden_width = 7;
        spec.num_hidden_layers = 2;
        spec.output_dim = 3;
        spec.activation = act;
        spec.seed = 17;
        ParameterVector p = random_params(spec, 31);
        ParameterVector v = random_params(spec, 32);
        Batch batch = random_batch(10, 2, 3, 14);

        ParameterVector hv = hvp(p, spec, batch, v);
        auto fd = oracles::fd_hvp(p, spec, batch, v);
        CHECK(oracles::max_rel_err(hv.values, fd) < 1e-3);
    }
}

TEST_CASE("hvp is symmetric: v.Hu == u.Hv") {
    ModelSpec spec;
    spec.hidden_width = 5;
    spec.activation = Activation::tanh;
    spec.seed = 7;
    ParameterVector p = random_params(spec, 41);
    Batch batch = random_batch(8, 2, 2, 15);
    ParameterVector u = random_params(spec, 42);
    ParameterVector v = random_params(spec, 43);

    ParameterVector hu = hvp(p, spec, batch, u);
    ParameterVector hv = hvp(p, spec, batch, v);
    double vhu = 0.0, uhv = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        vhu += v.values[i] * hu.values[i];
        uhv += u.values[i] * hv.values[i];
        scale += hu.values[i] * hu.values[i];
    }
    CHECK(std::abs(vhu - uhv) <= 1e-8 * std::max(1.0, std::abs(vhu)));
    CHECK(scale > 0.0);
}

TEST_CASE("spirals: deterministic, balanced, labeled in range") {
    Dataset a = make_spirals(300, 3, 0.0, 7);
    Dataset b = make_spirals(300, 3, 0.0, 7);
    CHECK(a.inputs.data == b.inputs.data);
    CHECK(a.labels == b.labels);
    CHECK(a.size() == 300);
    std::vector<int> counts(3, 0);
    for (int y : a.labels) {
        CHECK(y >= 0);
        CHECK(y < 3);
        counts[static_cast<std::size_t>(y)]++;
    }
    CHECK(counts[0] == 100);
    CHECK(counts[1] == 100);
    CHECK(counts[2] == 100);

    Dataset c = make_spirals(301, 3, 0.1, 7);
    std::vector<int> c2(3, 0);
    for (int y : c.labels) c2[static_cast<std::size_t>(y)]++;
    CHECK(*std::max_element(c2.begin(), c2.end()) - *std::min_element(c2.begin(), c2.end()) <= 1);
}

TEST_CASE("gaussian mixture: deterministic and balanced") {
    Dataset a = make_gaussian_mixture(200, 2, 10.0, 1);
    Dataset b = make_gaussian_mixture(200, 2, 10.0, 1);
    CHECK(a.inputs.data == b.inputs.data);
    CHECK(a.num_classes == 2);
    CHECK(a.size() == 200);
    CHECK_THROWS_AS(make_gaussian_mixture(1, 2, 1.0, 0), invalid_spec_error);
    CHECK_THROWS_AS(make_spirals(10, 2, -1.0, 0), invalid_spec_error);
}

TEST_CASE("csv load: row count, errors with row numbers") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "phasezoo_csv_test";
    fs::create_directories(dir);

    {
        std::ofstream out(dir / "ok.csv");
        out << "x0,x1,label\n0.5,1.5,0\n-1.0,2.0,1\n0.25,0.125,2\n";
    }
    Dataset ds = load_csv(dir / "ok.csv");
    CHECK(ds.size() == 3);
    CHECK(ds.input_dim() == 2);
    CHECK(ds.num_classes == 3);
    CHECK(ds.inputs(1, 0) == doctest::Approx(-1.0));

    {
        std::ofstream out(dir / "crlf.csv", std::ios::binary);
        out << "x0,x1,label\r\n0.5,1.5,0\r\n-1.0,2.0,1\r\n";
    }
    Dataset crlf = load_csv(dir / "crlf.csv");
    CHECK(crlf.size() == 2);
    CHECK(crlf.inputs(1, 1) == doctest::Approx(2.0));

    {
        std::ofstream out(dir / "bad.csv");
        out << "x0,x1,label\n0.5,1.5,0\nnope,2.0,1\n";
    }
    try {
        load_csv(dir / "bad.csv");
        CHECK(false);
    } catch (const ingestion_error& e) {
        CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }

    {
        std::ofstream out(dir / "short.csv");
        out << "x0,x1,label\n0.5,0\n";
    }
    CHECK_THROWS_AS(load_csv(dir / "short.csv"), ingestion_error);
    CHECK_THROWS_AS(load_csv(dir / "missing.csv"), io_error);
    fs::remove_all(dir);
}

TEST_CASE("train/test split is deterministic and class-consistent") {
    Dataset full = make_spirals(100, 2, 0.1, 3);
    DataPair p1 = train_test_split(full, 0.25, 5);
    DataPair p2 = train_test_split(full, 0.25, 5);
    CHECK(p1.train.inputs.data == p2.train.inputs.data);
    CHECK(p1.test.labels == p2.test.labels);
    CHECK(p1.train.size() == 75);
    CHECK(p1.test.size() == 25);
    CHECK(p1.train.split == Split::train);
    CHECK(p1.test.split == Split::test);
}
