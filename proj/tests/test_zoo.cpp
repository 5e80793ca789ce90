#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "phasezoo/jsonio.hpp"
#include "phasezoo/pipeline.hpp"
#include "phasezoo/zoo.hpp"

using namespace phasezoo;
namespace fs = std::filesystem;

namespace {

GridSpec tiny_grid() {
    GridSpec grid;
    grid.widths = {2, 4};
    grid.batch_sizes = {8, 16};
    grid.seeds = {0, 1};
    grid.base_model.input_dim = 2;
    grid.base_model.num_hidden_layers = 2;
    grid.base_model.output_dim = 2;
    grid.base_train.epochs = 3;
    grid.base_train.peak_lr = 0.1;
    grid.base_train.checkpoint_every = 2;
    grid.dataset.generator = DataGenerator::gaussian_mixture;
    grid.dataset.n = 80;
    grid.dataset.classes = 2;
    grid.dataset.separation = 4.0;
    grid.dataset.test_fraction = 0.25;
    return grid;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "phasezoo_zoo_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// inverse of export_grid_csv, kept test-side on purpose
std::vector<std::vector<std::string>> parse_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) cells.push_back(tok);
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("plan_grid: counts and ordering") {
    GridSpec grid = tiny_grid();
    grid.widths = {2, 4, 8, 16, 32, 64, 128, 256};
    grid.batch_sizes = {8, 16, 32, 64, 128, 256, 512, 1024};
    grid.seeds = {0, 1, 2};
    auto cells = plan_grid(grid);
    CHECK(cells.size() == 192);

    // lexicographic in (width, temperature, seed)
    for (std::size_t i = 1; i < cells.size(); ++i) {
        const auto& a = cells[i - 1];
        const auto& b = cells[i];
        const auto ta = std::make_tuple(a.width, a.batch_size, a.seed);
        const auto tb = std::make_tuple(b.width, b.batch_size, b.seed);
        CHECK(ta < tb);
    }

    GridSpec one = tiny_grid();
    one.widths = {4};
    one.batch_sizes = {8};
    one.seeds = {7};
    CHECK(plan_grid(one).size() == 1);
}

TEST_CASE("plan_grid rejects bad axes") {
    GridSpec grid = tiny_grid();
    grid.widths = {2, 2};
    CHECK_THROWS_AS(plan_grid(grid), invalid_spec_error);
    grid.widths = {4, 2};
    CHECK_THROWS_AS(plan_grid(grid), invalid_spec_error);
    grid.widths = {};
    CHECK_THROWS_AS(plan_grid(grid), invalid_spec_error);
    grid = tiny_grid();
    grid.seeds = {1, 1};
    CHECK_THROWS_AS(plan_grid(grid), invalid_spec_error);
}

TEST_CASE("cell keys are stable and sortable") {
    GridSpec grid = tiny_grid();
    GridCell cell;
    cell.width = 32;
    cell.batch_size = 128;
    cell.seed = 2;
    CHECK(cell_key(grid, cell) == "w32_bs128_s2");

    grid.temperature_axis = TemperatureAxis::peak_lr;
    cell.peak_lr = 0.05;
    CHECK(cell_key(grid, cell) == "w32_lr0.05_s2");
}

TEST_CASE("learning-rate temperature axis plans against peak_lrs") {
    GridSpec grid = tiny_grid();
    grid.temperature_axis = TemperatureAxis::peak_lr;
    grid.peak_lrs = {0.01, 0.1, 1.0};
    auto cells = plan_grid(grid);
    CHECK(cells.size() == 2 * 3 * 2);
    CHECK(cells[0].peak_lr == 0.01);
    CHECK(cells[0].batch_size == grid.base_train.batch_size);
    CHECK(cell_train_config(grid, cells[0]).peak_lr == 0.01);
}

TEST_CASE("learning-rate axis zoos run end to end") {
    GridSpec grid = tiny_grid();
    grid.temperature_axis = TemperatureAxis::peak_lr;
    grid.peak_lrs = {0.01, 0.2};
    grid.widths = {4};
    grid.seeds = {0};
    grid.base_train.batch_size = 16;

    const fs::path root = fresh_dir("lr_axis");
    ZooManifest m = run_grid(plan_zoo(grid, root), 1);
    CHECK(m.count(CellStatus::done) == 2);
    CHECK(fs::exists(root / "w4_lr0.01_s0" / "results.json"));
    CHECK(fs::exists(root / "w4_lr0.2_s0" / "results.json"));

    json cfg = read_json(root / "w4_lr0.2_s0" / "config.json");
    CHECK(train_config_from_json(cfg.at("train")).peak_lr == 0.2);

    GridTable acc = collect_grid(load_manifest(root), "test_acc");
    CHECK(acc.col_labels == std::vector<std::string>{"0.01", "0.2"});
    CHECK(acc.at(0, 0).has_value());
    CHECK(acc.at(0, 1).has_value());
}

TEST_CASE("checkpoint round trip is bit exact") {
    const fs::path dir = fresh_dir("ckpt");
    ModelSpec spec;
    spec.hidden_width = 6;
    spec.seed = 99;
    ParameterVector p = build_model(spec);

    save_checkpoint(dir / "a", p);
    ParameterVector q = load_checkpoint(dir / "a");
    CHECK(q.same_layout(p));
    // storage is f32; the round trip through it is exact
    for (std::size_t i = 0; i < p.size(); ++i)
        CHECK(q.values[i] == static_cast<double>(static_cast<float>(p.values[i])));

    save_checkpoint(dir / "b", q);
    CHECK(slurp(dir / "a" / "model.bin") == slurp(dir / "b" / "model.bin"));
    CHECK(load_checkpoint(dir / "b").values == q.values);
}

TEST_CASE("checkpoint error contracts") {
    const fs::path dir = fresh_dir("ckpt_err");
    ModelSpec spec;
    spec.hidden_width = 3;
    ParameterVector p = build_model(spec);
    save_checkpoint(dir / "c", p);

    // truncation -> corruption error, never garbage
    {
        const std::string full = slurp(dir / "c" / "model.bin");
        std::ofstream out(dir / "c" / "model.bin", std::ios::binary | std::ios::trunc);
        out.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "c"), corruption_error);

    save_checkpoint(dir / "d", p);
    {
        std::ofstream out(dir / "d" / "model.bin", std::ios::binary | std::ios::trunc);
        out << "MZOO garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "d"), format_error);

    ParameterVector empty;
    CHECK_THROWS_AS(save_checkpoint(dir / "e", empty), precondition_error);
}

TEST_CASE("run_grid: worker count does not change any byte") {
    GridSpec grid = tiny_grid();
    const fs::path root1 = fresh_dir("run_w1");
    const fs::path root4 = fresh_dir("run_w4");

    ZooManifest m1 = run_grid(plan_zoo(grid, root1), 1);
    ZooManifest m4 = run_grid(plan_zoo(grid, root4), 4);
    CHECK(m1.count(CellStatus::done) == 8);
    CHECK(m4.count(CellStatus::done) == 8);

    for (const auto& [key, info] : m1.cells) {
        CHECK(slurp(root1 / key / "results.json") == slurp(root4 / key / "results.json"));
        CHECK(slurp(root1 / key / "config.json") == slurp(root4 / key / "config.json"));
        for (int epoch : list_checkpoint_epochs(root1 / key)) {
            CHECK(slurp(checkpoint_dir(root1 / key, epoch) / "model.bin") ==
                  slurp(checkpoint_dir(root4 / key, epoch) / "model.bin"));
        }
    }
    CHECK(slurp(root1 / "manifest.json") == slurp(root4 / "manifest.json"));
}

TEST_CASE("run_grid resumes idempotently") {
    GridSpec grid = tiny_grid();
    const fs::path root = fresh_dir("resume");
    ZooManifest planned = plan_zoo(grid, root);

    // simulate an interrupted run: train only 3 cells by hand
    const DataPair data = make_data(grid.dataset);
    int trained = 0;
    for (auto& [key, info] : planned.cells) {
        if (trained == 3) break;
        RunRecord run = train(cell_model_spec(grid, info.cell), data, cell_train_config(grid, info.cell));
        const fs::path cell_dir = root / key;
        fs::create_directories(cell_dir);
        for (const auto& [epoch, params] : run.checkpoints) save_checkpoint(checkpoint_dir(cell_dir, epoch), params);
        json history = json::array();
        for (const auto& rec : run.history) history.push_back(to_json(rec));
        write_json_atomic(cell_dir / "results.json",
                          json{{"status", "done"},
                               {"final", to_json(run.final)},
                               {"generalization_gap", run.generalization_gap},
                               {"history", history}});
        ++trained;
    }

    std::map<std::string, fs::file_time_type> mtimes;
    for (const auto& [key, info] : planned.cells) {
        if (fs::exists(root / key / "results.json"))
            mtimes[key] = fs::last_write_time(root / key / "results.json");
    }
    CHECK(mtimes.size() == 3);

    ZooManifest resumed = run_grid(load_manifest(root), 2);
    CHECK(resumed.count(CellStatus::done) == 8);
    for (const auto& [key, t] : mtimes)
        CHECK(fs::last_write_time(root / key / "results.json") == t);
}

TEST_CASE("metric annotation is worker-invariant byte for byte") {
    GridSpec grid = tiny_grid();
    const fs::path root1 = fresh_dir("metrics_w1");
    const fs::path root3 = fresh_dir("metrics_w3");

    MetricOptions opts;
    opts.probes = 8;
    opts.power_max_iters = 40;
    opts.bezier_steps = 10;
    ZooManifest m1 = compute_metrics(run_grid(plan_zoo(grid, root1), 1), opts, 1);
    ZooManifest m3 = compute_metrics(run_grid(plan_zoo(grid, root3), 2), opts, 3);

    for (const auto& [key, info] : m1.cells) {
        REQUIRE(fs::exists(root1 / key / "metrics.json"));
        CHECK(slurp(root1 / key / "metrics.json") == slurp(root3 / key / "metrics.json"));
    }
}

TEST_CASE("collect_grid: seed means, NA for diverged, schema errors") {
    GridSpec grid = tiny_grid();
    const fs::path root = fresh_dir("collect");
    ZooManifest m = run_grid(plan_zoo(grid, root), 2);

    GridTable acc = collect_grid(m, "test_acc");
    REQUIRE(acc.row_labels.size() == 2);
    REQUIRE(acc.col_labels.size() == 2);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) REQUIRE(acc.at(r, c).has_value());

    // mean over seeds, checked against the raw per-cell records
    {
        double sum = 0.0;
        for (std::uint64_t s : {0ULL, 1ULL}) {
            GridCell cell;
            cell.width = 2;
            cell.batch_size = 8;
            cell.peak_lr = grid.base_train.peak_lr;
            cell.seed = s;
            sum += m.cells.at(cell_key(grid, cell)).final.test_acc;
        }
        CHECK(*acc.at(0, 0) == doctest::Approx(sum / 2.0).epsilon(1e-15));
    }

    // poison one seed -> the whole (width, batch) entry goes NA
    {
        json j = read_json(root / "w2_bs8_s0" / "results.json");
        j["status"] = "diverged";
        write_json_atomic(root / "w2_bs8_s0" / "results.json", j);
    }
    ZooManifest poisoned = load_manifest(root);
    GridTable acc2 = collect_grid(poisoned, "test_acc");
    CHECK_FALSE(acc2.at(0, 0).has_value());
    CHECK(acc2.at(0, 1).has_value());

    CHECK_THROWS_AS(collect_grid(m, "no_such_field"), schema_error);

    GridSpec single = tiny_grid();
    single.seeds = {0};
    ZooManifest sm;
    sm.grid = single;
    CHECK_THROWS_AS(collect_grid(sm, "mc"), schema_error);
}

TEST_CASE("csv export: headers, NA, full-precision round trip") {
    GridTable t;
    t.row_labels = {"2", "4"};
    t.col_labels = {"8", "16"};
    t.values = {0.125, 1.0 / 3.0, std::nullopt, 0.9999999999999998};

    const fs::path dir = fresh_dir("csv");
    export_grid_csv(t, dir / "t.csv");
    auto rows = parse_csv(dir / "t.csv");
    REQUIRE(rows.size() == 3);
    REQUIRE(rows[0].size() == 3);
    CHECK(rows[0][0] == "width");
    CHECK(rows[0][1] == "8");
    CHECK(rows[0][2] == "16");
    CHECK(rows[1][0] == "2");
    CHECK(rows[2][1] == "NA");

    CHECK(std::stod(rows[1][1]) == 0.125);
    CHECK(std::stod(rows[1][2]) == 1.0 / 3.0);
    CHECK(std::stod(rows[2][2]) == 0.9999999999999998);

    GridLabelTable lt;
    lt.row_labels = {"2"};
    lt.col_labels = {"8"};
    lt.values = {std::optional<std::string>("IVB")};
    export_grid_csv(lt, dir / "l.csv");
    auto lrows = parse_csv(dir / "l.csv");
    CHECK(lrows[1][1] == "IVB");
}

TEST_CASE("config.json reconstructs the exact specs") {
    GridSpec grid = tiny_grid();
    const fs::path root = fresh_dir("roundtrip");
    ZooManifest m = run_grid(plan_zoo(grid, root), 1);

    const std::string key = m.cells.begin()->first;
    json cfg = read_json(root / key / "config.json");
    ModelSpec spec = model_spec_from_json(cfg.at("model"));
    TrainConfig tc = train_config_from_json(cfg.at("train"));
    DatasetSpec ds = dataset_spec_from_json(cfg.at("dataset"));

    // retraining from config.json reproduces the final checkpoint bit-for-bit
    RunRecord run = train(spec, make_data(ds), tc);
    ParameterVector from_disk = load_checkpoint(checkpoint_dir(root / key, run.checkpoints.back().first));
    REQUIRE(from_disk.size() == run.final_params().size());
    for (std::size_t i = 0; i < from_disk.size(); ++i)
        CHECK(from_disk.values[i] == static_cast<double>(static_cast<float>(run.final_params().values[i])));
}
