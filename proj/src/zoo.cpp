#include "phasezoo/zoo.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <thread>

#include "phasezoo/jsonio.hpp"

namespace fs = std::filesystem;

namespace phasezoo {

// ---------------------------------------------------------------------------
// json helpers

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw format_error("bad json in " + path.string() + ": " + e.what());
    }
    return j;
}

void write_json_atomic(const fs::path& path, const json& j) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw io_error("cannot write " + tmp.string());
        out << j.dump(2) << "\n";
        if (!out) throw io_error("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw io_error("cannot rename " + tmp.string() + " -> " + path.string());
}

json to_json(const ModelSpec& spec) {
    return json{{"input_dim", spec.input_dim},
                {"hidden_width", spec.hidden_width},
                {"num_hidden_layers", spec.num_hidden_layers},
                {"output_dim", spec.output_dim},
                {"activation", to_string(spec.activation)},
                {"init_scheme", to_string(spec.init_scheme)},
                {"seed", spec.seed}};
}

ModelSpec model_spec_from_json(const json& j) {
    ModelSpec spec;
    spec.input_dim = j.at("input_dim").get<int>();
    spec.hidden_width = j.at("hidden_width").get<int>();
    spec.num_hidden_layers = j.at("num_hidden_layers").get<int>();
    spec.output_dim = j.at("output_dim").get<int>();
    spec.activation = activation_from_string(j.at("activation").get<std::string>());
    spec.init_scheme = init_scheme_from_string(j.at("init_scheme").get<std::string>());
    spec.seed = j.at("seed").get<std::uint64_t>();
    return spec;
}

json to_json(const TrainConfig& cfg) {
    return json{{"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"peak_lr", cfg.peak_lr},
                {"momentum", cfg.momentum},
                {"weight_decay", cfg.weight_decay},
                {"schedule", to_string(cfg.schedule)},
                {"warmup_fraction", cfg.warmup_fraction},
                {"checkpoint_every", cfg.checkpoint_every},
                {"seed", cfg.seed},
                {"strict_eval", cfg.strict_eval}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.peak_lr = j.at("peak_lr").get<double>();
    cfg.momentum = j.at("momentum").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.schedule = schedule_from_string(j.at("schedule").get<std::string>());
    cfg.warmup_fraction = j.at("warmup_fraction").get<double>();
    cfg.checkpoint_every = j.at("checkpoint_every").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.strict_eval = j.value("strict_eval", false);
    return cfg;
}

json to_json(const DatasetSpec& ds) {
    return json{{"generator", to_string(ds.generator)},
                {"n", ds.n},
                {"classes", ds.classes},
                {"noise", ds.noise},
                {"separation", ds.separation},
                {"csv_path", ds.csv_path},
                {"test_fraction", ds.test_fraction},
                {"seed", ds.seed}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
    DatasetSpec ds;
    ds.generator = generator_from_string(j.at("generator").get<std::string>());
    ds.n = j.at("n").get<std::size_t>();
    ds.classes = j.at("classes").get<int>();
    ds.noise = j.at("noise").get<double>();
    ds.separation = j.at("separation").get<double>();
    ds.csv_path = j.value("csv_path", std::string());
    ds.test_fraction = j.at("test_fraction").get<double>();
    ds.seed = j.at("seed").get<std::uint64_t>();
    return ds;
}

json to_json(const GridSpec& grid) {
    return json{{"widths", grid.widths},
                {"batch_sizes", grid.batch_sizes},
                {"peak_lrs", grid.peak_lrs},
                {"seeds", grid.seeds},
                {"temperature_axis", to_string(grid.temperature_axis)},
                {"base_model", to_json(grid.base_model)},
                {"base_train", to_json(grid.base_train)},
                {"dataset", to_json(grid.dataset)}};
}

GridSpec grid_spec_from_json(const json& j) {
    GridSpec grid;
    grid.widths = j.at("widths").get<std::vector<int>>();
    grid.batch_sizes = j.at("batch_sizes").get<std::vector<int>>();
    grid.peak_lrs = j.value("peak_lrs", std::vector<double>());
    grid.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    grid.temperature_axis =
        temperature_axis_from_string(j.value("temperature_axis", std::string("batch_size")));
    grid.base_model = model_spec_from_json(j.at("base_model"));
    grid.base_train = train_config_from_json(j.at("base_train"));
    grid.dataset = dataset_spec_from_json(j.at("dataset"));
    return grid;
}

json to_json(const EpochRecord& rec) {
    return json{{"epoch", rec.epoch},       {"train_loss", rec.train_loss}, {"train_acc", rec.train_acc},
                {"test_loss", rec.test_loss}, {"test_acc", rec.test_acc},   {"lr", rec.lr}};
}

EpochRecord epoch_record_from_json(const json& j) {
    EpochRecord rec;
    rec.epoch = j.at("epoch").get<int>();
    rec.train_loss = j.at("train_loss").get<double>();
    rec.train_acc = j.at("train_acc").get<double>();
    rec.test_loss = j.at("test_loss").get<double>();
    rec.test_acc = j.at("test_acc").get<double>();
    rec.lr = j.at("lr").get<double>();
    return rec;
}

// ---------------------------------------------------------------------------
// grid planning

const char* to_string(TemperatureAxis a) {
    return a == TemperatureAxis::batch_size ? "batch_size" : "peak_lr";
}

TemperatureAxis temperature_axis_from_string(const std::string& s) {
    if (s == "batch_size") return TemperatureAxis::batch_size;
    if (s == "peak_lr") return TemperatureAxis::peak_lr;
    throw invalid_spec_error("unknown temperature axis: " + s);
}

const char* to_string(CellStatus s) {
    switch (s) {
        case CellStatus::pending: return "pending";
        case CellStatus::done: return "done";
        default: return "diverged";
    }
}

CellStatus cell_status_from_string(const std::string& s) {
    if (s == "pending") return CellStatus::pending;
    if (s == "done") return CellStatus::done;
    if (s == "diverged") return CellStatus::diverged;
    throw format_error("unknown cell status: " + s);
}

DataPair make_data(const DatasetSpec& spec) {
    Dataset full;
    switch (spec.generator) {
        case DataGenerator::spirals:
            full = make_spirals(spec.n, spec.classes, spec.noise, spec.seed);
            break;
        case DataGenerator::gaussian_mixture:
            full = make_gaussian_mixture(spec.n, spec.classes, spec.separation, spec.seed);
            break;
        case DataGenerator::csv:
            full = load_csv(spec.csv_path);
            break;
    }
    return train_test_split(full, spec.test_fraction, spec.seed);
}

namespace {

template <typename T>
void check_axis(const std::vector<T>& xs, const char* name) {
    if (xs.empty()) throw invalid_spec_error(std::string(name) + " list is empty");
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] == xs[i - 1])
            throw invalid_spec_error(std::string(name) + " list has duplicates");
        if (xs[i] < xs[i - 1]) throw invalid_spec_error(std::string(name) + " list must be ascending");
    }
}

std::string format_lr(double lr) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", lr);
    return buf;
}

}  // namespace

void GridSpec::validate() const {
    check_axis(widths, "widths");
    if (temperature_axis == TemperatureAxis::batch_size) {
        check_axis(batch_sizes, "batch_sizes");
    } else {
        check_axis(peak_lrs, "peak_lrs");
    }
    if (seeds.empty()) throw invalid_spec_error("seeds list is empty");
    std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
    if (uniq.size() != seeds.size()) throw invalid_spec_error("seeds list has duplicates");
    for (int w : widths)
        if (w <= 0) throw invalid_spec_error("widths must be positive");
    for (int b : batch_sizes)
        if (b <= 0) throw invalid_spec_error("batch_sizes must be positive");
    for (double lr : peak_lrs)
        if (lr <= 0.0) throw invalid_spec_error("peak_lrs must be positive");
}

std::size_t GridSpec::temperature_count() const {
    return temperature_axis == TemperatureAxis::batch_size ? batch_sizes.size() : peak_lrs.size();
}

std::string GridSpec::temperature_label(std::size_t idx) const {
    return temperature_axis == TemperatureAxis::batch_size ? std::to_string(batch_sizes[idx])
                                                           : format_lr(peak_lrs[idx]);
}

std::vector<std::string> GridSpec::temperature_labels() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < temperature_count(); ++i) out.push_back(temperature_label(i));
    return out;
}

std::string cell_key(const GridSpec& grid, const GridCell& cell) {
    char buf[96];
    if (grid.temperature_axis == TemperatureAxis::batch_size) {
        std::snprintf(buf, sizeof buf, "w%d_bs%d_s%" PRIu64, cell.width, cell.batch_size,
                      static_cast<std::uint64_t>(cell.seed));
    } else {
        std::snprintf(buf, sizeof buf, "w%d_lr%s_s%" PRIu64, cell.width, format_lr(cell.peak_lr).c_str(),
                      static_cast<std::uint64_t>(cell.seed));
    }
    return buf;
}

ModelSpec cell_model_spec(const GridSpec& grid, const GridCell& cell) {
    ModelSpec spec = grid.base_model;
    spec.hidden_width = cell.width;
    spec.seed = cell.seed;
    return spec;
}

TrainConfig cell_train_config(const GridSpec& grid, const GridCell& cell) {
    TrainConfig cfg = grid.base_train;
    cfg.batch_size = cell.batch_size;
    cfg.peak_lr = cell.peak_lr;
    cfg.seed = cell.seed;
    return cfg;
}

std::vector<GridCell> plan_grid(const GridSpec& grid) {
    grid.validate();
    std::vector<GridCell> cells;
    for (int w : grid.widths) {
        for (std::size_t t = 0; t < grid.temperature_count(); ++t) {
            for (std::uint64_t s : grid.seeds) {
                GridCell cell;
                cell.width = w;
                if (grid.temperature_axis == TemperatureAxis::batch_size) {
                    cell.batch_size = grid.batch_sizes[t];
                    cell.peak_lr = grid.base_train.peak_lr;
                } else {
                    cell.batch_size = grid.base_train.batch_size;
                    cell.peak_lr = grid.peak_lrs[t];
                }
                cell.seed = s;
                cell.status = CellStatus::pending;
                cells.push_back(cell);
            }
        }
    }
    return cells;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[4] = {'P', 'Z', 'O', 'O'};
constexpr std::uint32_t kVersion = 1;

json layout_to_json(const std::vector<TensorDesc>& layout, std::size_t count) {
    json tensors = json::array();
    for (const TensorDesc& d : layout) {
        tensors.push_back(json{{"layer", d.layer},
                               {"kind", d.kind == TensorKind::weight ? "weight" : "bias"},
                               {"rows", d.rows},
                               {"cols", d.cols},
                               {"offset", d.offset}});
    }
    return json{{"count", count}, {"tensors", tensors}};
}

std::vector<TensorDesc> layout_from_json(const json& j, std::size_t& count) {
    count = j.at("count").get<std::size_t>();
    std::vector<TensorDesc> layout;
    for (const json& t : j.at("tensors")) {
        TensorDesc d;
        d.layer = t.at("layer").get<int>();
        d.kind = t.at("kind").get<std::string>() == "weight" ? TensorKind::weight : TensorKind::bias;
        d.rows = t.at("rows").get<std::size_t>();
        d.cols = t.at("cols").get<std::size_t>();
        d.offset = t.at("offset").get<std::size_t>();
        layout.push_back(d);
    }
    return layout;
}

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParameterVector& params) {
    if (params.size() == 0) throw precondition_error("refusing to save an empty parameter vector");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string());

    write_json_atomic(dir / "layout.json", layout_to_json(params.layout, params.size()));

    const fs::path bin = dir / "model.bin";
    const fs::path tmp = bin.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw io_error("cannot write " + tmp.string());
        out.write(kMagic, 4);
        put_u32(out, kVersion);
        put_u64(out, params.size());
        for (double v : params.values) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
        if (!out) throw io_error("short write to " + tmp.string());
    }
    fs::rename(tmp, bin, ec);
    if (ec) throw io_error("cannot rename " + tmp.string());
}

ParameterVector load_checkpoint(const fs::path& dir) {
    std::size_t sidecar_count = 0;
    std::vector<TensorDesc> layout = layout_from_json(read_json(dir / "layout.json"), sidecar_count);

    const fs::path bin = dir / "model.bin";
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw io_error("cannot open " + bin.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw format_error("bad checkpoint magic in " + bin.string());
    const std::uint32_t version = get_u32(in);
    if (!in || version != kVersion)
        throw format_error("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t count = get_u64(in);
    if (!in) throw corruption_error("truncated checkpoint header in " + bin.string());
    if (count == 0 || count != sidecar_count)
        throw corruption_error("checkpoint count " + std::to_string(count) + " does not match layout " +
                               std::to_string(sidecar_count));

    ParameterVector p;
    p.layout = std::move(layout);
    p.values.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t bits = get_u32(in);
        if (!in) throw corruption_error("truncated checkpoint payload in " + bin.string());
        float f;
        std::memcpy(&f, &bits, 4);
        p.values[i] = static_cast<double>(f);
    }
    char extra;
    if (in.read(&extra, 1))
        throw corruption_error("trailing bytes in " + bin.string());
    return p;
}

fs::path checkpoint_dir(const fs::path& cell_dir, int epoch) {
    return cell_dir / "checkpoints" / ("epoch_" + std::to_string(epoch));
}

std::vector<int> list_checkpoint_epochs(const fs::path& cell_dir) {
    std::vector<int> epochs;
    const fs::path base = cell_dir / "checkpoints";
    if (!fs::exists(base)) return epochs;
    for (const auto& entry : fs::directory_iterator(base)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("epoch_", 0) == 0) epochs.push_back(std::stoi(name.substr(6)));
    }
    std::sort(epochs.begin(), epochs.end());
    return epochs;
}

// ---------------------------------------------------------------------------
// manifest + execution

namespace {

json manifest_to_json(const ZooManifest& m) {
    json cells = json::object();
    for (const auto& [key, info] : m.cells) {
        json c{{"width", info.cell.width},
               {"batch_size", info.cell.batch_size},
               {"peak_lr", info.cell.peak_lr},
               {"seed", info.cell.seed},
               {"status", to_string(info.cell.status)},
               {"directory", info.directory}};
        if (info.cell.status != CellStatus::pending) {
            c["final"] = to_json(info.final);
            c["generalization_gap"] = info.generalization_gap;
        }
        if (!info.error_note.empty()) c["error"] = info.error_note;
        cells[key] = c;
    }
    return json{{"version", 1}, {"grid", to_json(m.grid)}, {"cells", cells}};
}

CellInfo cell_info_from_json(const json& c) {
    CellInfo info;
    info.cell.width = c.at("width").get<int>();
    info.cell.batch_size = c.at("batch_size").get<int>();
    info.cell.peak_lr = c.at("peak_lr").get<double>();
    info.cell.seed = c.at("seed").get<std::uint64_t>();
    info.cell.status = cell_status_from_string(c.at("status").get<std::string>());
    info.directory = c.at("directory").get<std::string>();
    if (c.contains("final")) {
        info.final = epoch_record_from_json(c.at("final"));
        info.generalization_gap = c.at("generalization_gap").get<double>();
    }
    if (c.contains("error")) info.error_note = c.at("error").get<std::string>();
    return info;
}

// A cell is complete iff its results.json exists and parses with a terminal
// status; this is the resume criterion.
bool refresh_from_results(const fs::path& root, CellInfo& info) {
    const fs::path results = root / info.directory / "results.json";
    if (!fs::exists(results)) {
        if (info.cell.status != CellStatus::pending) info.cell.status = CellStatus::pending;
        return false;
    }
    try {
        json j = read_json(results);
        const CellStatus status = cell_status_from_string(j.at("status").get<std::string>());
        if (status == CellStatus::pending) return false;
        info.cell.status = status;
        if (j.contains("final")) {
            info.final = epoch_record_from_json(j.at("final"));
            info.generalization_gap = j.at("generalization_gap").get<double>();
        }
        return true;
    } catch (const std::exception&) {
        info.cell.status = CellStatus::pending;
        return false;
    }
}

void write_cell_results(const fs::path& cell_dir, const RunRecord& run, CellStatus status) {
    json history = json::array();
    for (const EpochRecord& rec : run.history) history.push_back(to_json(rec));
    json j{{"status", to_string(status)},
           {"final", to_json(run.final)},
           {"generalization_gap", run.generalization_gap},
           {"history", history}};
    write_json_atomic(cell_dir / "results.json", j);
}

}  // namespace

std::size_t ZooManifest::count(CellStatus status) const {
    std::size_t n = 0;
    for (const auto& [key, info] : cells)
        if (info.cell.status == status) ++n;
    return n;
}

ZooManifest plan_zoo(const GridSpec& grid, const fs::path& root) {
    ZooManifest m;
    m.root = root;
    m.grid = grid;
    for (const GridCell& cell : plan_grid(grid)) {
        CellInfo info;
        info.cell = cell;
        info.directory = cell_key(grid, cell);
        m.cells[info.directory] = info;
    }
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw io_error("cannot create zoo root " + root.string());
    write_json_atomic(root / "manifest.json", manifest_to_json(m));
    return m;
}

ZooManifest load_manifest(const fs::path& root) {
    const json j = read_json(root / "manifest.json");
    ZooManifest m;
    m.root = root;
    m.grid = grid_spec_from_json(j.at("grid"));
    for (const auto& [key, c] : j.at("cells").items()) {
        CellInfo info = cell_info_from_json(c);
        refresh_from_results(root, info);
        m.cells[key] = info;
    }
    return m;
}

ZooManifest run_grid(ZooManifest manifest, int workers) {
    if (workers < 1) throw precondition_error("workers must be >= 1");
    manifest.grid.validate();

    // dataset is identical for every cell; built once, shared read-only
    const DataPair data = make_data(manifest.grid.dataset);

    std::vector<std::string> keys;
    for (auto& [key, info] : manifest.cells) {
        if (!refresh_from_results(manifest.root, info)) keys.push_back(key);
    }

    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= keys.size()) break;
            CellInfo& info = manifest.cells[keys[i]];
            const fs::path cell_dir = manifest.root / info.directory;
            try {
                const ModelSpec spec = cell_model_spec(manifest.grid, info.cell);
                const TrainConfig cfg = cell_train_config(manifest.grid, info.cell);
                RunRecord run = train(spec, data, cfg);

                fs::create_directories(cell_dir);
                write_json_atomic(cell_dir / "config.json",
                                  json{{"cell_key", info.directory},
                                       {"dataset", to_json(manifest.grid.dataset)},
                                       {"model", to_json(spec)},
                                       {"train", to_json(cfg)}});
                for (const auto& [epoch, params] : run.checkpoints)
                    save_checkpoint(checkpoint_dir(cell_dir, epoch), params);

                const CellStatus status = run.diverged ? CellStatus::diverged : CellStatus::done;
                write_cell_results(cell_dir, run, status);
                info.cell.status = status;
                info.final = run.final;
                info.generalization_gap = run.generalization_gap;
                info.error_note.clear();
            } catch (const std::exception& e) {
                info.cell.status = CellStatus::pending;
                info.error_note = e.what();
            }
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    write_json_atomic(manifest.root / "manifest.json", manifest_to_json(manifest));
    return manifest;
}

// ---------------------------------------------------------------------------
// aggregation

namespace {

std::optional<double> field_from_results(const CellInfo& info, const std::string& field) {
    if (field == "train_loss") return info.final.train_loss;
    if (field == "train_acc") return info.final.train_acc;
    if (field == "test_loss") return info.final.test_loss;
    if (field == "test_acc") return info.final.test_acc;
    if (field == "ggap") return info.generalization_gap;
    return std::nullopt;
}

std::optional<double> field_from_metrics(const fs::path& root, const CellInfo& info,
                                         const std::string& field) {
    const fs::path path = root / info.directory / "metrics.json";
    if (!fs::exists(path)) return std::nullopt;
    std::string key = field;
    if (field == "mc") key = "mc_mean";
    if (field == "cka") key = "cka_mean";
    try {
        json j = read_json(path);
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return j.at(key).get<double>();
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

const std::set<std::string> kResultFields = {"train_loss", "train_acc", "test_loss", "test_acc", "ggap"};
const std::set<std::string> kMetricFields = {"lambda_max", "hessian_trace", "mc", "cka"};

}  // namespace

GridTable collect_grid(const ZooManifest& manifest, const std::string& field) {
    const bool from_results = kResultFields.count(field) > 0;
    const bool from_metrics = kMetricFields.count(field) > 0;
    if (!from_results && !from_metrics) throw schema_error("unknown grid field: " + field);
    if ((field == "mc" || field == "cka") && manifest.grid.seeds.size() < 2)
        throw schema_error("field " + field + " is pairwise and needs >= 2 seeds");

    GridTable table;
    for (int w : manifest.grid.widths) table.row_labels.push_back(std::to_string(w));
    table.col_labels = manifest.grid.temperature_labels();
    table.values.assign(table.row_labels.size() * table.col_labels.size(), std::nullopt);

    for (std::size_t r = 0; r < manifest.grid.widths.size(); ++r) {
        for (std::size_t c = 0; c < manifest.grid.temperature_count(); ++c) {
            double sum = 0.0;
            std::size_t got = 0;
            bool broken = false;
            for (std::uint64_t s : manifest.grid.seeds) {
                GridCell cell;
                cell.width = manifest.grid.widths[r];
                if (manifest.grid.temperature_axis == TemperatureAxis::batch_size) {
                    cell.batch_size = manifest.grid.batch_sizes[c];
                    cell.peak_lr = manifest.grid.base_train.peak_lr;
                } else {
                    cell.batch_size = manifest.grid.base_train.batch_size;
                    cell.peak_lr = manifest.grid.peak_lrs[c];
                }
                cell.seed = s;
                const auto it = manifest.cells.find(cell_key(manifest.grid, cell));
                if (it == manifest.cells.end() || it->second.cell.status != CellStatus::done) {
                    broken = true;
                    break;
                }
                const std::optional<double> v = from_results
                                                    ? field_from_results(it->second, field)
                                                    : field_from_metrics(manifest.root, it->second, field);
                if (!v || !std::isfinite(*v)) {
                    broken = true;
                    break;
                }
                sum += *v;
                ++got;
            }
            if (!broken && got > 0) table.at(r, c) = sum / static_cast<double>(got);
        }
    }
    return table;
}

namespace {

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename Table, typename Fmt>
void export_csv_impl(const Table& table, const fs::path& path, Fmt&& fmt) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    out << "width";
    for (const std::string& c : table.col_labels) out << "," << c;
    out << "\n";
    for (std::size_t r = 0; r < table.row_labels.size(); ++r) {
        out << table.row_labels[r];
        for (std::size_t c = 0; c < table.col_labels.size(); ++c) {
            out << ",";
            const auto& v = table.at(r, c);
            out << (v ? fmt(*v) : std::string("NA"));
        }
        out << "\n";
    }
    if (!out) throw io_error("short write to " + path.string());
}

}  // namespace

void export_grid_csv(const GridTable& table, const fs::path& path) {
    export_csv_impl(table, path, [](double v) { return format_value(v); });
}

void export_grid_csv(const GridLabelTable& table, const fs::path& path) {
    export_csv_impl(table, path, [](const std::string& v) { return v; });
}

}  // namespace phasezoo
