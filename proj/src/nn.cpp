#include "phasezoo/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "phasezoo/rng.hpp"

namespace phasezoo {

const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
const char* to_string(InitScheme) { return "kaiming_uniform"; }
const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }
const char* to_string(DataGenerator g) {
    switch (g) {
        case DataGenerator::spirals: return "spirals";
        case DataGenerator::gaussian_mixture: return "gaussian_mixture";
        default: return "csv";
    }
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw invalid_spec_error("unknown activation: " + s);
}

InitScheme init_scheme_from_string(const std::string& s) {
    if (s == "kaiming_uniform") return InitScheme::kaiming_uniform;
    throw invalid_spec_error("unknown init scheme: " + s);
}

DataGenerator generator_from_string(const std::string& s) {
    if (s == "spirals") return DataGenerator::spirals;
    if (s == "gaussian_mixture") return DataGenerator::gaussian_mixture;
    if (s == "csv") return DataGenerator::csv;
    throw invalid_spec_error("unknown dataset generator: " + s);
}

void ModelSpec::validate() const {
    if (input_dim <= 0 || hidden_width <= 0 || num_hidden_layers <= 0 || output_dim <= 0)
        throw invalid_spec_error("model dimensions must be positive");
    // guard the closed-form count against overflow
    const std::uint64_t w = static_cast<std::uint64_t>(hidden_width);
    const std::uint64_t count = static_cast<std::uint64_t>(input_dim) * w + w +
                                static_cast<std::uint64_t>(num_hidden_layers - 1) * (w * w + w) +
                                w * static_cast<std::uint64_t>(output_dim) +
                                static_cast<std::uint64_t>(output_dim);
    if (count > (1ULL << 31))
        throw invalid_spec_error("model too large: " + std::to_string(count) + " parameters");
}

std::size_t ModelSpec::parameter_count() const {
    validate();
    const std::size_t w = static_cast<std::size_t>(hidden_width);
    return static_cast<std::size_t>(input_dim) * w + w +
           static_cast<std::size_t>(num_hidden_layers - 1) * (w * w + w) +
           w * static_cast<std::size_t>(output_dim) + static_cast<std::size_t>(output_dim);
}

std::string TensorDesc::name() const {
    return "layer" + std::to_string(layer) + (kind == TensorKind::weight ? ".weight" : ".bias");
}

std::span<double> ParameterVector::tensor(std::size_t idx) {
    const TensorDesc& d = layout[idx];
    return {values.data() + d.offset, d.size()};
}

std::span<const double> ParameterVector::tensor(std::size_t idx) const {
    const TensorDesc& d = layout[idx];
    return {values.data() + d.offset, d.size()};
}

bool ParameterVector::same_layout(const ParameterVector& other) const {
    if (layout.size() != other.layout.size() || values.size() != other.values.size()) return false;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const TensorDesc& a = layout[i];
        const TensorDesc& b = other.layout[i];
        if (a.layer != b.layer || a.kind != b.kind || a.rows != b.rows || a.cols != b.cols ||
            a.offset != b.offset)
            return false;
    }
    return true;
}

std::vector<TensorDesc> make_layout(const ModelSpec& spec) {
    spec.validate();
    std::vector<TensorDesc> layout;
    std::size_t offset = 0;
    int in = spec.input_dim;
    for (int l = 0; l < spec.num_linear_layers(); ++l) {
        const int out = (l == spec.num_hidden_layers) ? spec.output_dim : spec.hidden_width;
        TensorDesc w{l, TensorKind::weight, static_cast<std::size_t>(out), static_cast<std::size_t>(in), offset};
        offset += w.size();
        TensorDesc b{l, TensorKind::bias, static_cast<std::size_t>(out), 1, offset};
        offset += b.size();
        layout.push_back(w);
        layout.push_back(b);
        in = out;
    }
    return layout;
}

ParameterVector zeros_like(const ParameterVector& p) {
    ParameterVector z;
    z.layout = p.layout;
    z.values.assign(p.values.size(), 0.0);
    return z;
}

std::vector<Matrix> split_tensors(const ParameterVector& p) {
    std::vector<Matrix> out;
    out.reserve(p.layout.size());
    for (const TensorDesc& d : p.layout) {
        Matrix m(d.rows, d.cols);
        std::copy_n(p.values.begin() + static_cast<std::ptrdiff_t>(d.offset), d.size(), m.data.begin());
        out.push_back(std::move(m));
    }
    return out;
}

ParameterVector join_tensors(const std::vector<TensorDesc>& layout, const std::vector<Matrix>& tensors) {
    if (layout.size() != tensors.size()) throw shape_error("tensor count does not match layout");
    std::size_t total = 0;
    for (const TensorDesc& d : layout) total += d.size();
    ParameterVector p;
    p.layout = layout;
    p.values.assign(total, 0.0);
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const TensorDesc& d = layout[i];
        if (tensors[i].rows != d.rows || tensors[i].cols != d.cols)
            throw shape_error("tensor " + d.name() + " shape mismatch");
        std::copy(tensors[i].data.begin(), tensors[i].data.end(),
                  p.values.begin() + static_cast<std::ptrdiff_t>(d.offset));
    }
    return p;
}

ParameterVector build_model(const ModelSpec& spec) {
    const std::size_t count = spec.parameter_count();
    ParameterVector p;
    p.layout = make_layout(spec);
    p.values.assign(count, 0.0);

    const double gain = spec.activation == Activation::relu ? std::sqrt(2.0) : 5.0 / 3.0;
    Rng rng(mix_seed(spec.seed, 0x6d6f64656cULL));
    for (std::size_t i = 0; i < p.layout.size(); i += 2) {
        const TensorDesc& wd = p.layout[i];
        const double fan_in = static_cast<double>(wd.cols);
        const double w_bound = gain * std::sqrt(3.0 / fan_in);
        for (double& v : p.tensor(i)) v = rng.uniform(-w_bound, w_bound);
        const double b_bound = 1.0 / std::sqrt(fan_in);
        for (double& v : p.tensor(i + 1)) v = rng.uniform(-b_bound, b_bound);
    }
    return p;
}

Batch full_batch(const Dataset& ds) {
    return Batch{ds.inputs, ds.labels};
}

Batch take_batch(const Dataset& ds, std::span<const std::size_t> indices) {
    Batch b;
    b.inputs = Matrix(indices.size(), ds.inputs.cols);
    b.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        std::copy_n(ds.inputs.row(src), ds.inputs.cols, b.inputs.row(i));
        b.labels[i] = ds.labels[src];
    }
    return b;
}

namespace {

struct ForwardCache {
    // activations[0] is the input; activations[l] the output of layer l-1's
    // nonlinearity; preacts[l] the linear output of layer l (0-based).
    std::vector<Matrix> activations;
    std::vector<Matrix> preacts;
};

void check_finite(const Matrix& m, int layer, const char* what) {
    for (double v : m.data) {
        if (!std::isfinite(v))
            throw numeric_error(std::string("non-finite ") + what + " at layer " + std::to_string(layer));
    }
}

// y = x * W^T + b, x: b x in, W: out x in
Matrix linear(const Matrix& x, std::span<const double> w, std::span<const double> b, std::size_t out_dim) {
    const std::size_t in_dim = x.cols;
    Matrix y(x.rows, out_dim);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* yi = y.row(i);
        for (std::size_t o = 0; o < out_dim; ++o) {
            const double* wo = w.data() + o * in_dim;
            double acc = b.empty() ? 0.0 : b[o];
            for (std::size_t k = 0; k < in_dim; ++k) acc += xi[k] * wo[k];
            yi[o] = acc;
        }
    }
    return y;
}

Matrix apply_activation(const Matrix& z, Activation act) {
    Matrix a = z;
    if (act == Activation::relu) {
        for (double& v : a.data) v = v > 0.0 ? v : 0.0;
    } else {
        for (double& v : a.data) v = std::tanh(v);
    }
    return a;
}

ForwardCache forward_cached(const ParameterVector& params, const ModelSpec& spec, const Batch& batch) {
    spec.validate();
    if (batch.inputs.cols != static_cast<std::size_t>(spec.input_dim))
        throw shape_error("batch input_dim " + std::to_string(batch.inputs.cols) +
                          " does not match spec input_dim " + std::to_string(spec.input_dim));
    if (batch.inputs.rows != batch.labels.size())
        throw shape_error("batch inputs/labels row mismatch");
    if (batch.inputs.rows == 0) throw precondition_error("empty batch");
    if (params.size() != spec.parameter_count())
        throw shape_error("parameter count does not match spec");

    ForwardCache cache;
    cache.activations.push_back(batch.inputs);
    const int layers = spec.num_linear_layers();
    for (int l = 0; l < layers; ++l) {
        const TensorDesc& wd = params.layout[2 * l];
        Matrix z = linear(cache.activations.back(), params.tensor(2 * l), params.tensor(2 * l + 1), wd.rows);
        check_finite(z, l, "pre-activation");
        if (l < spec.num_hidden_layers) {
            cache.activations.push_back(apply_activation(z, spec.activation));
        }
        cache.preacts.push_back(std::move(z));
    }
    return cache;
}

// per-row softmax probabilities of the logits
Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* zi = logits.row(i);
        double mx = zi[0];
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, zi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(zi[j] - mx);
        for (std::size_t j = 0; j < logits.cols; ++j) p(i, j) = std::exp(zi[j] - mx) / sum;
    }
    return p;
}

double mean_cross_entropy(const Matrix& logits, const std::vector<int>& labels, int num_classes) {
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= num_classes) throw shape_error("label out of range: " + std::to_string(y));
        const double* zi = logits.row(i);
        double mx = zi[0];
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, zi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) sum += std::exp(zi[j] - mx);
        total += mx + std::log(sum) - zi[y];
    }
    const double loss = total / static_cast<double>(logits.rows);
    if (!std::isfinite(loss)) throw numeric_error("non-finite loss at output layer");
    return loss;
}

}  // namespace

Matrix forward(const ParameterVector& params, const ModelSpec& spec, const Batch& batch) {
    ForwardCache cache = forward_cached(params, spec, batch);
    return std::move(cache.preacts.back());
}

double loss_value(const ParameterVector& params, const ModelSpec& spec, const Batch& batch) {
    Matrix logits = forward(params, spec, batch);
    return mean_cross_entropy(logits, batch.labels, spec.output_dim);
}

LossGrad loss_and_grad(const ParameterVector& params, const ModelSpec& spec, const Batch& batch) {
    ForwardCache cache = forward_cached(params, spec, batch);
    const Matrix& logits = cache.preacts.back();
    const std::size_t b = batch.size();

    LossGrad out;
    out.loss = mean_cross_entropy(logits, batch.labels, spec.output_dim);
    out.grad = zeros_like(params);
    out.logits = logits;

    // delta at the output: (softmax - onehot) / b
    Matrix delta = softmax_rows(logits);
    for (std::size_t i = 0; i < b; ++i) delta(i, static_cast<std::size_t>(batch.labels[i])) -= 1.0;
    for (double& v : delta.data) v /= static_cast<double>(b);

    for (int l = spec.num_linear_layers() - 1; l >= 0; --l) {
        const Matrix& a_prev = cache.activations[static_cast<std::size_t>(l)];
        std::span<const double> w = params.tensor(2 * static_cast<std::size_t>(l));
        std::span<double> gw = out.grad.tensor(2 * static_cast<std::size_t>(l));
        std::span<double> gb = out.grad.tensor(2 * static_cast<std::size_t>(l) + 1);
        const std::size_t out_dim = delta.cols;
        const std::size_t in_dim = a_prev.cols;

        for (std::size_t i = 0; i < b; ++i) {
            const double* di = delta.row(i);
            const double* ai = a_prev.row(i);
            for (std::size_t o = 0; o < out_dim; ++o) {
                const double d = di[o];
                if (d == 0.0) continue;
                double* gwo = gw.data() + o * in_dim;
                for (std::size_t k = 0; k < in_dim; ++k) gwo[k] += d * ai[k];
                gb[o] += d;
            }
        }

        if (l > 0) {
            // delta_prev = (delta * W) .* act'(z_prev)
            const Matrix& z_prev = cache.preacts[static_cast<std::size_t>(l) - 1];
            Matrix next(b, in_dim);
            for (std::size_t i = 0; i < b; ++i) {
                const double* di = delta.row(i);
                double* ni = next.row(i);
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double d = di[o];
                    if (d == 0.0) continue;
                    const double* wo = w.data() + o * in_dim;
                    for (std::size_t k = 0; k < in_dim; ++k) ni[k] += d * wo[k];
                }
            }
            if (spec.activation == Activation::relu) {
                for (std::size_t i = 0; i < next.data.size(); ++i)
                    next.data[i] = z_prev.data[i] > 0.0 ? next.data[i] : 0.0;
            } else {
                for (std::size_t i = 0; i < next.data.size(); ++i) {
                    const double t = std::tanh(z_prev.data[i]);
                    next.data[i] *= 1.0 - t * t;
                }
            }
            delta = std::move(next);
        }
    }
    return out;
}

ParameterVector hvp(const ParameterVector& params, const ModelSpec& spec, const Batch& batch,
                    const ParameterVector& v) {
    if (!params.same_layout(v)) throw shape_error("hvp direction layout mismatch");
    ForwardCache cache = forward_cached(params, spec, batch);
    const std::size_t b = batch.size();
    const int layers = spec.num_linear_layers();

    // forward tangent pass: r_z[l], r_a[l] are directional derivatives of the
    // pre-activations and activations along v
    std::vector<Matrix> r_act;   // r_act[l] tangent of activations[l]
    std::vector<Matrix> r_pre;   // r_pre[l] tangent of preacts[l]
    r_act.emplace_back(b, static_cast<std::size_t>(spec.input_dim));  // input tangent is zero
    for (int l = 0; l < layers; ++l) {
        const std::size_t li = static_cast<std::size_t>(l);
        const TensorDesc& wd = params.layout[2 * li];
        Matrix rz = linear(cache.activations[li], v.tensor(2 * li), v.tensor(2 * li + 1), wd.rows);
        Matrix prop = linear(r_act[li], params.tensor(2 * li), {}, wd.rows);
        for (std::size_t i = 0; i < rz.data.size(); ++i) rz.data[i] += prop.data[i];
        if (l < spec.num_hidden_layers) {
            const Matrix& z = cache.preacts[li];
            Matrix ra = rz;
            if (spec.activation == Activation::relu) {
                for (std::size_t i = 0; i < ra.data.size(); ++i)
                    ra.data[i] = z.data[i] > 0.0 ? ra.data[i] : 0.0;
            } else {
                for (std::size_t i = 0; i < ra.data.size(); ++i) {
                    const double t = std::tanh(z.data[i]);
                    ra.data[i] *= 1.0 - t * t;
                }
            }
            r_act.push_back(std::move(ra));
        }
        r_pre.push_back(std::move(rz));
    }

    // output tangents: delta = (p - onehot)/b, r_delta = R{p}/b with
    // R{p} = p .* (r_z - sum_j p_j r_z_j) per row
    const Matrix& logits = cache.preacts.back();
    Matrix p = softmax_rows(logits);
    Matrix delta = p;
    for (std::size_t i = 0; i < b; ++i) delta(i, static_cast<std::size_t>(batch.labels[i])) -= 1.0;
    for (double& x : delta.data) x /= static_cast<double>(b);

    Matrix r_delta(b, p.cols);
    {
        const Matrix& rz = r_pre.back();
        for (std::size_t i = 0; i < b; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < p.cols; ++j) dot += p(i, j) * rz(i, j);
            for (std::size_t j = 0; j < p.cols; ++j)
                r_delta(i, j) = p(i, j) * (rz(i, j) - dot) / static_cast<double>(b);
        }
    }

    ParameterVector result = zeros_like(params);

    for (int l = layers - 1; l >= 0; --l) {
        const std::size_t li = static_cast<std::size_t>(l);
        const Matrix& a_prev = cache.activations[li];
        const Matrix& ra_prev = r_act[li];
        std::span<double> hw = result.tensor(2 * li);
        std::span<double> hb = result.tensor(2 * li + 1);
        const std::size_t out_dim = delta.cols;
        const std::size_t in_dim = a_prev.cols;

        // R{grad W} = r_delta^T a_prev + delta^T r_a_prev ; R{grad b} = colsum r_delta
        for (std::size_t i = 0; i < b; ++i) {
            const double* di = delta.row(i);
            const double* rdi = r_delta.row(i);
            const double* ai = a_prev.row(i);
            const double* rai = ra_prev.row(i);
            for (std::size_t o = 0; o < out_dim; ++o) {
                double* hwo = hw.data() + o * in_dim;
                const double d = di[o];
                const double rd = rdi[o];
                for (std::size_t k = 0; k < in_dim; ++k) hwo[k] += rd * ai[k] + d * rai[k];
                hb[o] += rd;
            }
        }

        if (l > 0) {
            const Matrix& z_prev = cache.preacts[li - 1];
            const Matrix& rz_prev = r_pre[li - 1];
            std::span<const double> w = params.tensor(2 * li);
            std::span<const double> vw = v.tensor(2 * li);

            // g = delta W, rg = r_delta W + delta V
            Matrix g(b, in_dim);
            Matrix rg(b, in_dim);
            for (std::size_t i = 0; i < b; ++i) {
                const double* di = delta.row(i);
                const double* rdi = r_delta.row(i);
                double* gi = g.row(i);
                double* rgi = rg.row(i);
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const double d = di[o];
                    const double rd = rdi[o];
                    const double* wo = w.data() + o * in_dim;
                    const double* vo = vw.data() + o * in_dim;
                    for (std::size_t k = 0; k < in_dim; ++k) {
                        gi[k] += d * wo[k];
                        rgi[k] += rd * wo[k] + d * vo[k];
                    }
                }
            }

            Matrix next_delta(b, in_dim);
            Matrix next_r_delta(b, in_dim);
            if (spec.activation == Activation::relu) {
                // act'' = 0 a.e.
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const bool on = z_prev.data[i] > 0.0;
                    next_delta.data[i] = on ? g.data[i] : 0.0;
                    next_r_delta.data[i] = on ? rg.data[i] : 0.0;
                }
            } else {
                for (std::size_t i = 0; i < g.data.size(); ++i) {
                    const double t = std::tanh(z_prev.data[i]);
                    const double d1 = 1.0 - t * t;           // tanh'
                    const double d2 = -2.0 * t * d1;         // tanh''
                    next_delta.data[i] = g.data[i] * d1;
                    next_r_delta.data[i] = rg.data[i] * d1 + g.data[i] * d2 * rz_prev.data[i];
                }
            }
            delta = std::move(next_delta);
            r_delta = std::move(next_r_delta);
        }
    }

    for (double x : result.values)
        if (!std::isfinite(x)) throw numeric_error("non-finite hvp result");
    return result;
}

namespace {

// split n into `classes` balanced counts, first classes get the remainder
std::vector<std::size_t> balanced_counts(std::size_t n, int classes) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(classes), n / static_cast<std::size_t>(classes));
    for (std::size_t c = 0; c < n % static_cast<std::size_t>(classes); ++c) counts[c] += 1;
    return counts;
}

void check_dataset_args(std::size_t n, int classes, double spread, const char* spread_name) {
    if (classes < 2) throw invalid_spec_error("need at least 2 classes");
    if (n < static_cast<std::size_t>(classes)) throw invalid_spec_error("n must be >= classes");
    if (spread < 0.0) throw invalid_spec_error(std::string(spread_name) + " must be nonnegative");
}

}  // namespace

Dataset make_spirals(std::size_t n, int classes, double noise, std::uint64_t seed) {
    check_dataset_args(n, classes, noise, "noise");
    Dataset ds;
    ds.inputs = Matrix(n, 2);
    ds.labels.resize(n);
    ds.num_classes = classes;
    ds.generator = DataGenerator::spirals;
    ds.seed = seed;

    Rng rng(mix_seed(seed, 0x73706972616cULL));
    const std::vector<std::size_t> counts = balanced_counts(n, classes);
    std::size_t row = 0;
    for (int c = 0; c < classes; ++c) {
        const double phase = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(classes);
        for (std::size_t i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
            const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
            const double r = 0.15 + 0.85 * t;
            const double angle = phase + 3.0 * M_PI * t;
            ds.inputs(row, 0) = r * std::cos(angle) + noise * rng.normal();
            ds.inputs(row, 1) = r * std::sin(angle) + noise * rng.normal();
            ds.labels[row] = c;
            ++row;
        }
    }
    return ds;
}

Dataset make_gaussian_mixture(std::size_t n, int classes, double separation, std::uint64_t seed) {
    check_dataset_args(n, classes, separation, "separation");
    Dataset ds;
    ds.inputs = Matrix(n, 2);
    ds.labels.resize(n);
    ds.num_classes = classes;
    ds.generator = DataGenerator::gaussian_mixture;
    ds.seed = seed;

    Rng rng(mix_seed(seed, 0x676d6978ULL));
    const std::vector<std::size_t> counts = balanced_counts(n, classes);
    std::size_t row = 0;
    for (int c = 0; c < classes; ++c) {
        const double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(classes);
        const double cx = separation * std::cos(angle);
        const double cy = separation * std::sin(angle);
        for (std::size_t i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
            ds.inputs(row, 0) = cx + rng.normal();
            ds.inputs(row, 1) = cy + rng.normal();
            ds.labels[row] = c;
            ++row;
        }
    }
    return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open csv: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ingestion_error("csv is empty: " + path.string());
    const auto strip_cr = [](std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    };
    strip_cr(line);

    // header: x0,...,xD,label
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) header.push_back(tok);
    }
    if (header.size() < 2 || header.back() != "label")
        throw ingestion_error("csv header must be x0,...,xD,label (row 1)");
    const std::size_t dim = header.size() - 1;
    for (std::size_t i = 0; i < dim; ++i) {
        if (header[i] != "x" + std::to_string(i))
            throw ingestion_error("csv header column " + std::to_string(i) + " must be x" + std::to_string(i) +
                                  " (row 1)");
    }

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t row_no = 1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++row_no;
        strip_cr(line);
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::vector<std::string> cells;
        while (std::getline(ss, tok, ',')) cells.push_back(tok);
        if (cells.size() != header.size())
            throw ingestion_error("csv row " + std::to_string(row_no) + ": expected " +
                                  std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
        for (std::size_t i = 0; i < dim; ++i) {
            try {
                std::size_t pos = 0;
                values.push_back(std::stod(cells[i], &pos));
                if (pos != cells[i].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ingestion_error("csv row " + std::to_string(row_no) + ": bad float '" + cells[i] + "'");
            }
        }
        try {
            std::size_t pos = 0;
            const long lab = std::stol(cells[dim], &pos);
            if (pos != cells[dim].size() || lab < 0) throw std::invalid_argument("label");
            labels.push_back(static_cast<int>(lab));
            max_label = std::max(max_label, static_cast<int>(lab));
        } catch (const std::exception&) {
            throw ingestion_error("csv row " + std::to_string(row_no) + ": bad label '" + cells[dim] + "'");
        }
    }
    if (labels.empty()) throw ingestion_error("csv has no data rows: " + path.string());

    Dataset ds;
    ds.inputs = Matrix(labels.size(), dim);
    ds.inputs.data = std::move(values);
    ds.labels = std::move(labels);
    ds.num_classes = max_label + 1;
    ds.generator = DataGenerator::csv;
    ds.seed = 0;
    return ds;
}

DataPair train_test_split(const Dataset& full, double test_fraction, std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw invalid_spec_error("test_fraction must be in [0,1)");
    const std::size_t n = full.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(idx[i - 1], idx[j]);
    }
    const std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    const std::size_t n_train = n - n_test;
    if (n_train == 0) throw invalid_spec_error("split leaves empty train set");

    Batch btrain = take_batch(full, std::span<const std::size_t>(idx.data(), n_train));
    Batch btest = take_batch(full, std::span<const std::size_t>(idx.data() + n_train, n_test));

    DataPair pair;
    pair.train.inputs = std::move(btrain.inputs);
    pair.train.labels = std::move(btrain.labels);
    pair.train.num_classes = full.num_classes;
    pair.train.split = Split::train;
    pair.train.generator = full.generator;
    pair.train.seed = full.seed;
    pair.test.inputs = std::move(btest.inputs);
    pair.test.labels = std::move(btest.labels);
    pair.test.num_classes = full.num_classes;
    pair.test.split = Split::test;
    pair.test.generator = full.generator;
    pair.test.seed = full.seed;
    return pair;
}

}  // namespace phasezoo
