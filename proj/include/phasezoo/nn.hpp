#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "phasezoo/common.hpp"

namespace phasezoo {

enum class Activation { relu, tanh };
enum class InitScheme { kaiming_uniform };

const char* to_string(Activation a);
const char* to_string(InitScheme s);
Activation activation_from_string(const std::string& s);
InitScheme init_scheme_from_string(const std::string& s);

// Fully-connected net: input -> [hidden_width] x num_hidden_layers -> output.
struct ModelSpec {
    int input_dim = 2;
    int hidden_width = 8;
    int num_hidden_layers = 2;
    int output_dim = 2;
    Activation activation = Activation::relu;
    InitScheme init_scheme = InitScheme::kaiming_uniform;
    std::uint64_t seed = 0;

    int num_linear_layers() const { return num_hidden_layers + 1; }
    void validate() const;                  // throws invalid_spec_error
    std::size_t parameter_count() const;    // closed form, validates first
};

enum class TensorKind { weight, bias };

struct TensorDesc {
    int layer = 0;
    TensorKind kind = TensorKind::weight;
    std::size_t rows = 0;
    std::size_t cols = 0;  // 1 for biases
    std::size_t offset = 0;

    std::size_t size() const { return rows * cols; }
    std::string name() const;
};

// Flat parameter vector plus the tensor layout that maps into it.
struct ParameterVector {
    std::vector<double> values;
    std::vector<TensorDesc> layout;

    std::size_t size() const { return values.size(); }
    std::span<double> tensor(std::size_t idx);
    std::span<const double> tensor(std::size_t idx) const;
    bool same_layout(const ParameterVector& other) const;
};

std::vector<TensorDesc> make_layout(const ModelSpec& spec);
ParameterVector zeros_like(const ParameterVector& p);

// Tensor-wise view as matrices (unflatten) and reassembly (flatten); the
// round trip is bit-identical.
std::vector<Matrix> split_tensors(const ParameterVector& p);
ParameterVector join_tensors(const std::vector<TensorDesc>& layout, const std::vector<Matrix>& tensors);

// Kaiming-uniform init seeded by spec.seed; bit-identical across builds.
ParameterVector build_model(const ModelSpec& spec);

enum class Split { train, test };
enum class DataGenerator { spirals, gaussian_mixture, csv };

const char* to_string(Split s);
const char* to_string(DataGenerator g);
DataGenerator generator_from_string(const std::string& s);

struct Dataset {
    Matrix inputs;              // n x input_dim
    std::vector<int> labels;    // class indices in [0, num_classes)
    int num_classes = 0;
    Split split = Split::train;
    DataGenerator generator = DataGenerator::spirals;
    std::uint64_t seed = 0;

    std::size_t size() const { return labels.size(); }
    int input_dim() const { return static_cast<int>(inputs.cols); }
};

struct Batch {
    Matrix inputs;
    std::vector<int> labels;
    std::size_t size() const { return labels.size(); }
};

Batch full_batch(const Dataset& ds);
Batch take_batch(const Dataset& ds, std::span<const std::size_t> indices);

// Logits, b x output_dim.
Matrix forward(const ParameterVector& params, const ModelSpec& spec, const Batch& batch);

struct LossGrad {
    double loss = 0.0;
    ParameterVector grad;
    Matrix logits;
};

// Mean softmax cross-entropy over the batch plus its exact gradient.
LossGrad loss_and_grad(const ParameterVector& params, const ModelSpec& spec, const Batch& batch);

// Loss only (same value as loss_and_grad().loss, cheaper).
double loss_value(const ParameterVector& params, const ModelSpec& spec, const Batch& batch);

// Exact Hessian-vector product, forward-over-reverse. ReLU curvature is taken
// in the almost-everywhere sense (subgradient 0 at the kink).
ParameterVector hvp(const ParameterVector& params, const ModelSpec& spec, const Batch& batch,
                    const ParameterVector& v);

// Seeded synthetic datasets (2-d inputs), class-balanced up to rounding.
Dataset make_spirals(std::size_t n, int classes, double noise, std::uint64_t seed);
Dataset make_gaussian_mixture(std::size_t n, int classes, double separation, std::uint64_t seed);

// CSV schema: header row `x0,...,xD,label`, floats in decimal notation,
// label a nonnegative integer.
Dataset load_csv(const std::filesystem::path& path);

struct DataPair {
    Dataset train;
    Dataset test;
};

DataPair train_test_split(const Dataset& full, double test_fraction, std::uint64_t seed);

}  // namespace phasezoo
