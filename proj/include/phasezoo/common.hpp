#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace phasezoo {

// Error taxonomy. Everything derives from std::runtime_error so the CLI can
// map categories onto exit codes in one place.
struct invalid_spec_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct precondition_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ingestion_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct corruption_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct schema_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct coverage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct sample_size_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct undefined_similarity_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. Small nets only; no BLAS.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace phasezoo
