#pragma once

// Test-only numerical oracles. Everything here is deliberately independent of
// the library's production paths: finite differences instead of backprop,
// cyclic Jacobi instead of power iteration, factorial enumeration instead of
// the Hungarian solver.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "phasezoo/nn.hpp"

namespace oracles {

using phasezoo::Batch;
using phasezoo::Matrix;
using phasezoo::ModelSpec;
using phasezoo::ParameterVector;

// Central finite-difference gradient of the batch loss.
inline std::vector<double> fd_gradient(const ParameterVector& params, const ModelSpec& spec,
                                       const Batch& batch, double eps = 1e-6) {
    std::vector<double> g(params.size());
    ParameterVector probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double h = eps * std::max(1.0, std::abs(params.values[i]));
        probe.values[i] = params.values[i] + h;
        const double lp = phasezoo::loss_value(probe, spec, batch);
        probe.values[i] = params.values[i] - h;
        const double lm = phasezoo::loss_value(probe, spec, batch);
        probe.values[i] = params.values[i];
        g[i] = (lp - lm) / (2.0 * h);
    }
    return g;
}

// Central finite difference of gradients: (grad(theta + eps v) - grad(theta - eps v)) / (2 eps).
inline std::vector<double> fd_hvp(const ParameterVector& params, const ModelSpec& spec,
                                  const Batch& batch, const ParameterVector& v) {
    double norm_theta = 0.0, norm_v = 0.0;
    for (double x : params.values) norm_theta += x * x;
    for (double x : v.values) norm_v += x * x;
    norm_theta = std::sqrt(norm_theta);
    norm_v = std::sqrt(norm_v);
    const double eps = 1e-4 * std::max(norm_theta, 1.0) / std::max(norm_v, 1e-12);

    ParameterVector plus = params, minus = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        plus.values[i] += eps * v.values[i];
        minus.values[i] -= eps * v.values[i];
    }
    const auto gp = phasezoo::loss_and_grad(plus, spec, batch).grad;
    const auto gm = phasezoo::loss_and_grad(minus, spec, batch).grad;
    std::vector<double> out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        out[i] = (gp.values[i] - gm.values[i]) / (2.0 * eps);
    return out;
}

inline double max_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
    double scale = 0.0;
    for (double x : want) scale = std::max(scale, std::abs(x));
    scale = std::max(scale, 1e-12);
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
    return worst;
}

// Dense Hessian assembled column by column from hvp applied to basis vectors,
// then symmetrized.
inline Matrix dense_hessian(const ParameterVector& params, const ModelSpec& spec, const Batch& batch) {
    const std::size_t m = params.size();
    Matrix h(m, m);
    ParameterVector e = phasezoo::zeros_like(params);
    for (std::size_t j = 0; j < m; ++j) {
        e.values[j] = 1.0;
        ParameterVector col = phasezoo::hvp(params, spec, batch, e);
        for (std::size_t i = 0; i < m; ++i) h(i, j) = col.values[i];
        e.values[j] = 0.0;
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            const double s = 0.5 * (h(i, j) + h(j, i));
            h(i, j) = s;
            h(j, i) = s;
        }
    return h;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> jacobi_eigenvalues(Matrix a, int sweeps = 64, double tol = 1e-14) {
    const std::size_t n = a.rows;
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(off) < tol) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
    std::sort(ev.begin(), ev.end());
    return ev;
}

inline double trace_of(const Matrix& a) {
    double t = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) t += a(i, i);
    return t;
}

// Minimum-cost assignment by trying every permutation. n <= 8 or so.
inline std::pair<double, std::vector<int>> brute_force_assignment(const Matrix& cost) {
    const std::size_t n = cost.rows;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) c += cost(i, static_cast<std::size_t>(perm[i]));
        if (c < best_cost) {
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return {best_cost, best};
}

}  // namespace oracles
