#include "phasezoo/landscape.hpp"

#include <algorithm>
#include <cmath>

#include "phasezoo/rng.hpp"

namespace phasezoo {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace

PowerIterationResult power_iteration(const HvpFn& apply, std::size_t dim, int max_iters, double tol,
                                     std::uint64_t seed) {
    if (dim == 0) throw precondition_error("power iteration on empty operator");
    Rng rng(mix_seed(seed, 0x706f776572ULL));
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    const double n0 = norm(v);
    for (double& x : v) x /= n0;

    PowerIterationResult res;
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iters; ++it) {
        std::vector<double> w = apply(v);
        for (double x : w)
            if (!std::isfinite(x)) throw numeric_error("non-finite hessian-vector product");
        const double rayleigh = dot(v, w);  // ||v|| == 1
        res.lambda = rayleigh;
        res.iters = it + 1;
        if (std::abs(rayleigh - prev) <= tol * std::max(std::abs(rayleigh), 1e-12)) {
            res.converged = true;
            return res;
        }
        prev = rayleigh;
        const double wn = norm(w);
        if (wn == 0.0) {  // operator annihilates v: zero spectrum along this direction
            res.lambda = 0.0;
            res.converged = true;
            return res;
        }
        for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / wn;
    }
    return res;  // converged = false, best estimate kept
}

CurvatureReport hutchinson_trace(const HvpFn& apply, std::size_t dim, int probes, std::uint64_t seed) {
    if (probes < 1) throw precondition_error("hutchinson needs probes >= 1");
    Rng rng(mix_seed(seed, 0x7472616365ULL));
    std::vector<double> estimates;
    estimates.reserve(static_cast<std::size_t>(probes));
    std::vector<double> z(dim);
    for (int p = 0; p < probes; ++p) {
        for (double& x : z) x = rng.rademacher();
        const std::vector<double> hz = apply(z);
        estimates.push_back(dot(z, hz));
    }
    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= static_cast<double>(probes);

    CurvatureReport rep;
    rep.trace_estimate = mean;
    rep.probes_used = probes;
    if (probes > 1) {
        double ss = 0.0;
        for (double e : estimates) ss += (e - mean) * (e - mean);
        rep.trace_stderr = std::sqrt(ss / static_cast<double>(probes - 1)) /
                           std::sqrt(static_cast<double>(probes));
    }
    return rep;
}

namespace {

HvpFn model_hvp(const ParameterVector& params, const ModelSpec& spec, const Dataset& data) {
    if (data.size() == 0) throw precondition_error("hessian metrics need a nonempty dataset");
    Batch batch = full_batch(data);
    return [params, spec, batch](const std::vector<double>& x) {
        ParameterVector v = zeros_like(params);
        v.values = x;
        return hvp(params, spec, batch, v).values;
    };
}

}  // namespace

std::pair<double, bool> top_eigenvalue(const ParameterVector& params, const ModelSpec& spec,
                                       const Dataset& data, int max_iters, double tol) {
    const PowerIterationResult res =
        power_iteration(model_hvp(params, spec, data), params.size(), max_iters, tol, spec.seed);
    return {res.lambda, res.converged};
}

CurvatureReport hessian_trace(const ParameterVector& params, const ModelSpec& spec, const Dataset& data,
                              int probes, std::uint64_t seed) {
    return hutchinson_trace(model_hvp(params, spec, data), params.size(), probes, seed);
}

CurvatureReport compute_curvature(const ParameterVector& params, const ModelSpec& spec,
                                  const Dataset& data, const CurvatureOptions& opts) {
    const HvpFn apply = model_hvp(params, spec, data);
    CurvatureReport rep = hutchinson_trace(apply, params.size(), opts.probes, opts.seed);
    const PowerIterationResult eig =
        power_iteration(apply, params.size(), opts.power_max_iters, opts.power_tol, opts.seed);
    rep.lambda_max = eig.lambda;
    rep.power_iters = eig.iters;
    rep.converged = eig.converged;
    return rep;
}

ParameterVector bezier_point(const BezierCurve& curve, double t) {
    if (t == 0.0) return curve.endpoint_a;
    if (t == 1.0) return curve.endpoint_b;
    // difference form of (1-t)^2 a + 2t(1-t) c + t^2 b: bitwise constant for
    // degenerate curves (a == b == c), which keeps mc(theta, theta) at 0 exactly
    const double wc = 2.0 * t * (1.0 - t);
    const double wb = t * t;
    ParameterVector p = zeros_like(curve.endpoint_a);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double a = curve.endpoint_a.values[i];
        p.values[i] = a + wc * (curve.control.values[i] - a) + wb * (curve.endpoint_b.values[i] - a);
    }
    return p;
}

BezierCurve fit_bezier(const ParameterVector& a, const ParameterVector& b, const ModelSpec& spec,
                       const Dataset& train_data, int steps, double lr, std::uint64_t seed) {
    if (!a.same_layout(b)) throw shape_error("bezier endpoints have different layouts");
    if (steps < 0) throw precondition_error("steps must be >= 0");

    BezierCurve curve;
    curve.endpoint_a = a;
    curve.endpoint_b = b;
    curve.control = zeros_like(a);
    for (std::size_t i = 0; i < a.size(); ++i)
        curve.control.values[i] = 0.5 * (a.values[i] + b.values[i]);

    if (steps == 0) return curve;
    Batch batch = full_batch(train_data);
    Rng rng(mix_seed(seed, 0x62657a696572ULL));
    for (int s = 0; s < steps; ++s) {
        const double t = rng.uniform();
        const ParameterVector theta = bezier_point(curve, t);
        const LossGrad lg = loss_and_grad(theta, spec, batch);
        const double chain = 2.0 * t * (1.0 - t);  // d theta / d control
        for (std::size_t i = 0; i < curve.control.size(); ++i)
            curve.control.values[i] -= lr * chain * lg.grad.values[i];
    }
    return curve;
}

ConnectivityReport mode_connectivity_fn(const LossFn& loss, const BezierCurve& curve, int t_grid_size,
                                        McSelection selection) {
    if (t_grid_size < 3 || t_grid_size % 2 == 0)
        throw precondition_error("t grid must be odd and >= 3 to include 0, 0.5, 1");

    ConnectivityReport rep;
    std::vector<double> losses(static_cast<std::size_t>(t_grid_size));
    for (int i = 0; i < t_grid_size; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(t_grid_size - 1);
        const double l = loss(bezier_point(curve, t).values);
        if (!std::isfinite(l))
            throw numeric_error("non-finite curve loss at t=" + std::to_string(t));
        losses[static_cast<std::size_t>(i)] = l;
        rep.curve_losses.emplace_back(t, l);
    }
    rep.endpoint_mean_loss = 0.5 * (losses.front() + losses.back());

    std::size_t best = 0;
    double best_abs = std::abs(rep.endpoint_mean_loss - losses[0]);
    for (std::size_t i = 1; i < losses.size(); ++i) {
        const double dev = std::abs(rep.endpoint_mean_loss - losses[i]);
        const bool better =
            selection == McSelection::max_abs_deviation ? dev > best_abs : dev < best_abs;
        if (better) {
            best_abs = dev;
            best = i;
        }
    }
    rep.t_star = static_cast<double>(best) / static_cast<double>(t_grid_size - 1);
    rep.mc = rep.endpoint_mean_loss - losses[best];
    return rep;
}

ConnectivityReport mode_connectivity(const BezierCurve& curve, const ModelSpec& spec,
                                     const Dataset& train_data, int t_grid_size, McSelection selection) {
    Batch batch = full_batch(train_data);
    const LossFn loss = [&](const std::vector<double>& values) {
        ParameterVector p = zeros_like(curve.endpoint_a);
        p.values = values;
        return loss_value(p, spec, batch);
    };
    return mode_connectivity_fn(loss, curve, t_grid_size, selection);
}

SimilarityReport cka_similarity(const Matrix& logits_x, const Matrix& logits_y) {
    if (!logits_x.same_shape(logits_y)) throw shape_error("cka inputs must have equal shape");
    const std::size_t n = logits_x.rows;
    const std::size_t c = logits_x.cols;
    if (n < 2) throw precondition_error("cka needs n >= 2 samples");

    // column-center both, then HSIC(K,L) with linear kernels reduces to
    // ||Xc^T Yc||_F^2 / (n-1)^2; the normalizers cancel in the ratio
    Matrix xc = logits_x, yc = logits_y;
    for (std::size_t j = 0; j < c; ++j) {
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += xc(i, j);
            my += yc(i, j);
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            xc(i, j) -= mx;
            yc(i, j) -= my;
        }
    }

    const auto cross_fro2 = [n, c](const Matrix& a, const Matrix& b) {
        double total = 0.0;
        for (std::size_t p = 0; p < c; ++p) {
            for (std::size_t q = 0; q < c; ++q) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += a(i, p) * b(i, q);
                total += s * s;
            }
        }
        return total;
    };

    const double hsic_xy = cross_fro2(xc, yc);
    const double hsic_xx = cross_fro2(xc, xc);
    const double hsic_yy = cross_fro2(yc, yc);
    if (hsic_xx < 1e-300 || hsic_yy < 1e-300)
        throw undefined_similarity_error("cka undefined for zero-variance logits");

    SimilarityReport rep;
    rep.cka = hsic_xy / std::sqrt(hsic_xx * hsic_yy);
    rep.n_samples = n;
    return rep;
}

PairwiseReport pairwise_metrics(const std::vector<std::pair<std::uint64_t, ParameterVector>>& models,
                                const ModelSpec& spec, const Dataset& train_data,
                                const PairwiseOptions& opts) {
    if (models.size() < 2) throw precondition_error("pairwise metrics need >= 2 seeds");

    Batch batch = full_batch(train_data);
    std::vector<Matrix> logits;
    logits.reserve(models.size());
    for (const auto& [seed, params] : models) logits.push_back(forward(params, spec, batch));

    PairwiseReport rep;
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = i + 1; j < models.size(); ++j) {
            PairMetrics pm;
            pm.seed_a = models[i].first;
            pm.seed_b = models[j].first;

            const std::uint64_t pair_seed = mix_seed(opts.seed, mix_seed(pm.seed_a, pm.seed_b));
            const BezierCurve curve = fit_bezier(models[i].second, models[j].second, spec, train_data,
                                                 opts.bezier_steps, opts.bezier_lr, pair_seed);
            const ConnectivityReport mc =
                mode_connectivity(curve, spec, train_data, opts.t_grid_size, opts.mc_selection);
            pm.mc = mc.mc;
            pm.t_star = mc.t_star;
            pm.cka = cka_similarity(logits[i], logits[j]).cka;
            rep.pairs.push_back(pm);
        }
    }
    for (const PairMetrics& pm : rep.pairs) {
        rep.mc_mean += pm.mc;
        rep.cka_mean += pm.cka;
    }
    rep.mc_mean /= static_cast<double>(rep.pairs.size());
    rep.cka_mean /= static_cast<double>(rep.pairs.size());
    return rep;
}

}  // namespace phasezoo
