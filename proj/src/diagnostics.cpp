#include "fmlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fmlab/error.hpp"
#include "fmlab/objectives.hpp"

namespace fmlab {

namespace {

double beta_draw(Rng& rng, double a, double b) {
    std::gamma_distribution<double> ga(a, 1.0);
    std::gamma_distribution<double> gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void normalize(std::vector<double>& v) {
    const double n = l2_norm(v);
    if (n == 0.0) throw NumericError("power iteration collapsed to the zero vector");
    for (double& x : v) x /= n;
}

void project_out(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    for (const auto& u : basis) {
        const double c = dot(v, u);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * u[i];
    }
}

double pair_distance(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(j, k);
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace

std::pair<double, double> sample_times_normalized(Rng& rng, const TimeDist& dist) {
    if (!(dist.a > 0.0 && dist.b > 0.0)) throw ConfigError("time distribution needs Beta parameters > 0");
    const double u = beta_draw(rng, dist.a, dist.b);
    const double v = beta_draw(rng, dist.a, dist.b);
    return {std::max(u, v), std::min(u, v)};
}

std::pair<double, double> sample_times(Rng& rng, const TimeDist& dist, const Interpolant& interp) {
    const auto [t, s] = sample_times_normalized(rng, dist);
    return {interp.to_domain(t), interp.to_domain(s)};
}

double ed_proxy(const FieldNet& net, std::span<const double> theta, const GaussianMixture& mixture,
                const Interpolant& interp, std::size_t n, Rng& rng, const TimeDist& dist, double t_min) {
    if (n == 0) throw ConfigError("ed_proxy needs at least one sample");
    const auto data = sample_data(mixture, rng, n);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix xt(n, mixture.dim());
    std::vector<double> t(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto [tn, sn] = sample_times_normalized(rng, dist);
        tn = std::max(tn, t_min);
        sn = std::min(sn, tn);
        t[i] = interp.to_domain(tn);
        s[i] = interp.to_domain(sn);
        const Schedule sc = eval_schedule(interp, t[i]);
        for (std::size_t k = 0; k < mixture.dim(); ++k) xt(i, k) = sc.alpha * data.x(i, k) + sc.sigma * normal(rng);
    }
    const Matrix v = marginal_velocity(mixture, interp, xt, t);
    std::vector<int> labels;
    if (net.spec().num_classes > 0) labels.assign(n, kNullLabel);
    const Matrix r = eulerian_residual(net, theta, interp, FieldQuery{xt, t, s, labels, {}}, v);
    double acc = 0.0;
    for (double x : r.flat()) acc += x * x;
    return acc / static_cast<double>(n);
}

double energy_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() == 0 || b.rows() == 0) throw DimensionError("energy distance needs non-empty sample sets");
    if (a.cols() != b.cols()) throw DimensionError("energy distance: dimension mismatch");
    const std::size_t n = a.rows(), m = b.rows();
    double cross = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) cross += pair_distance(a, i, b, j);
    }
    cross /= static_cast<double>(n * m);
    const auto within = [](const Matrix& x) {
        if (x.rows() < 2) return 0.0;
        double acc = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t j = i + 1; j < x.rows(); ++j) acc += pair_distance(x, i, x, j);
        }
        return 2.0 * acc / static_cast<double>(x.rows() * (x.rows() - 1));
    };
    return 2.0 * cross - within(a) - within(b);
}

EigenResult power_iteration(const HvpFn& hvp_fn, std::size_t dim, Rng& rng,
                            const std::vector<std::vector<double>>& deflate, const std::vector<double>& deflate_values,
                            std::size_t max_iter, double tol) {
    if (deflate.size() != deflate_values.size()) throw DimensionError("one eigenvalue per deflation vector");
    std::normal_distribution<double> normal(0.0, 1.0);
    EigenResult res;
    res.vector.resize(dim);
    for (double& x : res.vector) x = normal(rng);
    project_out(res.vector, deflate);
    normalize(res.vector);
    double prev = 0.0;
    for (std::size_t it = 1; it <= max_iter; ++it) {
        std::vector<double> w = hvp_fn(res.vector);
        for (std::size_t k = 0; k < deflate.size(); ++k) {
            const double c = deflate_values[k] * dot(deflate[k], res.vector);
            for (std::size_t i = 0; i < dim; ++i) w[i] -= c * deflate[k][i];
        }
        const double rq = dot(res.vector, w);
        res.value = rq;
        res.iterations = it;
        project_out(w, deflate);
        normalize(w);
        res.vector = std::move(w);
        if (it > 1 && std::abs(rq - prev) <= tol * std::max(std::abs(rq), 1e-300)) {
            res.converged = true;
            break;
        }
        prev = rq;
    }
    return res;
}

std::size_t count_spikes(const Matrix& grid, double mean, double sigma) {
    std::size_t n = 0;
    for (double v : grid.flat()) {
        if (v < mean - 1.96 * sigma || v > mean + 1.96 * sigma) ++n;
    }
    return n;
}

LandscapeReport landscape_probe(const ScalarLossFn& loss, const GradientFn& gradient, std::span<const double> theta,
                                std::size_t resolution, double radius, Rng& rng, std::size_t max_iter, double tol) {
    if (resolution == 0) throw ConfigError("landscape resolution must be positive");
    if (!(radius >= 0.0)) throw ConfigError("landscape radius must be nonnegative");
    double inf_norm = 0.0;
    for (double x : theta) inf_norm = std::max(inf_norm, std::abs(x));
    const double delta = 1e-4 * (1.0 + inf_norm);
    const HvpFn hv = [&](std::span<const double> v) { return hvp(gradient, theta, v, delta); };

    LandscapeReport rep;
    rep.resolution = resolution;
    rep.radius = radius;
    const EigenResult e1 = power_iteration(hv, theta.size(), rng, {}, {}, max_iter, tol);
    const EigenResult e2 = power_iteration(hv, theta.size(), rng, {e1.vector}, {e1.value}, max_iter, tol);
    rep.u1 = e1.vector;
    rep.u2 = e2.vector;
    rep.eig1 = e1.value;
    rep.eig2 = e2.value;
    rep.converged = e1.converged && e2.converged;

    for (std::size_t i = 0; i < resolution; ++i) {
        rep.coords.push_back(resolution == 1 ? 0.0
                                             : -radius + 2.0 * radius * static_cast<double>(i) /
                                                             static_cast<double>(resolution - 1));
    }
    rep.grid.resize(resolution, resolution);
    std::vector<double> probe(theta.size());
    for (std::size_t i = 0; i < resolution; ++i) {
        for (std::size_t j = 0; j < resolution; ++j) {
            for (std::size_t k = 0; k < theta.size(); ++k) {
                probe[k] = theta[k] + rep.coords[i] * rep.u1[k] + rep.coords[j] * rep.u2[k];
            }
            rep.grid(i, j) = loss(probe);
        }
    }
    const double count = static_cast<double>(rep.grid.size());
    const double origin = rep.grid.flat()[0];
    double shifted = 0.0;
    for (double v : rep.grid.flat()) shifted += v - origin;
    rep.mean = origin + shifted / count;
    double var = 0.0;
    for (double v : rep.grid.flat()) var += (v - rep.mean) * (v - rep.mean);
    rep.sigma = std::sqrt(var / count);
    rep.spikes = count_spikes(rep.grid, rep.mean, rep.sigma);
    return rep;
}

WindowStats window_stats(std::span<const std::size_t> steps, std::span<const double> values, std::size_t from,
                         std::size_t to) {
    if (steps.size() != values.size()) throw DimensionError("window_stats: steps and values differ in length");
    WindowStats w;
    w.max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i] < from || steps[i] > to) continue;
        w.mean += values[i];
        w.max = std::max(w.max, values[i]);
        ++w.count;
    }
    if (w.count == 0) throw ConfigError("empty window for gradient-norm statistics");
    w.mean /= static_cast<double>(w.count);
    return w;
}

}  // namespace fmlab
