#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fmlab/diagnostics.hpp"
#include "fmlab/error.hpp"

using namespace fmlab;

namespace {

Matrix gaussian(Rng& rng, std::size_t n, std::size_t d, double shift = 0.0) {
    Matrix m(n, d);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : m.flat()) v = nd(rng) + shift;
    return m;
}

// Symmetric PSD matrix Q diag(lambda) Q^T with Q from Gram-Schmidt on random vectors.
struct Quadratic {
    std::size_t n;
    std::vector<std::vector<double>> q;
    std::vector<double> lambda;
    std::vector<double> h;

    Quadratic(std::size_t dim, Rng& rng) : n(dim), h(dim * dim, 0.0) {
        std::normal_distribution<double> nd(0.0, 1.0);
        for (std::size_t k = 0; k < n; ++k) {
            std::vector<double> v(n);
            for (auto& x : v) x = nd(rng);
            for (const auto& u : q) {
                const double c = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
                for (std::size_t i = 0; i < n; ++i) v[i] -= c * u[i];
            }
            const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
            for (auto& x : v) x /= norm;
            q.push_back(v);
            lambda.push_back(k == 0 ? 10.0 : k == 1 ? 6.0 : 3.0 / static_cast<double>(k));
        }
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) h[i * n + j] += lambda[k] * q[k][i] * q[k][j];
            }
        }
    }
    std::vector<double> mul(std::span<const double> v) const {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) out[i] += h[i * n + j] * v[j];
        }
        return out;
    }
    double loss(std::span<const double> x) const {
        const auto hx = mul(x);
        return 0.5 * std::inner_product(x.begin(), x.end(), hx.begin(), 0.0);
    }
};

double abs_cos(const std::vector<double>& a, const std::vector<double>& b) {
    const double d = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
    return std::abs(d) / (na * nb);
}

}  // namespace

TEST_CASE("time sampling") {
    Rng rng(1);
    const std::size_t n = 100000;
    double mean = 0.0;
    bool ordered = true;
    for (std::size_t i = 0; i < n; ++i) {
        const auto [t, s] = sample_times_normalized(rng, {1.0, 1.0});
        ordered = ordered && t >= s && s >= 0.0 && t <= 1.0;
        mean += t;
    }
    mean /= n;
    CHECK(ordered);
    // max of two uniforms: mean 2/3, variance 1/18
    CHECK(std::abs(mean - 2.0 / 3.0) < 4.0 * std::sqrt(1.0 / 18.0 / n));

    const auto trig = Interpolant::trigonometric();
    Rng a(2), b(2);
    for (int i = 0; i < 100; ++i) {
        const auto [t, s] = sample_times(a, {}, trig);
        const auto [tn, sn] = sample_times_normalized(b, {});
        CHECK(t == trig.to_domain(tn));
        CHECK(s == trig.to_domain(sn));
    }
    CHECK(TimeDist{}.a == 0.8);
    CHECK(TimeDist{}.b == 1.0);
    CHECK_THROWS_AS(sample_times_normalized(rng, {0.0, 1.0}), ConfigError);
}

TEST_CASE("energy distance") {
    Rng rng(3);
    const Matrix a = gaussian(rng, 300, 2);
    const double within = [&] {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) {
            for (std::size_t j = 0; j < a.rows(); ++j) {
                if (i != j) acc += std::hypot(a(i, 0) - a(j, 0), a(i, 1) - a(j, 1));
            }
        }
        return acc / (300.0 * 299.0);
    }();
    // identical sets: the cross term keeps the zero diagonal, bias = -2 E|A-A'| / n
    CHECK(energy_distance(a, a) == doctest::Approx(-2.0 * within / 300.0).epsilon(1e-9));

    const Matrix far = gaussian(rng, 200, 2, 0.0);
    Matrix shifted = gaussian(rng, 200, 2, 0.0);
    for (std::size_t i = 0; i < shifted.rows(); ++i) shifted(i, 0) += 1000.0;
    CHECK(energy_distance(far, shifted) == doctest::Approx(2000.0).epsilon(0.01));

    const Matrix b = gaussian(rng, 250, 2, 0.3);
    CHECK(energy_distance(a, b) == doctest::Approx(energy_distance(b, a)).epsilon(1e-12));
    Matrix perm(b.rows(), 2);
    for (std::size_t i = 0; i < b.rows(); ++i) {
        perm(i, 0) = b(b.rows() - 1 - i, 0);
        perm(i, 1) = b(b.rows() - 1 - i, 1);
    }
    CHECK(energy_distance(a, perm) == doctest::Approx(energy_distance(a, b)).epsilon(1e-12));
    CHECK(energy_distance(a, b) > 0.0);

    CHECK_THROWS_AS(energy_distance(a, Matrix(3, 3)), DimensionError);
    CHECK_THROWS_AS(energy_distance(Matrix(0, 2), a), DimensionError);
}

TEST_CASE("energy distance between equal normals is small") {
    Rng rng(4);
    const Matrix a = gaussian(rng, 10000, 1);
    const Matrix b = gaussian(rng, 10000, 1);
    CHECK(std::abs(energy_distance(a, b)) < 0.01);
}

TEST_CASE("power iteration recovers quadratic eigenvectors") {
    Rng rng(5);
    const Quadratic quad(12, rng);
    const HvpFn hv = [&](std::span<const double> v) { return quad.mul(v); };
    Rng prng(6);
    const auto e1 = power_iteration(hv, 12, prng, {}, {}, 500, 1e-14);
    CHECK(e1.converged);
    CHECK(e1.value == doctest::Approx(10.0).epsilon(1e-8));
    CHECK(abs_cos(e1.vector, quad.q[0]) > std::cos(1e-3));
    const auto e2 = power_iteration(hv, 12, prng, {e1.vector}, {e1.value}, 500, 1e-14);
    CHECK(e2.value == doctest::Approx(6.0).epsilon(1e-8));
    CHECK(abs_cos(e2.vector, quad.q[1]) > std::cos(1e-3));
    CHECK(std::abs(std::inner_product(e1.vector.begin(), e1.vector.end(), e2.vector.begin(), 0.0)) < 1e-6);

    Rng cap(7);
    const auto capped = power_iteration(hv, 12, cap, {}, {}, 2, 1e-14);
    CHECK_FALSE(capped.converged);
    CHECK(capped.iterations == 2);
}

TEST_CASE("Rayleigh quotient is nondecreasing on a PSD quadratic") {
    Rng rng(8);
    const Quadratic quad(10, rng);
    const HvpFn hv = [&](std::span<const double> v) { return quad.mul(v); };
    double prev = -1.0;
    for (std::size_t k = 1; k <= 15; ++k) {
        Rng prng(9);
        const auto e = power_iteration(hv, 10, prng, {}, {}, k, 0.0);
        CHECK(e.value >= prev - 1e-12);
        prev = e.value;
    }
}

TEST_CASE("landscape probe on a quadratic") {
    Rng rng(10);
    const Quadratic quad(8, rng);
    const ScalarLossFn loss = [&](std::span<const double> x) { return quad.loss(x); };
    const GradientFn grad = [&](std::span<const double> x) { return quad.mul(x); };
    const std::vector<double> theta(8, 0.1);

    Rng p1(11);
    const auto rep = landscape_probe(loss, grad, theta, 9, 0.5, p1);
    CHECK(rep.grid.rows() == 9);
    CHECK(rep.grid.cols() == 9);
    CHECK(rep.coords.front() == -0.5);
    CHECK(rep.coords.back() == 0.5);
    CHECK(rep.eig1 == doctest::Approx(10.0).epsilon(1e-3));
    CHECK(rep.eig2 == doctest::Approx(6.0).epsilon(1e-3));
    CHECK(rep.sigma > 0.0);
    CHECK(rep.spikes <= 81);
    CHECK(rep.spikes == count_spikes(rep.grid, rep.mean, rep.sigma));

    Rng p2(11);
    const auto flat = landscape_probe(loss, grad, theta, 5, 0.0, p2);
    const double first = flat.grid(0, 0);
    for (double v : flat.grid.flat()) CHECK(v == first);
    CHECK(flat.sigma == 0.0);
    CHECK(flat.spikes == 0);

    CHECK_THROWS_AS(landscape_probe(loss, grad, theta, 0, 0.5, p2), ConfigError);
}

TEST_CASE("spike counting") {
    Matrix g(2, 2);
    g(0, 0) = 0.0;
    g(0, 1) = 1.0;
    g(1, 0) = 5.0;
    g(1, 1) = -4.0;
    CHECK(count_spikes(g, 0.0, 1.0) == 2);
    CHECK(count_spikes(g, 0.0, 10.0) == 0);
}

TEST_CASE("window statistics") {
    const std::vector<std::size_t> steps{1, 2, 3, 4, 5};
    const std::vector<double> constant(5, 2.5);
    const auto w = window_stats(steps, constant, 2, 4);
    CHECK(w.mean == 2.5);
    CHECK(w.max == 2.5);
    CHECK(w.count == 3);
    const std::vector<double> ramp{1, 2, 3, 4, 5};
    const auto r = window_stats(steps, ramp, 1, 5);
    CHECK(r.mean == 3.0);
    CHECK(r.max == 5.0);
    CHECK_THROWS_AS(window_stats(steps, ramp, 10, 20), ConfigError);
}

TEST_CASE("ed_proxy of the zero field matches quadrature") {
    // Single isotropic Gaussian N(m, tau^2 I), linear interpolant, F = 0: the residual
    // equals v*(x_t, t) = -m + c/V (x_t - (1-t) m) with V = (1-t)^2 tau^2 + t^2, c = t - (1-t) tau^2.
    const double tau2 = 0.25;
    const std::vector<double> m{0.5, -0.3};
    Matrix means(1, 2);
    means(0, 0) = m[0];
    means(0, 1) = m[1];
    Matrix vars(1, 2);
    vars(0, 0) = vars(0, 1) = tau2;
    const GaussianMixture mix({1.0}, means, vars);
    const auto lin = Interpolant::linear();
    NetSpec spec;
    spec.hidden = 8;
    spec.depth = 2;
    spec.fourier = 2;
    FieldNet net(spec);
    Rng init(12);
    const auto theta = net.init_params(init, true);

    const double t_min = 1e-3;
    auto integrand = [&](double t) {
        const double v = (1 - t) * (1 - t) * tau2 + t * t;
        const double c = t - (1 - t) * tau2;
        return m[0] * m[0] + m[1] * m[1] + 2.0 * c * c / v;
    };
    // t = max(u1, u2) has density 2t; the clip puts mass t_min^2 at t_min.
    const int kN = 20000;
    double expected = t_min * t_min * integrand(t_min);
    const double h = (1.0 - t_min) / kN;
    for (int i = 0; i <= kN; ++i) {
        const double t = t_min + i * h;
        const double w = (i == 0 || i == kN) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        expected += w * h / 3.0 * 2.0 * t * integrand(t);
    }

    Rng rng(13);
    const double got = ed_proxy(net, theta, mix, lin, 100000, rng, {1.0, 1.0}, t_min);
    CHECK(got == doctest::Approx(expected).epsilon(0.02));

    Rng r1(14), r2(14);
    CHECK(ed_proxy(net, theta, mix, lin, 500, r1) == ed_proxy(net, theta, mix, lin, 500, r2));
    CHECK_THROWS_AS(ed_proxy(net, theta, mix, lin, 0, r1), ConfigError);
}
