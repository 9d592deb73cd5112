#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fmlab/autodiff.hpp"
#include "fmlab/fieldnet.hpp"
#include "fmlab/interpolant.hpp"
#include "fmlab/mixture.hpp"

namespace fmlab {

struct TimeDist {
    double a = 0.8;
    double b = 1.0;
};

// Two independent Beta(a, b) draws ordered so t >= s, in normalized time.
std::pair<double, double> sample_times_normalized(Rng& rng, const TimeDist& dist);
// Same, mapped into the interpolant's domain.
std::pair<double, double> sample_times(Rng& rng, const TimeDist& dist, const Interpolant& interp);

// Monte Carlo mean of |Eulerian residual|^2 under the analytic marginal velocity.
// Normalized times are clipped below at t_min.
double ed_proxy(const FieldNet& net, std::span<const double> theta, const GaussianMixture& mixture,
                const Interpolant& interp, std::size_t n, Rng& rng, const TimeDist& dist = {},
                double t_min = kTimeMin);

// 2 E|A - B| - E|A - A'| - E|B - B'| with U-statistics for the within-set terms.
double energy_distance(const Matrix& a, const Matrix& b);

struct LandscapeReport {
    std::size_t resolution = 0;
    double radius = 0.0;
    std::vector<double> coords;              // alpha = beta grid values
    Matrix grid;                             // grid(i, j): loss at theta + coords[i] u1 + coords[j] u2
    std::vector<double> u1;
    std::vector<double> u2;
    double eig1 = 0.0;
    double eig2 = 0.0;
    double mean = 0.0;
    double sigma = 0.0;
    std::size_t spikes = 0;                  // outside own mean +- 1.96 sigma
    bool converged = true;                   // false: power iteration hit the iteration cap
};

struct EigenResult {
    std::vector<double> vector;
    double value = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

using HvpFn = std::function<std::vector<double>(std::span<const double>)>;

// Power iteration on v -> H v with optional deflation against unit vectors `deflate`
// (their eigenvalues in `deflate_values`). Stops when the Rayleigh quotient
// changes by less than tol relative to its magnitude.
EigenResult power_iteration(const HvpFn& hvp_fn, std::size_t dim, Rng& rng,
                            const std::vector<std::vector<double>>& deflate = {},
                            const std::vector<double>& deflate_values = {}, std::size_t max_iter = 50,
                            double tol = 1e-4);

using ScalarLossFn = std::function<double(std::span<const double>)>;

// Top-2 Hessian directions of the loss (via central differences of `gradient`,
// step 1e-4 (1 + |theta|_inf)) and the loss surface over [-radius, radius]^2.
LandscapeReport landscape_probe(const ScalarLossFn& loss, const GradientFn& gradient, std::span<const double> theta,
                                std::size_t resolution, double radius, Rng& rng, std::size_t max_iter = 50,
                                double tol = 1e-4);

// Grid values outside mean +- 1.96 sigma.
std::size_t count_spikes(const Matrix& grid, double mean, double sigma);

struct WindowStats {
    double mean = 0.0;
    double max = 0.0;
    std::size_t count = 0;
};

// Statistics of values[i] for steps[i] in [from, to]. Throws ConfigError for an empty window.
WindowStats window_stats(std::span<const std::size_t> steps, std::span<const double> values, std::size_t from,
                         std::size_t to);

}  // namespace fmlab
