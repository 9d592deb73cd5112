#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fmlab/interpolant.hpp"
#include "fmlab/matrix.hpp"

namespace fmlab {

using Rng = std::mt19937_64;

// Diagonal-covariance Gaussian mixture: the toy data distribution and the
// closed-form oracle for posteriors, marginal velocities and flow maps.
class GaussianMixture {
public:
    // Throws ConfigError unless weights sum to 1 (1e-12), are nonnegative, and variances are positive.
    GaussianMixture(std::vector<double> weights, Matrix means, Matrix variances);

    // k components equally spaced on a circle of the given radius, isotropic std sigma.
    static GaussianMixture ring(std::size_t k, double radius, double sigma);
    // Default toy dataset: ring:8:1.5:0.12.
    static GaussianMixture default_ring() { return ring(8, 1.5, 0.12); }

    // "ring:<k>:<radius>:<sigma>" or "w|m1,m2,..|v1,v2,..; w|...|..." triples.
    static GaussianMixture parse(const std::string& spec);

    std::size_t components() const { return weights_.size(); }
    std::size_t dim() const { return means_.cols(); }
    const std::vector<double>& weights() const { return weights_; }
    const Matrix& means() const { return means_; }
    const Matrix& variances() const { return variances_; }

    // Single-component mixture for component i (used as the label-conditioned oracle).
    GaussianMixture component(std::size_t i) const;

    std::vector<double> mean() const;

private:
    std::vector<double> weights_;
    Matrix means_;
    Matrix variances_;
};

struct DataBatch {
    Matrix x;
    std::vector<int> labels;  // mixture component of each sample
};

DataBatch sample_data(const GaussianMixture& mixture, Rng& rng, std::size_t n);

struct PosteriorStats {
    std::vector<double> responsibilities;
    Matrix component_means;
    Matrix component_vars;
    std::vector<double> mean;
};

// p(x | x_t = y). Throws SingularTimeError when sigma_t == 0.
PosteriorStats posterior_stats(const GaussianMixture& mixture, const Interpolant& interp,
                               std::span<const double> y, double t);

// v*_t(y) = alpha'_t m + sigma'_t (y - alpha_t m) / sigma_t with m = E[x | x_t = y].
std::vector<double> marginal_velocity(const GaussianMixture& mixture, const Interpolant& interp,
                                      std::span<const double> y, double t);

// Row-wise marginal velocity; t[i] belongs to row i.
Matrix marginal_velocity(const GaussianMixture& mixture, const Interpolant& interp, const Matrix& y,
                         std::span<const double> t);

// Mini-batch estimate of the marginal velocity for the linear interpolant:
// softmax_j(-|x_t - (1-t) x_j|^2 / (2 t^2)) weighted average of (x_t - x_j) / t.
std::vector<double> batch_marginal_velocity(const Interpolant& interp, const Matrix& batch,
                                            std::span<const double> x_t, double t);

// RK4 integration of dx/dtau = v*_tau(x) from tau = t to tau = s.
std::vector<double> true_flowmap(const GaussianMixture& mixture, const Interpolant& interp,
                                 std::span<const double> x_t, double t, double s, std::size_t steps);

// Normalized time below which oracle evaluations are clipped.
inline constexpr double kTimeMin = 1e-3;

}  // namespace fmlab
