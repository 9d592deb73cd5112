#include "fmlab/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "fmlab/error.hpp"

namespace fmlab {
namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, const std::string& context) {
    const std::string v = trim(s);
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("bad number '" + v + "' in mixture spec '" + context + "'");
    return out;
}

std::vector<double> parse_vector(const std::string& s, const std::string& context) {
    std::vector<double> out;
    for (const auto& part : split(s, ',')) out.push_back(parse_double(part, context));
    return out;
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<double> weights, Matrix means, Matrix variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    if (weights_.empty()) throw ConfigError("mixture needs at least one component");
    if (means_.rows() != weights_.size() || variances_.rows() != weights_.size() ||
        variances_.cols() != means_.cols() || means_.cols() == 0) {
        throw ConfigError("mixture weights/means/variances have inconsistent shapes");
    }
    double total = 0.0;
    for (double w : weights_) {
        if (!(w >= 0.0)) throw ConfigError("mixture weights must be nonnegative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        std::ostringstream os;
        os << "mixture weights sum to " << total << ", expected 1";
        throw ConfigError(os.str());
    }
    for (double v : variances_.flat()) {
        if (!(v > 0.0)) throw ConfigError("mixture variances must be positive");
    }
}

GaussianMixture GaussianMixture::ring(std::size_t k, double radius, double sigma) {
    if (k == 0) throw ConfigError("ring mixture needs k >= 1");
    if (!(sigma > 0.0)) throw ConfigError("ring mixture needs sigma > 0");
    Matrix means(k, 2);
    Matrix vars(k, 2, sigma * sigma);
    std::vector<double> w(k, 1.0 / static_cast<double>(k));
    // Equal weights must sum to 1 within 1e-12; put the rounding residue on the last one.
    double partial = 0.0;
    for (std::size_t i = 0; i + 1 < k; ++i) partial += w[i];
    w[k - 1] = 1.0 - partial;
    for (std::size_t i = 0; i < k; ++i) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
        means(i, 0) = radius * std::cos(angle);
        means(i, 1) = radius * std::sin(angle);
    }
    return GaussianMixture(std::move(w), std::move(means), std::move(vars));
}

GaussianMixture GaussianMixture::parse(const std::string& spec_in) {
    const std::string spec = trim(spec_in);
    if (spec.rfind("ring:", 0) == 0) {
        const auto parts = split(spec.substr(5), ':');
        if (parts.size() != 3) throw ConfigError("ring mixture spec must be ring:<k>:<radius>:<sigma>");
        const double k = parse_double(parts[0], spec);
        if (k < 1 || k != std::floor(k)) throw ConfigError("ring mixture component count must be a positive integer");
        return ring(static_cast<std::size_t>(k), parse_double(parts[1], spec), parse_double(parts[2], spec));
    }
    std::vector<double> weights;
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> vars;
    for (const auto& triple : split(spec, ';')) {
        if (trim(triple).empty()) continue;
        const auto fields = split(triple, '|');
        if (fields.size() != 3) throw ConfigError("mixture component must be weight|mean|variance, got '" + triple + "'");
        weights.push_back(parse_double(fields[0], spec));
        means.push_back(parse_vector(fields[1], spec));
        vars.push_back(parse_vector(fields[2], spec));
    }
    if (weights.empty()) throw ConfigError("empty mixture spec");
    const std::size_t d = means.front().size();
    Matrix m(weights.size(), d);
    Matrix v(weights.size(), d);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (means[i].size() != d || vars[i].size() != d) throw ConfigError("mixture components differ in dimension");
        std::copy(means[i].begin(), means[i].end(), m.row(i).begin());
        std::copy(vars[i].begin(), vars[i].end(), v.row(i).begin());
    }
    return GaussianMixture(std::move(weights), std::move(m), std::move(v));
}

GaussianMixture GaussianMixture::component(std::size_t i) const {
    Matrix m(1, dim());
    Matrix v(1, dim());
    std::copy(means_.row(i).begin(), means_.row(i).end(), m.row(0).begin());
    std::copy(variances_.row(i).begin(), variances_.row(i).end(), v.row(0).begin());
    return GaussianMixture({1.0}, std::move(m), std::move(v));
}

std::vector<double> GaussianMixture::mean() const {
    std::vector<double> out(dim(), 0.0);
    for (std::size_t i = 0; i < components(); ++i) {
        for (std::size_t d = 0; d < dim(); ++d) out[d] += weights_[i] * means_(i, d);
    }
    return out;
}

DataBatch sample_data(const GaussianMixture& mixture, Rng& rng, std::size_t n) {
    DataBatch out{Matrix(n, mixture.dim()), std::vector<int>(n, 0)};
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& w = mixture.weights();
    for (std::size_t i = 0; i < n; ++i) {
        const double u = uniform(rng);
        double cum = 0.0;
        std::size_t comp = w.size() - 1;
        for (std::size_t k = 0; k < w.size(); ++k) {
            cum += w[k];
            if (u < cum && w[k] > 0.0) {
                comp = k;
                break;
            }
        }
        while (w[comp] == 0.0 && comp > 0) --comp;
        out.labels[i] = static_cast<int>(comp);
        for (std::size_t d = 0; d < mixture.dim(); ++d) {
            out.x(i, d) = mixture.means()(comp, d) + std::sqrt(mixture.variances()(comp, d)) * normal(rng);
        }
    }
    return out;
}

PosteriorStats posterior_stats(const GaussianMixture& mixture, const Interpolant& interp, std::span<const double> y,
                               double t) {
    const std::size_t dim = mixture.dim();
    if (y.size() != dim) throw DimensionError("posterior_stats: point dimension does not match mixture");
    const Schedule sc = eval_schedule(interp, t);
    if (sc.sigma == 0.0) throw SingularTimeError("posterior undefined at sigma_t = 0 (t = " + std::to_string(t) + ")");
    const std::size_t k = mixture.components();
    const double s2 = sc.sigma * sc.sigma;
    const double a = sc.alpha;

    if (a == 0.0) {
        // Terminal time: x_t carries no information about x.
        return {mixture.weights(), mixture.means(), mixture.variances(), mixture.mean()};
    }
    PosteriorStats out{std::vector<double>(k, 0.0), Matrix(k, dim), Matrix(k, dim), std::vector<double>(dim, 0.0)};
    std::vector<double> logw(k, -std::numeric_limits<double>::infinity());
    double max_log = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) {
        const double pi = mixture.weights()[i];
        for (std::size_t d = 0; d < dim; ++d) {
            const double var = mixture.variances()(i, d);
            const double mu = mixture.means()(i, d);
            const double denom = s2 + var * a * a;
            out.component_means(i, d) = (a * var * y[d] + mu * s2) / denom;
            out.component_vars(i, d) = var * s2 / denom;
        }
        if (pi <= 0.0) continue;
        double lw = std::log(pi);
        for (std::size_t d = 0; d < dim; ++d) {
            const double var = a * a * mixture.variances()(i, d) + s2;
            const double diff = y[d] - a * mixture.means()(i, d);
            lw += -0.5 * (diff * diff / var + std::log(2.0 * std::numbers::pi * var));
        }
        logw[i] = lw;
        max_log = std::max(max_log, lw);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        out.responsibilities[i] = std::isinf(logw[i]) ? 0.0 : std::exp(logw[i] - max_log);
        norm += out.responsibilities[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
        out.responsibilities[i] /= norm;
        for (std::size_t d = 0; d < dim; ++d) out.mean[d] += out.responsibilities[i] * out.component_means(i, d);
    }
    return out;
}

std::vector<double> marginal_velocity(const GaussianMixture& mixture, const Interpolant& interp,
                                      std::span<const double> y, double t) {
    const PosteriorStats post = posterior_stats(mixture, interp, y, t);
    const Schedule sc = eval_schedule(interp, t);
    std::vector<double> v(y.size());
    for (std::size_t d = 0; d < y.size(); ++d) {
        const double m = post.mean[d];
        v[d] = sc.dalpha * m + sc.dsigma * (y[d] - sc.alpha * m) / sc.sigma;
    }
    return v;
}

Matrix marginal_velocity(const GaussianMixture& mixture, const Interpolant& interp, const Matrix& y,
                         std::span<const double> t) {
    if (t.size() != y.rows()) throw DimensionError("marginal_velocity: one time per row required");
    Matrix out(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const auto v = marginal_velocity(mixture, interp, y.row(i), t[i]);
        std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
}

std::vector<double> batch_marginal_velocity(const Interpolant& interp, const Matrix& batch,
                                            std::span<const double> x_t, double t) {
    if (interp.kind() != Interpolant::Kind::Linear) {
        throw ConfigError("batch marginal velocity is only defined for the linear interpolant");
    }
    if (!(t > 0.0) || t > 1.0) throw SingularTimeError("batch marginal velocity needs t in (0, 1]");
    if (batch.rows() == 0) throw DimensionError("batch marginal velocity needs a non-empty batch");
    if (x_t.size() != batch.cols()) throw DimensionError("batch marginal velocity: dimension mismatch");
    const std::size_t n = batch.rows();
    const std::size_t dim = batch.cols();
    std::vector<double> logits(n);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        double sq = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double diff = x_t[d] - (1.0 - t) * batch(j, d);
            sq += diff * diff;
        }
        logits[j] = -sq / (2.0 * t * t);
        max_logit = std::max(max_logit, logits[j]);
    }
    double norm = 0.0;
    for (auto& l : logits) {
        l = std::exp(l - max_logit);
        norm += l;
    }
    std::vector<double> v(dim, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double w = logits[j] / norm;
        for (std::size_t d = 0; d < dim; ++d) v[d] += w * (x_t[d] - batch(j, d)) / t;
    }
    return v;
}

std::vector<double> true_flowmap(const GaussianMixture& mixture, const Interpolant& interp,
                                 std::span<const double> x_t, double t, double s, std::size_t steps) {
    if (steps == 0) throw ConfigError("true_flowmap needs at least one step");
    std::vector<double> x(x_t.begin(), x_t.end());
    if (s == t) return x;
    const double h = (s - t) / static_cast<double>(steps);
    const std::size_t dim = x.size();
    std::vector<double> tmp(dim);
    for (std::size_t n = 0; n < steps; ++n) {
        const double tau = t + h * static_cast<double>(n);
        const auto k1 = marginal_velocity(mixture, interp, x, tau);
        for (std::size_t d = 0; d < dim; ++d) tmp[d] = x[d] + 0.5 * h * k1[d];
        const auto k2 = marginal_velocity(mixture, interp, tmp, tau + 0.5 * h);
        for (std::size_t d = 0; d < dim; ++d) tmp[d] = x[d] + 0.5 * h * k2[d];
        const auto k3 = marginal_velocity(mixture, interp, tmp, tau + 0.5 * h);
        for (std::size_t d = 0; d < dim; ++d) tmp[d] = x[d] + h * k3[d];
        const double tau_next = n + 1 == steps ? s : tau + h;
        const auto k4 = marginal_velocity(mixture, interp, tmp, tau_next);
        for (std::size_t d = 0; d < dim; ++d) x[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
    }
    return x;
}

}  // namespace fmlab
