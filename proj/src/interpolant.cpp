#include "fmlab/interpolant.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "fmlab/error.hpp"

namespace fmlab {
namespace {

constexpr double kHalfPi = std::numbers::pi / 2.0;

// B_x(c, c) for x <= 1/2 from x^c / c * 2F1(c, 1 - c; c + 1; x); the series
// ratio tends to x, so 1/2 needs about 50 terms.
double lower_beta(double x, double c) {
    if (x <= 0.0) return 0.0;
    double term = 1.0;
    double sum = 1.0;
    for (int n = 0; n < 400; ++n) {
        term *= (c + n) * (1.0 - c + n) / ((c + 1.0 + n) * (n + 1.0)) * x;
        sum += term;
        if (term < 1e-17 * sum) break;
    }
    return std::pow(x, c) / c * sum;
}

double symmetric_beta(double c) { return 2.0 * lower_beta(0.5, c); }

double cdf(double g, double c, double total) {
    return g <= 0.5 ? lower_beta(g, c) / total : 1.0 - lower_beta(1.0 - g, c) / total;
}

void check_domain(const Interpolant& interp, double t) {
    if (!interp.in_domain(t)) {
        std::ostringstream os;
        os << "time " << t << " outside [0, " << interp.domain_end() << "] of interpolant " << interp.name();
        throw DomainError(os.str());
    }
}

}  // namespace

double regularized_incomplete_beta_symmetric(double x, double c) {
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("incomplete beta exponent must lie in (0, 1]");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    return cdf(x, c, symmetric_beta(c));
}

double inverse_incomplete_beta_symmetric(double t, double c) {
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("incomplete beta exponent must lie in (0, 1]");
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    if (c == 1.0) return t;
    if (t == 0.5) return 0.5;
    const double total = symmetric_beta(c);
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (cdf(mid, c, total) < t) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

Interpolant Interpolant::linear() { return Interpolant(Kind::Linear, 1.0, 1.0); }

Interpolant Interpolant::trigonometric() { return Interpolant(Kind::Trigonometric, 0.5, 1.0); }

Interpolant Interpolant::power(double c) {
    if (!(c >= 0.5 && c <= 1.0)) {
        throw ConfigError("power interpolant exponent must lie in [0.5, 1], got " + std::to_string(c));
    }
    return Interpolant(Kind::Power, c, c * symmetric_beta(c));
}

Interpolant Interpolant::parse(const std::string& spec) {
    if (spec == "linear") return linear();
    if (spec == "trig") return trigonometric();
    if (spec.rfind("power:", 0) == 0) {
        const std::string arg = spec.substr(6);
        std::size_t used = 0;
        double c = 0.0;
        try {
            c = std::stod(arg, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != arg.size()) throw ConfigError("bad power exponent in interpolant '" + spec + "'");
        return power(c);
    }
    throw ConfigError("unknown interpolant '" + spec + "' (expected linear, trig, power:<c>)");
}

std::string Interpolant::name() const {
    switch (kind_) {
        case Kind::Linear:
            return "linear";
        case Kind::Trigonometric:
            return "trig";
        case Kind::Power: {
            std::ostringstream os;
            os << "power:" << c_;
            return os.str();
        }
    }
    return "?";
}

double Interpolant::domain_end() const { return kind_ == Kind::Trigonometric ? kHalfPi : 1.0; }

bool Interpolant::in_domain(double t) const { return t >= 0.0 && t <= domain_end(); }

namespace {

Schedule power_schedule(const Interpolant& interp, double g) {
    const double c = interp.exponent();
    const double nu = interp.nu_value();
    // sigma' = nu (1-g)^{1-c}, alpha' = -nu g^{1-c}; nu is then exact by construction.
    return {std::pow(1.0 - g, c), std::pow(g, c), -nu * std::pow(g, 1.0 - c), nu * std::pow(1.0 - g, 1.0 - c)};
}

ScheduleSecond power_second(const Interpolant& interp, double g) {
    const double c = interp.exponent();
    if (c == 1.0) return {0.0, 0.0};
    const double nu = interp.nu_value();
    // Unbounded at the endpoints for c in (0.5, 1); finite inside.
    const double k = nu * nu * (1.0 - c) / c;
    return {-k * std::pow(g, 1.0 - 2.0 * c) * std::pow(1.0 - g, 1.0 - c),
            -k * std::pow(1.0 - g, 1.0 - 2.0 * c) * std::pow(g, 1.0 - c)};
}

}  // namespace

Schedule eval_schedule(const Interpolant& interp, double t) {
    check_domain(interp, t);
    switch (interp.kind()) {
        case Interpolant::Kind::Linear:
            return {1.0 - t, t, -1.0, 1.0};
        case Interpolant::Kind::Trigonometric:
            if (t == kHalfPi) return {0.0, 1.0, -1.0, 0.0};
            return {std::cos(t), std::sin(t), -std::sin(t), std::cos(t)};
        case Interpolant::Kind::Power:
            return power_schedule(interp, inverse_incomplete_beta_symmetric(t, interp.exponent()));
    }
    return {};
}

ScheduleSecond eval_schedule_second(const Interpolant& interp, double t) {
    check_domain(interp, t);
    switch (interp.kind()) {
        case Interpolant::Kind::Linear:
            return {0.0, 0.0};
        case Interpolant::Kind::Trigonometric:
            if (t == kHalfPi) return {0.0, -1.0};
            return {-std::cos(t), -std::sin(t)};
        case Interpolant::Kind::Power:
            return power_second(interp, inverse_incomplete_beta_symmetric(t, interp.exponent()));
    }
    return {};
}

BridgeCoeffs bridge(const Interpolant& interp, double t, double s) {
    check_domain(interp, t);
    check_domain(interp, s);
    switch (interp.kind()) {
        case Interpolant::Kind::Linear:
            return {t - s, 1.0, 0.0};
        case Interpolant::Kind::Trigonometric: {
            const double d = t - s;
            return {std::sin(d), std::cos(d), -std::sin(d)};
        }
        case Interpolant::Kind::Power:
            break;
    }
    const double gt = inverse_incomplete_beta_symmetric(t, interp.exponent());
    const Schedule st = power_schedule(interp, gt);
    const ScheduleSecond st2 = power_second(interp, gt);
    if (t == s) {
        const double a2_sigma = st.alpha == 0.0 ? 0.0 : st2.d2sigma * st.alpha;
        const double a2_alpha = st.sigma == 0.0 ? 0.0 : st.sigma * st2.d2alpha;
        return {0.0, interp.nu_value(), a2_sigma - a2_alpha};
    }
    const Schedule ss = eval_schedule(interp, s);
    const double a2_sigma = ss.alpha == 0.0 ? 0.0 : st2.d2sigma * ss.alpha;
    const double a2_alpha = ss.sigma == 0.0 ? 0.0 : ss.sigma * st2.d2alpha;
    return {st.sigma * ss.alpha - ss.sigma * st.alpha, st.dsigma * ss.alpha - ss.sigma * st.dalpha,
            a2_sigma - a2_alpha};
}

double nu(const Interpolant& interp) {
    const double expected = interp.nu_value();
    constexpr int kGrid = 1024;
    for (int i = 0; i < kGrid; ++i) {
        const double t = interp.domain_end() * static_cast<double>(i) / (kGrid - 1);
        const Schedule sc = eval_schedule(interp, t);
        const double value = sc.alpha * sc.dsigma - sc.sigma * sc.dalpha;
        if (!(std::abs(value - expected) < 1e-6)) {
            std::ostringstream os;
            os << "nu(t) not constant for " << interp.name() << ": nu(" << t << ") = " << value << ", expected "
               << expected;
            throw InvariantError(os.str());
        }
    }
    return expected;
}

void interpolate(const Interpolant& interp, std::span<const double> x, std::span<const double> z, double t,
                 std::span<double> out) {
    if (x.size() != z.size() || out.size() != x.size()) throw DimensionError("interpolate: dimension mismatch");
    const Schedule sc = eval_schedule(interp, t);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sc.alpha * x[i] + sc.sigma * z[i];
}

void conditional_velocity(const Interpolant& interp, std::span<const double> x, std::span<const double> z,
                          double t, std::span<double> out) {
    if (x.size() != z.size() || out.size() != x.size()) {
        throw DimensionError("conditional_velocity: dimension mismatch");
    }
    const Schedule sc = eval_schedule(interp, t);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sc.dalpha * x[i] + sc.dsigma * z[i];
}

}  // namespace fmlab
