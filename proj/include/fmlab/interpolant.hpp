#pragma once

#include <span>
#include <string>

namespace fmlab {

// x_t = alpha_t x + sigma_t z with alpha: 1 -> 0 and sigma: 0 -> 1 over the time domain.
//
// Linear and power families live on [0, 1]; the trigonometric schedule lives on
// [0, pi/2]. Configs and samplers speak normalized time in [0, 1] and convert
// with to_domain()/to_normalized().
class Interpolant {
public:
    enum class Kind { Linear, Trigonometric, Power };

    static Interpolant linear();
    static Interpolant trigonometric();
    // Power family alpha = (1 - g_t)^c, sigma = g_t^c with g_t = I^{-1}_t(c, c), c in [0.5, 1].
    static Interpolant power(double c);

    // Parses "linear", "trig", "power:<c>".
    static Interpolant parse(const std::string& spec);
    std::string name() const;

    Kind kind() const { return kind_; }
    double exponent() const { return c_; }

    double domain_begin() const { return 0.0; }
    double domain_end() const;
    bool in_domain(double t) const;

    double to_domain(double normalized) const { return normalized * domain_end(); }
    double to_normalized(double t) const { return t / domain_end(); }

    // Constant nu = alpha sigma' - sigma alpha' (closed form).
    double nu_value() const { return nu_; }

private:
    Interpolant(Kind kind, double c, double nu) : kind_(kind), c_(c), nu_(nu) {}

    Kind kind_;
    double c_;
    double nu_;
};

struct Schedule {
    double alpha;
    double sigma;
    double dalpha;
    double dsigma;
};

struct ScheduleSecond {
    double d2alpha;
    double d2sigma;
};

// A_{t,s} = sigma_t alpha_s - sigma_s alpha_t and its first two t-derivatives.
struct BridgeCoeffs {
    double A;
    double A1;
    double A2;
};

Schedule eval_schedule(const Interpolant& interp, double t);
ScheduleSecond eval_schedule_second(const Interpolant& interp, double t);

BridgeCoeffs bridge(const Interpolant& interp, double t, double s);

// nu after checking |alpha sigma' - sigma alpha' - nu| < 1e-6 on a 1024-point grid.
// Throws InvariantError otherwise.
double nu(const Interpolant& interp);

void interpolate(const Interpolant& interp, std::span<const double> x, std::span<const double> z,
                 double t, std::span<double> out);
void conditional_velocity(const Interpolant& interp, std::span<const double> x,
                          std::span<const double> z, double t, std::span<double> out);

// Regularized incomplete beta I_x(c, c) for the symmetric case, c in (0, 1].
double regularized_incomplete_beta_symmetric(double x, double c);

// Inverts I_g(c, c) = t by bisection.
double inverse_incomplete_beta_symmetric(double t, double c);

}  // namespace fmlab
