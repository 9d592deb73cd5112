#include "fmlab/sampler.hpp"

#include "fmlab/error.hpp"
#include "fmlab/objectives.hpp"

namespace fmlab {

SampleSchedule uniform_schedule(const Interpolant& interp, std::size_t steps, double t_min) {
    if (steps == 0) throw ConfigError("sampling needs at least one step");
    if (!(t_min >= 0.0 && t_min < 1.0)) throw ConfigError("sampling t_min must lie in [0, 1)");
    SampleSchedule s;
    for (std::size_t i = 0; i <= steps; ++i) {
        const double u = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
        s.times.push_back(interp.to_domain(t_min + (1.0 - t_min) * u));
    }
    s.times.front() = interp.domain_end();
    return s;
}

void check_schedule(const Interpolant& interp, const SampleSchedule& schedule) {
    const auto& ts = schedule.times;
    if (ts.size() < 2) throw ConfigError("sampling schedule needs at least two times");
    for (double t : ts) {
        if (!interp.in_domain(t)) throw ConfigError("sampling time outside the interpolant domain");
    }
    if (ts.size() == 2 && ts[0] == ts[1]) return;
    for (std::size_t i = 1; i < ts.size(); ++i) {
        if (!(ts[i] < ts[i - 1])) throw ConfigError("sampling schedule must be strictly decreasing");
    }
}

namespace {

template <class FieldFn>
Matrix walk(const Interpolant& interp, const Matrix& z, const SampleSchedule& schedule, FieldFn field) {
    check_schedule(interp, schedule);
    Matrix x = z;
    const double nu = interp.nu_value();
    std::vector<double> point(z.cols());
    for (std::size_t k = 0; k + 1 < schedule.times.size(); ++k) {
        const double t = schedule.times[k];
        const double s = schedule.times[k + 1];
        const Matrix f = field(x, t, s);
        const BridgeCoeffs c = bridge(interp, t, s);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            flow_map(c, nu, x.row(i), f.row(i), point);
            std::copy(point.begin(), point.end(), x.row(i).begin());
        }
    }
    return x;
}

FieldQuery step_query(const Matrix& x, double t, double s, const std::vector<int>& labels) {
    return FieldQuery{x, std::vector<double>(x.rows(), t), std::vector<double>(x.rows(), s), labels, {}};
}

void check_labels(const FieldNet& net, const Matrix& z, const std::vector<int>& labels) {
    if (!labels.empty() && labels.size() != z.rows()) throw DimensionError("one label per noise row expected");
    if (!labels.empty() && net.spec().num_classes == 0) throw ConfigError("labels given to an unconditional network");
}

}  // namespace

Matrix flow_map_walk(const Interpolant& interp, const Matrix& z, const SampleSchedule& schedule,
                     const StepField& field) {
    return walk(interp, z, schedule, field);
}

Matrix few_step_sample(const FieldNet& net, std::span<const double> theta, const Interpolant& interp, const Matrix& z,
                       const SampleSchedule& schedule, const std::vector<int>& labels) {
    check_labels(net, z, labels);
    return walk(interp, z, schedule,
                [&](const Matrix& x, double t, double s) { return net.apply(theta, step_query(x, t, s, labels)); });
}

Matrix post_cfg_sample(const FieldNet& net, std::span<const double> theta, const Interpolant& interp, const Matrix& z,
                       const SampleSchedule& schedule, const std::vector<int>& labels, double omega) {
    check_labels(net, z, labels);
    if (net.spec().num_classes == 0) throw ConfigError("Post-CFG needs a class-conditional network");
    const std::vector<int> nulls(z.rows(), kNullLabel);
    return walk(interp, z, schedule, [&](const Matrix& x, double t, double s) {
        const Matrix fc = net.apply(theta, step_query(x, t, s, labels));
        const Matrix fn = net.apply(theta, step_query(x, t, s, nulls));
        Matrix f(fc.rows(), fc.cols());
        for (std::size_t i = 0; i < f.size(); ++i) {
            f.data()[i] = (1.0 - omega) * fn.data()[i] + omega * fc.data()[i];
        }
        return f;
    });
}

}  // namespace fmlab
