#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fmlab/fieldnet.hpp"
#include "fmlab/interpolant.hpp"

namespace fmlab {

// Strictly decreasing domain times t_1 > ... > t_{N+1}.
struct SampleSchedule {
    std::vector<double> times;
};

// N uniform steps in normalized time from the domain end down to t_min (0 keeps the exact start).
SampleSchedule uniform_schedule(const Interpolant& interp, std::size_t steps, double t_min = 1e-3);

// Throws ConfigError unless the schedule is strictly decreasing inside the domain.
// A single repeated time [t, t] is accepted as the identity schedule.
void check_schedule(const Interpolant& interp, const SampleSchedule& schedule);

using StepField = std::function<Matrix(const Matrix& x, double t, double s)>;

// Flow-map walk along the schedule with an arbitrary field F(x; t, s).
Matrix flow_map_walk(const Interpolant& interp, const Matrix& z, const SampleSchedule& schedule,
                     const StepField& field);

// x <- nu^{-1} (A' x - A F(x; t_i, t_{i+1}, c)) for every step. Empty labels: null label.
Matrix few_step_sample(const FieldNet& net, std::span<const double> theta, const Interpolant& interp, const Matrix& z,
                       const SampleSchedule& schedule, const std::vector<int>& labels);

// Same walk with F = (1 - omega) F(.; null) + omega F(.; c) at every step.
Matrix post_cfg_sample(const FieldNet& net, std::span<const double> theta, const Interpolant& interp, const Matrix& z,
                       const SampleSchedule& schedule, const std::vector<int>& labels, double omega);

}  // namespace fmlab
