#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmlab/diagnostics.hpp"
#include "fmlab/fieldnet.hpp"
#include "fmlab/mixture.hpp"
#include "fmlab/objectives.hpp"

namespace fmlab {

struct TrainConfig {
    LossConfig loss;
    std::size_t batch_size = 2048;
    std::size_t steps = 5000;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double ema_decay = 0.999;
    TimeDist time_dist;
    bool fixed_s = false;        // s = 0 for every sample
    double t_min = kTimeMin;     // normalized lower clip for t
    std::uint64_t seed = 0;
    std::size_t eval_every = 250;
    std::size_t eval_samples = 2048;
    std::size_t sample_steps = 4;
};

// Throws ConfigError on invalid settings.
void validate(const TrainConfig& cfg, const NetSpec& spec);

struct TrainState {
    std::vector<double> theta;
    std::vector<double> theta_ema;
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
    Rng rng;

    bool operator==(const TrainState&) const = default;
};

TrainState init_state(const FieldNet& net, const TrainConfig& cfg);

// Binary "FMLS" state: every field above, including the RNG engine state.
std::vector<std::uint8_t> encode_state(const TrainState& state);
TrainState decode_state(std::span<const std::uint8_t> bytes);
void write_state(const std::string& path, const TrainState& state);
TrainState read_state(const std::string& path);

struct MetricsRecord {
    std::uint64_t step = 0;
    double loss_total = 0.0;
    double loss_cfm = 0.0;
    double loss_sd = 0.0;
    double grad_norm = 0.0;
    std::optional<double> ed_proxy;
    std::optional<double> dist_energy;
};

// Draws a training batch from the state's RNG: data, noise, ordered times,
// label dropout, and omega for iSD-C.
LossBatch draw_batch(TrainState& state, const FieldNet& net, const GaussianMixture& mixture,
                     const Interpolant& interp, const TrainConfig& cfg);

// One loss evaluation, Adam update and EMA blend. Throws NumericError on a
// non-finite loss or gradient, leaving the state untouched.
MetricsRecord train_step(TrainState& state, const FieldNet& net, const GaussianMixture& mixture,
                         const Interpolant& interp, const TrainConfig& cfg);

// Parameters used for evaluation: EMA when ema_decay > 0.
std::span<const double> eval_params(const TrainState& state, const TrainConfig& cfg);

struct EvalResult {
    double ed_proxy = 0.0;
    double dist_energy = 0.0;
};

// ed_proxy on fresh draws seeded by (seed, step); energy distance of few-step
// samples from held-out noise to held-out data (both fixed by the seed).
EvalResult evaluate(const FieldNet& net, std::span<const double> theta, const GaussianMixture& mixture,
                    const Interpolant& interp, const TrainConfig& cfg, std::uint64_t step);

struct RunResult {
    std::vector<MetricsRecord> history;
    TrainState state;
    std::optional<std::string> failure;   // diagnostic when a non-finite value stopped the run
};

// Trains from `start` (or a fresh init) up to cfg.steps, evaluating every
// eval_every steps and at the final step. Writes the metrics CSV when a path is given.
RunResult run_experiment(const FieldNet& net, const GaussianMixture& mixture, const Interpolant& interp,
                         const TrainConfig& cfg, const std::string& csv_path = "",
                         std::optional<TrainState> start = std::nullopt);

extern const char* const kMetricsHeader;
std::string format_metrics_row(const MetricsRecord& r);

}  // namespace fmlab
