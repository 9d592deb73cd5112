#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fmlab/config.hpp"
#include "fmlab/diagnostics.hpp"
#include "fmlab/trainer.hpp"

namespace fmlab {

struct RunOutcome {
    ExperimentConfig cfg;
    RunResult result;
    EvalResult final_eval;   // on the evaluation parameters after the last completed step
    double seconds = 0.0;
};

// Trains one configuration. With a non-empty dir, writes config.txt,
// metrics.csv, checkpoint.fmlb, state.fmls, samples.csv and samples.svg there.
RunOutcome run_config(const ExperimentConfig& cfg, const std::string& dir = "");

// Few-step samples from the config's sample settings on noise drawn from
// `noise_seed`. Labels cycle through the classes unless sample.label is set;
// conditional nets use Post-CFG when sample.cfg_omega != 1. Returns labels used.
std::pair<Matrix, std::vector<int>> generate_samples(const ExperimentConfig& cfg, std::span<const double> theta,
                                                     std::uint64_t noise_seed);

// Memoizes runs by their full configuration (output directory excluded).
class RunCache {
public:
    const RunOutcome& get(const ExperimentConfig& cfg, const std::string& dir = "");
    std::size_t size() const { return runs_.size(); }

private:
    std::map<std::string, RunOutcome> runs_;
};

// Default toy configuration: ring mixture, trigonometric interpolant,
// B = 2048, 5000 steps, with the objective's own guide (oracle for ED and CD).
ExperimentConfig toy_config(Objective objective, std::size_t batch, std::uint64_t seed);

// Loss surface of a trained configuration around theta on one frozen batch
// drawn from `batch_seed`.
LandscapeReport probe_landscape(const ExperimentConfig& cfg, std::span<const double> theta, std::size_t resolution,
                                double radius, std::uint64_t batch_seed);

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

std::string format_criterion(const CriterionResult& r);

// Ordering checks on the toy problem. out_dir, when non-empty, receives the
// per-run artifacts and comparison plots.
CriterionResult check_ed_ordering(RunCache& cache, std::size_t seeds, const std::string& out_dir);   // ED vs DT
CriterionResult check_batch_effect(RunCache& cache, std::size_t seeds, const std::string& out_dir);  // CT, B
CriterionResult check_grad_norms(RunCache& cache, std::size_t seeds, const std::string& out_dir);    // iSD vs SD_SG
CriterionResult check_landscape(RunCache& cache, const std::string& out_dir);                        // iSD vs CT s=0
CriterionResult check_generation(RunCache& cache, std::size_t seeds, const std::string& out_dir);    // iSD vs DT

// figure: fig2, fig3, fig4, fig10 or landscape. Throws ConfigError for other ids.
std::vector<CriterionResult> repro(const std::string& figure, const std::string& out_dir, std::size_t seeds);

}  // namespace fmlab
