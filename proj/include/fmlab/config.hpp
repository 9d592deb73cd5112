#pragma once

#include <cstdint>
#include <string>

#include "fmlab/fieldnet.hpp"
#include "fmlab/interpolant.hpp"
#include "fmlab/mixture.hpp"
#include "fmlab/trainer.hpp"

namespace fmlab {

struct SampleSettings {
    std::size_t steps = 4;
    double t_min = kTimeMin;
    std::size_t count = 2048;
    double cfg_omega = 1.0;      // Post-CFG scale; 1 is plain conditional sampling
    int label = -1;              // -1: labels cycle through the classes (or null when unconditional)
};

// Everything one run needs. Text form: flat `section.key = value` lines,
// `#` comments, blank lines ignored. See README for the key list.
struct ExperimentConfig {
    std::string mixture = "ring:8:1.5:0.12";
    std::string interpolant = "trig";
    NetSpec net;
    TrainConfig train;
    SampleSettings sample;
    std::string out = "out";

    bool operator==(const ExperimentConfig&) const;
};

// Parses and validates. Errors name the line and the offending key.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::string& path);
// Canonical text; parse_config(format_config(c)) == c.
std::string format_config(const ExperimentConfig& cfg);

// Sets one key from its text value; used by the parser and by CLI overrides.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Cross-field checks (loss vs network, train ranges, mixture/interpolant specs).
void validate(const ExperimentConfig& cfg);

std::string weighting_name(Weighting w);
Weighting parse_weighting(const std::string& name);

// Network spec with the time scale fixed by the interpolant.
NetSpec resolved_net(const ExperimentConfig& cfg);

}  // namespace fmlab
