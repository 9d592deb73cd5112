#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmlab/fieldnet.hpp"
#include "fmlab/interpolant.hpp"
#include "fmlab/mixture.hpp"

namespace fmlab {

enum class Objective { CFM, ED, DT, CT, CD, SD, SD_SG, SDR, iSD, iSD_T, iSD_U, iSD_C };

// Velocity that steers the residual or target: v_t(x_t|x), analytic v*, the
// model's own F(x; t, t), the mini-batch estimate, or a guided self velocity.
enum class Guide { Conditional, OracleMarginal, SelfMarginal, BatchMarginal, PreCFG };

enum class Weighting { None, Cosine, Adaptive };

struct JvpMode {
    bool exact = true;
    double eps = 0.005;
};

struct LossConfig {
    Objective objective = Objective::iSD;
    std::optional<Guide> guide;  // unset: the objective's own guide
    JvpMode jvp;
    Weighting weighting = Weighting::None;
    double adaptive_p = 1.0;
    double adaptive_eta = 0.01;
    double omega = 1.0;          // Pre-CFG scale (iSD-T, iSD-U); upper end of the sampled range for iSD-C
    double label_dropout = 0.1;
    double lambda_cfm = 1.0;
    double lambda_sd = 1.0;
    bool ct_weight = false;      // multiply target losses by A nu^-2
};

std::string objective_name(Objective o);
Objective parse_objective(const std::string& name);
std::string guide_name(Guide g);
Guide parse_guide(const std::string& name);

// Guide used by the objective when the config leaves it unset.
Guide default_guide(Objective o);

// Checks the config against the objective and the network (labels, omega channel).
void validate(const LossConfig& cfg, const NetSpec& spec);

// Per-row training inputs. Times are in the interpolant's own domain with t >= s.
struct LossBatch {
    Matrix x;                    // data
    Matrix z;                    // noise
    std::vector<double> t;
    std::vector<double> s;
    std::vector<int> labels;     // after dropout; empty for unconditional nets
    std::vector<double> omega;   // iSD-C only
    std::size_t size() const { return x.rows(); }
};

struct LossValue {
    double total = 0.0;  // weighted objective that is differentiated
    double cfm = 0.0;    // mean unweighted flow-matching term (0 if absent)
    double sd = 0.0;     // mean unweighted residual / target term (0 if absent)
};

// Evaluates the configured loss. When grad is non-empty the gradient of
// `total` is accumulated into it. `oracle` is required by OracleMarginal guides.
LossValue evaluate_loss(const FieldNet& net, std::span<const double> theta, const Interpolant& interp,
                        const LossConfig& cfg, const LossBatch& batch, const GaussianMixture* oracle,
                        std::span<double> grad);

// ---- row-level formulas ----

// nu^{-1} (A' x_t - A F)
void flow_map(const Interpolant& interp, std::span<const double> x_t, double t, double s, std::span<const double> F,
              std::span<double> out);
void flow_map(const BridgeCoeffs& c, double nu, std::span<const double> x_t, std::span<const double> F,
              std::span<double> out);

// nu^{-1} (A'' x + A' (v - F) - A dF/dt)
void eulerian_residual(const BridgeCoeffs& c, double nu, std::span<const double> x_t, std::span<const double> v,
                       std::span<const double> F, std::span<const double> dFdt, std::span<double> out);

// F + A'' x + A' (v - F) - A dF/dt, arranged so that A' = 1, A'' = 0 gives v - A dF/dt exactly.
void sdr_target(const BridgeCoeffs& c, std::span<const double> x_t, std::span<const double> v,
                std::span<const double> F, std::span<const double> dFdt, std::span<double> out);

// omega v + (1 - omega) F_null; omega = 1 returns v exactly.
void pre_cfg_velocity(std::span<const double> F_null, std::span<const double> v, double omega,
                      std::span<double> out);

double loss_weight(Weighting w, double t_normalized, double detached_loss, double p, double eta);

// ---- network-level operations ----

// Residual rows of the Eulerian equation for the field at q under guide velocity v (exact JVP).
Matrix eulerian_residual(const FieldNet& net, std::span<const double> theta, const Interpolant& interp,
                         const FieldQuery& q, const Matrix& v);

// Detached F_tgt for the field at q with guide velocity v.
Matrix sdr_target(const FieldNet& net, std::span<const double> theta, const Interpolant& interp,
                  const FieldQuery& q, const Matrix& v, const JvpMode& jvp);

// omega v + (1 - omega) F(x_t; t, t, null) with the null pass detached.
Matrix pre_cfg_velocity(const FieldNet& net, std::span<const double> theta, const FieldQuery& q, const Matrix& v,
                        double omega);

}  // namespace fmlab
