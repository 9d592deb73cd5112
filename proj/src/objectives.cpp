#include "fmlab/objectives.hpp"

#include <cmath>
#include <numbers>

#include "fmlab/autodiff.hpp"
#include "fmlab/error.hpp"

namespace fmlab {

namespace {

struct NamedObjective {
    Objective o;
    const char* name;
};

constexpr NamedObjective kObjectives[] = {
    {Objective::CFM, "CFM"}, {Objective::ED, "ED"},       {Objective::DT, "DT"},       {Objective::CT, "CT"},
    {Objective::CD, "CD"},   {Objective::SD, "SD"},       {Objective::SD_SG, "SD_SG"}, {Objective::SDR, "SDR"},
    {Objective::iSD, "iSD"}, {Objective::iSD_T, "iSD_T"}, {Objective::iSD_U, "iSD_U"}, {Objective::iSD_C, "iSD_C"},
};

struct NamedGuide {
    Guide g;
    const char* name;
};

constexpr NamedGuide kGuides[] = {
    {Guide::Conditional, "conditional"}, {Guide::OracleMarginal, "oracle"}, {Guide::SelfMarginal, "self"},
    {Guide::BatchMarginal, "batch"},     {Guide::PreCFG, "precfg"},
};

bool residual_objective(Objective o) {
    return o == Objective::ED || o == Objective::DT || o == Objective::SD || o == Objective::SD_SG;
}

bool target_objective(Objective o) {
    return o == Objective::CT || o == Objective::CD || o == Objective::SDR || o == Objective::iSD ||
           o == Objective::iSD_T || o == Objective::iSD_U || o == Objective::iSD_C;
}

bool has_cfm_term(Objective o) {
    return o == Objective::CFM || o == Objective::SD || o == Objective::SD_SG || o == Objective::iSD ||
           o == Objective::iSD_T || o == Objective::iSD_U || o == Objective::iSD_C;
}

bool needs_labels(Objective o) { return o == Objective::iSD_T || o == Objective::iSD_U || o == Objective::iSD_C; }

FieldQuery make_query(const Matrix& x, const std::vector<double>& t, const std::vector<double>& s,
                      const std::vector<int>& labels, const std::vector<double>& omega) {
    return FieldQuery{x, t, s, labels, omega};
}

std::vector<int> null_labels(const LossBatch& b) {
    return b.labels.empty() ? std::vector<int>{} : std::vector<int>(b.size(), kNullLabel);
}

double sq_norm_diff(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc;
}

double sq_norm(std::span<const double> a) {
    double acc = 0.0;
    for (double v : a) acc += v * v;
    return acc;
}

Matrix oracle_velocity(const GaussianMixture* oracle, const Interpolant& interp, const Matrix& xt,
                       const std::vector<double>& t, const std::vector<int>& labels) {
    if (oracle == nullptr) throw ConfigError("oracle guide requires the data mixture");
    Matrix v(xt.rows(), xt.cols());
    std::vector<GaussianMixture> parts;
    if (!labels.empty()) {
        for (std::size_t k = 0; k < oracle->components(); ++k) parts.push_back(oracle->component(k));
    }
    for (std::size_t i = 0; i < xt.rows(); ++i) {
        const bool conditioned = !labels.empty() && labels[i] != kNullLabel;
        const GaussianMixture& m = conditioned ? parts.at(static_cast<std::size_t>(labels[i])) : *oracle;
        const auto row = marginal_velocity(m, interp, xt.row(i), t[i]);
        std::copy(row.begin(), row.end(), v.row(i).begin());
    }
    return v;
}

Matrix batch_velocity(const Interpolant& interp, const Matrix& data, const Matrix& xt, const std::vector<double>& t) {
    Matrix v(xt.rows(), xt.cols());
    for (std::size_t i = 0; i < xt.rows(); ++i) {
        const auto row = batch_marginal_velocity(interp, data, xt.row(i), t[i]);
        std::copy(row.begin(), row.end(), v.row(i).begin());
    }
    return v;
}

// (1 - w_i) F_null + w_i F_cond row by row.
Matrix blend(const Matrix& f_null, const Matrix& f_cond, std::span<const double> w) {
    Matrix out(f_cond.rows(), f_cond.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) pre_cfg_velocity(f_null.row(i), f_cond.row(i), w[i], out.row(i));
    return out;
}

Tangent make_tangent(const Matrix& dx, double dt, double ds) {
    Tangent tg;
    tg.dx = dx;
    tg.dt.assign(dx.rows(), dt);
    tg.ds.assign(dx.rows(), ds);
    return tg;
}

Matrix approx_jvp(const FieldNet& net, std::span<const double> theta, const FieldQuery& q, const Matrix& v,
                  double eps) {
    return net.jvp_approx(theta, q, v, eps);
}

}  // namespace

std::string objective_name(Objective o) {
    for (const auto& e : kObjectives) {
        if (e.o == o) return e.name;
    }
    return "?";
}

Objective parse_objective(const std::string& name) {
    for (const auto& e : kObjectives) {
        if (name == e.name) return e.o;
    }
    throw ConfigError("unknown objective '" + name + "'");
}

std::string guide_name(Guide g) {
    for (const auto& e : kGuides) {
        if (e.g == g) return e.name;
    }
    return "?";
}

Guide parse_guide(const std::string& name) {
    for (const auto& e : kGuides) {
        if (name == e.name) return e.g;
    }
    throw ConfigError("unknown guiding velocity '" + name + "'");
}

Guide default_guide(Objective o) {
    switch (o) {
        case Objective::ED:
        case Objective::CD:
            return Guide::OracleMarginal;
        case Objective::CFM:
        case Objective::DT:
        case Objective::CT:
            return Guide::Conditional;
        case Objective::iSD_U:
        case Objective::iSD_C:
            return Guide::PreCFG;
        default:
            return Guide::SelfMarginal;
    }
}

void validate(const LossConfig& cfg, const NetSpec& spec) {
    const Objective o = cfg.objective;
    const Guide g = cfg.guide.value_or(default_guide(o));
    if (residual_objective(o) && !cfg.jvp.exact) {
        throw ConfigError(objective_name(o) + " differentiates through the JVP and needs jvp=exact");
    }
    if (!cfg.jvp.exact && !(cfg.jvp.eps > 0.0)) throw ConfigError("JVP approximation step must be positive");
    if (!(cfg.omega >= 1.0)) throw ConfigError("guidance scale omega must be >= 1");
    if (!(cfg.label_dropout >= 0.0 && cfg.label_dropout <= 1.0)) throw ConfigError("label_dropout must lie in [0, 1]");
    if (!(cfg.adaptive_eta > 0.0)) throw ConfigError("adaptive weighting eta must be positive");
    if ((needs_labels(o) || g == Guide::PreCFG) && spec.num_classes == 0) {
        throw ConfigError(objective_name(o) + " with guide " + guide_name(g) + " needs a class-conditional network");
    }
    if (o == Objective::iSD_C && !spec.omega_channel) throw ConfigError("iSD_C needs a network with an omega channel");
    if (o != Objective::iSD_C && spec.omega_channel) {
        throw ConfigError("omega channel is only used by iSD_C");
    }
    if (o == Objective::SD || o == Objective::SD_SG) {
        if (g != Guide::SelfMarginal) throw ConfigError(objective_name(o) + " is guided by the model itself");
    }
    if ((o == Objective::ED || o == Objective::DT) && (g == Guide::SelfMarginal || g == Guide::PreCFG)) {
        throw ConfigError(objective_name(o) + " cannot use a self guide; use SD or SDR");
    }
    if (o == Objective::CFM && cfg.guide && g != Guide::Conditional) {
        throw ConfigError("CFM regresses on the conditional velocity only");
    }
}

void flow_map(const BridgeCoeffs& c, double nu, std::span<const double> x_t, std::span<const double> F,
              std::span<double> out) {
    if (x_t.size() != F.size() || out.size() != F.size()) throw DimensionError("flow_map: dimension mismatch");
    if (c.A == 0.0) {
        std::copy(x_t.begin(), x_t.end(), out.begin());
        if (c.A1 == nu) return;
    }
    for (std::size_t i = 0; i < F.size(); ++i) out[i] = (c.A1 * x_t[i] - c.A * F[i]) / nu;
}

void flow_map(const Interpolant& interp, std::span<const double> x_t, double t, double s, std::span<const double> F,
              std::span<double> out) {
    flow_map(bridge(interp, t, s), interp.nu_value(), x_t, F, out);
}

void eulerian_residual(const BridgeCoeffs& c, double nu, std::span<const double> x_t, std::span<const double> v,
                       std::span<const double> F, std::span<const double> dFdt, std::span<double> out) {
    for (std::size_t i = 0; i < F.size(); ++i) out[i] = (c.A2 * x_t[i] + c.A1 * (v[i] - F[i]) - c.A * dFdt[i]) / nu;
}

void sdr_target(const BridgeCoeffs& c, std::span<const double> x_t, std::span<const double> v,
                std::span<const double> F, std::span<const double> dFdt, std::span<double> out) {
    for (std::size_t i = 0; i < F.size(); ++i) {
        out[i] = c.A1 * v[i] + (1.0 - c.A1) * F[i] + c.A2 * x_t[i] - c.A * dFdt[i];
    }
}

void pre_cfg_velocity(std::span<const double> F_null, std::span<const double> v, double omega,
                      std::span<double> out) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = omega * v[i] + (1.0 - omega) * F_null[i];
}

double loss_weight(Weighting w, double t_normalized, double detached_loss, double p, double eta) {
    switch (w) {
        case Weighting::None:
            return 1.0;
        case Weighting::Cosine:
            return std::cos(std::numbers::pi * t_normalized / 2.0);
        case Weighting::Adaptive:
            return std::pow(detached_loss + eta, -p);
    }
    return 1.0;
}

Matrix eulerian_residual(const FieldNet& net, std::span<const double> theta, const Interpolant& interp,
                         const FieldQuery& q, const Matrix& v) {
    require_same_shape(q.x, v, "eulerian_residual");
    const Tangent tg = make_tangent(v, 1.0, 0.0);
    const Evaluation ev = net.evaluate(theta, q, &tg);
    Matrix r(v.rows(), v.cols());
    for (std::size_t i = 0; i < v.rows(); ++i) {
        eulerian_residual(bridge(interp, q.t[i], q.s[i]), interp.nu_value(), q.x.row(i), v.row(i), ev.value.row(i),
                          ev.tangent.row(i), r.row(i));
    }
    return r;
}

Matrix sdr_target(const FieldNet& net, std::span<const double> theta, const Interpolant& interp, const FieldQuery& q,
                  const Matrix& v, const JvpMode& jvp) {
    require_same_shape(q.x, v, "sdr_target");
    Matrix value;
    Matrix dfdt;
    if (jvp.exact) {
        const Tangent tg = make_tangent(v, 1.0, 0.0);
        Evaluation ev = net.evaluate(theta, q, &tg);
        value = std::move(ev.value);
        dfdt = std::move(ev.tangent);
    } else {
        value = net.apply(theta, q);
        dfdt = approx_jvp(net, theta, q, v, jvp.eps);
    }
    Matrix out(v.rows(), v.cols());
    for (std::size_t i = 0; i < v.rows(); ++i) {
        sdr_target(bridge(interp, q.t[i], q.s[i]), q.x.row(i), v.row(i), value.row(i), dfdt.row(i), out.row(i));
    }
    return out;
}

Matrix pre_cfg_velocity(const FieldNet& net, std::span<const double> theta, const FieldQuery& q, const Matrix& v,
                        double omega) {
    require_same_shape(q.x, v, "pre_cfg_velocity");
    if (!(omega >= 1.0)) throw ConfigError("guidance scale omega must be >= 1");
    FieldQuery nq = q;
    nq.labels.assign(q.size(), kNullLabel);
    nq.s = q.t;
    const Matrix f_null = net.apply(theta, nq);
    Matrix out(v.rows(), v.cols());
    for (std::size_t i = 0; i < v.rows(); ++i) pre_cfg_velocity(f_null.row(i), v.row(i), omega, out.row(i));
    return out;
}

LossValue evaluate_loss(const FieldNet& net, std::span<const double> theta, const Interpolant& interp,
                        const LossConfig& cfg, const LossBatch& batch, const GaussianMixture* oracle,
                        std::span<double> grad) {
    validate(cfg, net.spec());
    const std::size_t n = batch.size();
    const std::size_t d = batch.x.cols();
    if (n == 0) throw DimensionError("empty loss batch");
    require_same_shape(batch.x, batch.z, "loss batch");
    if (batch.t.size() != n || batch.s.size() != n) throw DimensionError("loss batch needs (t, s) per row");
    if (!batch.labels.empty() && batch.labels.size() != n) throw DimensionError("loss batch labels must match rows");
    const Objective o = cfg.objective;
    const Guide guide = cfg.guide.value_or(default_guide(o));
    if (o == Objective::iSD_C && batch.omega.size() != n) throw DimensionError("iSD_C needs a sampled omega per row");
    const double nu = interp.nu_value();

    Matrix xt(n, d);
    Matrix vcond(n, d);
    std::vector<BridgeCoeffs> coeffs(n);
    for (std::size_t i = 0; i < n; ++i) {
        interpolate(interp, batch.x.row(i), batch.z.row(i), batch.t[i], xt.row(i));
        conditional_velocity(interp, batch.x.row(i), batch.z.row(i), batch.t[i], vcond.row(i));
        coeffs[i] = bridge(interp, batch.t[i], batch.s[i]);
    }
    const std::vector<double> ones(o == Objective::iSD_C ? n : 0, 1.0);
    const std::vector<double>& ts_omega = o == Objective::iSD_C ? batch.omega : ones;
    const FieldQuery q_tt = make_query(xt, batch.t, batch.t, batch.labels, ones);
    const FieldQuery q_ts = make_query(xt, batch.t, batch.s, batch.labels, ts_omega);

    PassRecorder rec(net, theta);
    std::vector<double> cfm(n, 0.0), sd(n, 0.0), sd_factor(n, 1.0);
    if (cfg.ct_weight) {
        for (std::size_t i = 0; i < n; ++i) sd_factor[i] = coeffs[i].A / (nu * nu);
    }

    // Flow-matching pass F(x_t; t, t, c); its detached value doubles as the self guide.
    std::optional<std::size_t> p_cfm;
    Matrix cfm_target;
    if (has_cfm_term(o)) {
        p_cfm = rec.track(q_tt);
        cfm_target = vcond;
        if (o == Objective::iSD_T && !batch.labels.empty()) {
            FieldQuery nq = q_tt;
            nq.labels = null_labels(batch);
            const Matrix f_null = net.apply(theta, nq);
            for (std::size_t i = 0; i < n; ++i) {
                if (batch.labels[i] == kNullLabel) continue;
                pre_cfg_velocity(f_null.row(i), vcond.row(i), cfg.omega, cfm_target.row(i));
            }
        }
        const Matrix& f = rec.result(*p_cfm).value;
        for (std::size_t i = 0; i < n; ++i) cfm[i] = sq_norm_diff(f.row(i), cfm_target.row(i));
    }

    const auto self_velocity = [&]() -> Matrix {
        if (p_cfm) return rec.result(*p_cfm).value;
        return net.apply(theta, q_tt);
    };

    Matrix v;
    if (o != Objective::CFM) {
        switch (guide) {
            case Guide::Conditional:
                v = vcond;
                break;
            case Guide::OracleMarginal:
                v = oracle_velocity(oracle, interp, xt, batch.t, batch.labels);
                break;
            case Guide::BatchMarginal:
                v = batch_velocity(interp, batch.x, xt, batch.t);
                break;
            case Guide::SelfMarginal:
                v = self_velocity();
                break;
            case Guide::PreCFG: {
                const Matrix f_cond = self_velocity();
                FieldQuery nq = q_tt;
                nq.labels = null_labels(batch);
                const Matrix f_null = net.apply(theta, nq);
                const std::vector<double> w =
                    o == Objective::iSD_C ? batch.omega : std::vector<double>(n, cfg.omega);
                v = blend(f_null, f_cond, w);
                break;
            }
        }
    }

    std::optional<std::size_t> p_main;
    Matrix residual;
    Matrix target;
    if (residual_objective(o)) {
        residual.resize(n, d);
        if (o == Objective::SD_SG) {
            // d/dt F keeps its gradient; the spatial part J_x F v is a constant.
            const Tangent time_only = make_tangent(Matrix(n, d), 1.0, 0.0);
            p_main = rec.track(q_ts, &time_only);
            const Tangent space_only = make_tangent(v, 0.0, 0.0);
            const Matrix jv = net.jvp_exact(theta, q_ts, space_only);
            const Evaluation& ev = rec.result(*p_main);
            Matrix total(n, d);
            for (std::size_t i = 0; i < n * d; ++i) total.data()[i] = ev.tangent.data()[i] + jv.data()[i];
            for (std::size_t i = 0; i < n; ++i) {
                eulerian_residual(coeffs[i], nu, xt.row(i), v.row(i), ev.value.row(i), total.row(i), residual.row(i));
            }
        } else {
            const Tangent tg = make_tangent(v, 1.0, 0.0);
            p_main = rec.track(q_ts, &tg);
            const Evaluation& ev = rec.result(*p_main);
            for (std::size_t i = 0; i < n; ++i) {
                eulerian_residual(coeffs[i], nu, xt.row(i), v.row(i), ev.value.row(i), ev.tangent.row(i),
                                  residual.row(i));
            }
        }
        for (std::size_t i = 0; i < n; ++i) sd[i] = sq_norm(residual.row(i));
    } else if (target_objective(o)) {
        target.resize(n, d);
        Matrix dfdt;
        if (cfg.jvp.exact) {
            const Tangent tg = make_tangent(v, 1.0, 0.0);
            p_main = rec.track(q_ts, &tg);
            dfdt = rec.result(*p_main).tangent;
        } else {
            p_main = rec.track(q_ts);
            dfdt = approx_jvp(net, theta, q_ts, v, cfg.jvp.eps);
        }
        const Matrix& f = rec.result(*p_main).value;
        for (std::size_t i = 0; i < n; ++i) {
            sdr_target(coeffs[i], xt.row(i), v.row(i), f.row(i), dfdt.row(i), target.row(i));
            sd[i] = sq_norm_diff(f.row(i), target.row(i));
        }
    }

    LossValue out;
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double raw = cfg.lambda_cfm * cfm[i] + cfg.lambda_sd * sd_factor[i] * sd[i];
        w[i] = loss_weight(cfg.weighting, interp.to_normalized(batch.t[i]), raw, cfg.adaptive_p, cfg.adaptive_eta);
        out.total += w[i] * raw;
        out.cfm += cfm[i];
        out.sd += sd[i];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.total *= inv_n;
    out.cfm *= inv_n;
    out.sd *= inv_n;

    if (grad.empty()) return out;
    if (grad.size() != net.num_params()) throw DimensionError("gradient buffer size does not match network");

    if (p_cfm) {
        const Matrix& f = rec.result(*p_cfm).value;
        Matrix& adj = rec.value_adjoint(*p_cfm);
        for (std::size_t i = 0; i < n; ++i) {
            const double scale = 2.0 * inv_n * w[i] * cfg.lambda_cfm;
            for (std::size_t k = 0; k < d; ++k) adj(i, k) += scale * (f(i, k) - cfm_target(i, k));
        }
    }
    if (p_main && residual_objective(o)) {
        Matrix& adj_f = rec.value_adjoint(*p_main);
        Matrix& adj_df = rec.tangent_adjoint(*p_main);
        for (std::size_t i = 0; i < n; ++i) {
            const double scale = 2.0 * inv_n * w[i] * cfg.lambda_sd * sd_factor[i] / nu;
            for (std::size_t k = 0; k < d; ++k) {
                adj_f(i, k) -= scale * coeffs[i].A1 * residual(i, k);
                adj_df(i, k) -= scale * coeffs[i].A * residual(i, k);
            }
        }
    } else if (p_main) {
        const Matrix& f = rec.result(*p_main).value;
        Matrix& adj = rec.value_adjoint(*p_main);
        for (std::size_t i = 0; i < n; ++i) {
            const double scale = 2.0 * inv_n * w[i] * cfg.lambda_sd * sd_factor[i];
            for (std::size_t k = 0; k < d; ++k) adj(i, k) += scale * (f(i, k) - target(i, k));
        }
    }
    rec.accumulate(grad);
    return out;
}

}  // namespace fmlab
