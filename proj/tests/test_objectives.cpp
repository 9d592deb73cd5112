#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "fmlab/error.hpp"
#include "fmlab/objectives.hpp"

using namespace fmlab;

namespace {

NetSpec tiny_spec(std::size_t classes = 0, bool omega = false) {
    NetSpec s;
    s.hidden = 10;
    s.depth = 3;
    s.fourier = 2;
    s.num_classes = classes;
    s.embed_dim = 3;
    s.omega_channel = omega;
    return s;
}

LossBatch random_batch(Rng& rng, const Interpolant& interp, std::size_t n, std::size_t classes, bool omega) {
    const auto mix = GaussianMixture::default_ring();
    LossBatch b;
    auto data = sample_data(mix, rng, n);
    b.x = data.x;
    b.z.resize(n, 2);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (auto& v : b.z.flat()) v = nd(rng);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = u(rng), c = u(rng);
        b.t.push_back(interp.to_domain(std::max(a, c)));
        b.s.push_back(interp.to_domain(std::min(a, c)));
        if (classes > 0) b.labels.push_back(i % 4 == 0 ? kNullLabel : data.labels[i] % static_cast<int>(classes));
        if (omega) b.omega.push_back(1.0 + 2.0 * u(rng));
    }
    return b;
}

Matrix xt_of(const Interpolant& interp, const LossBatch& b) {
    Matrix xt(b.size(), 2);
    for (std::size_t i = 0; i < b.size(); ++i) interpolate(interp, b.x.row(i), b.z.row(i), b.t[i], xt.row(i));
    return xt;
}

Matrix vcond_of(const Interpolant& interp, const LossBatch& b) {
    Matrix v(b.size(), 2);
    for (std::size_t i = 0; i < b.size(); ++i) conditional_velocity(interp, b.x.row(i), b.z.row(i), b.t[i], v.row(i));
    return v;
}

double mean_sq(const Matrix& a, const Matrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    return acc / static_cast<double>(a.rows());
}

// Central-difference gradient of a scalar function of theta.
std::vector<double> fd_grad(const std::function<double(std::span<const double>)>& f, std::vector<double> theta) {
    std::vector<double> g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double h = 1e-5 * (1.0 + std::abs(theta[i]));
        const double keep = theta[i];
        theta[i] = keep + h;
        const double fp = f(theta);
        theta[i] = keep - h;
        const double fm = f(theta);
        theta[i] = keep;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("flow map boundary and closed forms") {
    Rng rng(1);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<Interpolant> interps{Interpolant::linear(), Interpolant::trigonometric(),
                                           Interpolant::power(0.7)};
    for (int i = 0; i < 1000; ++i) {
        const auto& it = interps[static_cast<std::size_t>(i) % interps.size()];
        const double t = it.to_domain(u(rng));
        std::vector<double> x{nd(rng) * 10, nd(rng)}, F{nd(rng) * 1e3, nd(rng)}, out(2);
        flow_map(it, x, t, t, F, out);
        CHECK(out == x);
    }
    std::vector<double> x{1.5, -2.0}, F{0.25, 4.0}, out(2);
    flow_map(Interpolant::linear(), x, 0.8, 0.3, F, out);
    CHECK(out[0] == 1.5 - 0.5 * 0.25);
    CHECK(out[1] == -2.0 - 0.5 * 4.0);
    flow_map(Interpolant::trigonometric(), x, std::numbers::pi / 2, 0.0, F, out);
    CHECK(out[0] == doctest::Approx(-0.25).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(-4.0).epsilon(1e-15));
}

TEST_CASE("F_tgt under the linear interpolant is the MeanFlow target") {
    Rng rng(2);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto lin = Interpolant::linear();
    for (int i = 0; i < 1000; ++i) {
        const double a = u(rng), b = u(rng);
        const double t = std::max(a, b), s = std::min(a, b);
        std::vector<double> x{nd(rng), nd(rng)}, v{nd(rng), nd(rng)}, F{nd(rng), nd(rng)}, dF{nd(rng), nd(rng)};
        std::vector<double> out(2);
        sdr_target(bridge(lin, t, s), x, v, F, dF, out);
        for (int k = 0; k < 2; ++k) CHECK(out[k] == v[k] - (t - s) * dF[k]);
    }
    std::vector<double> x{0.3}, F{2.0}, v{1.0}, dF{2.0}, out(1);
    sdr_target(bridge(lin, 0.75, 0.5), x, v, F, dF, out);
    CHECK(out[0] == 0.5);
    sdr_target(bridge(lin, 0.6, 0.6), x, v, F, dF, out);
    CHECK(out[0] == 1.0);
}

TEST_CASE("Eulerian residual special cases") {
    const auto lin = Interpolant::linear();
    std::vector<double> x{0.7, -0.2}, v{1.0, 2.0}, F{0.5, -1.0}, zero{0.0, 0.0}, out(2);
    eulerian_residual(bridge(lin, 0.9, 0.1), 1.0, x, v, F, zero, out);
    CHECK(out == std::vector<double>{0.5, 3.0});
    const auto trig = Interpolant::trigonometric();
    std::vector<double> dF{3.0, 4.0};
    eulerian_residual(bridge(trig, 0.4, 0.4), 1.0, x, v, F, dF, out);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(3.0));
}

TEST_CASE("Pre-CFG velocity and weights") {
    std::vector<double> fn{0.1, -3.0}, v{0.3, 0.7}, out(2);
    pre_cfg_velocity(fn, v, 1.0, out);
    CHECK(out == v);
    std::vector<double> zero{0.0, 0.0};
    pre_cfg_velocity(zero, v, 5.0, out);
    CHECK(out == std::vector<double>{5.0 * 0.3, 5.0 * 0.7});
    CHECK(loss_weight(Weighting::Cosine, 0.0, 123.0, 1.0, 0.01) == 1.0);
    CHECK(loss_weight(Weighting::Cosine, 1.0, 0.0, 1.0, 0.01) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(loss_weight(Weighting::Adaptive, 0.3, 0.99, 1.0, 0.01) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(loss_weight(Weighting::None, 0.3, 5.0, 1.0, 0.01) == 1.0);
}

TEST_CASE("config validation") {
    LossConfig c;
    c.objective = Objective::ED;
    c.jvp.exact = false;
    CHECK_THROWS_AS(validate(c, tiny_spec()), ConfigError);
    c = {};
    c.objective = Objective::iSD_T;
    CHECK_THROWS_AS(validate(c, tiny_spec()), ConfigError);
    CHECK_NOTHROW(validate(c, tiny_spec(3)));
    c.omega = 0.5;
    CHECK_THROWS_AS(validate(c, tiny_spec(3)), ConfigError);
    c = {};
    c.objective = Objective::iSD_C;
    CHECK_THROWS_AS(validate(c, tiny_spec(3)), ConfigError);
    CHECK_NOTHROW(validate(c, tiny_spec(3, true)));
    CHECK(parse_objective("iSD_T") == Objective::iSD_T);
    CHECK_THROWS_AS(parse_objective("LCM"), ConfigError);
    CHECK(parse_guide(guide_name(Guide::BatchMarginal)) == Guide::BatchMarginal);
}

TEST_CASE("CFM loss at zero output is the mean squared conditional velocity") {
    Rng rng(3);
    const auto lin = Interpolant::linear();
    const FieldNet net(tiny_spec());
    const auto theta = net.init_params(rng);
    const auto b = random_batch(rng, lin, 32, 0, false);
    LossConfig c;
    c.objective = Objective::CFM;
    const auto val = evaluate_loss(net, theta, lin, c, b, nullptr, {});
    CHECK(val.total == doctest::Approx(mean_sq(vcond_of(lin, b), Matrix(32, 2))).epsilon(1e-14));
    CHECK(val.cfm == val.total);
}

TEST_CASE("CFM minimum equals the expected conditional variance") {
    // Standard Gaussian data, linear path: Var[v | x_t] = 2 - (2t-1)^2 / ((1-t)^2 + t^2).
    const auto lin = Interpolant::linear();
    const GaussianMixture g({1.0}, Matrix(1, 1, 0.0), Matrix(1, 1, 1.0));
    Rng rng(4);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 200000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = 0.01 + 0.98 * u(rng);
        const double x = nd(rng), z = nd(rng);
        const double xt = (1 - t) * x + t * z;
        const double vs = marginal_velocity(g, lin, std::vector<double>{xt}, t)[0];
        acc += (vs - (z - x)) * (vs - (z - x));
    }
    double quad = 0.0;
    const int m = 20000;
    for (int i = 0; i < m; ++i) {
        const double t = 0.01 + 0.98 * (i + 0.5) / m;
        quad += 2.0 - (2 * t - 1) * (2 * t - 1) / ((1 - t) * (1 - t) + t * t);
    }
    quad /= m;
    CHECK(acc / n == doctest::Approx(quad).epsilon(0.01));
}

TEST_CASE("loss gradients match finite differences with stop-gradient semantics") {
    const std::vector<Interpolant> interps{Interpolant::linear(), Interpolant::trigonometric(),
                                           Interpolant::power(0.7)};
    const auto mix = GaussianMixture::default_ring();
    Rng rng(5);
    const std::vector<Objective> all{Objective::CFM, Objective::ED,  Objective::DT,    Objective::CT,
                                     Objective::CD,  Objective::SD,  Objective::SD_SG, Objective::SDR,
                                     Objective::iSD, Objective::iSD_T, Objective::iSD_U, Objective::iSD_C};
    int idx = 0;
    for (Objective o : all) {
        for (bool approx : {false, true}) {
            const bool residual = o == Objective::ED || o == Objective::DT || o == Objective::SD || o == Objective::SD_SG;
            if (approx && (residual || o == Objective::CFM)) continue;
            const auto& interp = interps[static_cast<std::size_t>(idx++) % interps.size()];
            const bool labelled = o == Objective::iSD_T || o == Objective::iSD_U || o == Objective::iSD_C;
            const std::size_t classes = labelled ? 8 : 0;
            const bool omega = o == Objective::iSD_C;
            NetSpec spec = tiny_spec(classes, omega);
            const FieldNet net(spec);
            const auto theta = net.init_params(rng, false);
            const auto b = random_batch(rng, interp, 6, classes, omega);
            LossConfig c;
            c.objective = o;
            c.jvp.exact = !approx;
            c.omega = 2.5;
            c.ct_weight = o == Objective::CT;
            c.weighting = idx % 2 == 0 ? Weighting::Cosine : Weighting::Adaptive;
            CAPTURE(objective_name(o));
            CAPTURE(approx);
            CAPTURE(interp.name());

            std::vector<double> grad(net.num_params(), 0.0);
            evaluate_loss(net, theta, interp, c, b, &mix, grad);

            // Reference: every detached quantity frozen at theta, then plain finite differences.
            const Matrix xt = xt_of(interp, b);
            const Matrix vc = vcond_of(interp, b);
            FieldQuery qtt{xt, b.t, b.t, b.labels, omega ? std::vector<double>(6, 1.0) : std::vector<double>{}};
            FieldQuery qts{xt, b.t, b.s, b.labels, b.omega};
            FieldQuery qnull = qtt;
            if (!qnull.labels.empty()) qnull.labels.assign(6, kNullLabel);
            const Matrix f_tt0 = net.apply(theta, qtt);
            Matrix cfm_target = vc;
            if (o == Objective::iSD_T) {
                const Matrix fn = net.apply(theta, qnull);
                for (std::size_t i = 0; i < 6; ++i) {
                    if (b.labels[i] != kNullLabel) pre_cfg_velocity(fn.row(i), vc.row(i), c.omega, cfm_target.row(i));
                }
            }
            Matrix v;
            switch (c.guide.value_or(default_guide(o))) {
                case Guide::Conditional:
                    v = vc;
                    break;
                case Guide::OracleMarginal:
                    v = marginal_velocity(mix, interp, xt, b.t);
                    break;
                case Guide::SelfMarginal:
                    v = f_tt0;
                    break;
                case Guide::PreCFG: {
                    const Matrix fn = net.apply(theta, qnull);
                    v.resize(6, 2);
                    for (std::size_t i = 0; i < 6; ++i) {
                        pre_cfg_velocity(fn.row(i), f_tt0.row(i), omega ? b.omega[i] : c.omega, v.row(i));
                    }
                    break;
                }
                default:
                    FAIL("unexpected guide");
            }
            const bool target_style = !residual && o != Objective::CFM;
            const Matrix tgt = target_style ? sdr_target(net, theta, interp, qts, v, c.jvp) : Matrix();
            Tangent sp;
            sp.dx = v;
            sp.dt.assign(6, 0.0);
            sp.ds.assign(6, 0.0);
            const Matrix jv0 = net.jvp_exact(theta, qts, sp);
            const bool has_cfm = o == Objective::CFM || o == Objective::SD || o == Objective::SD_SG ||
                                 o == Objective::iSD || labelled;

            // weights are detached too
            std::vector<double> w(6);
            {
                const Matrix fts = net.apply(theta, qts);
                Tangent tg{v, std::vector<double>(6, 1.0), std::vector<double>(6, 0.0)};
                const Evaluation ev = net.evaluate(theta, qts, &tg);
                for (std::size_t i = 0; i < 6; ++i) {
                    const auto bc = bridge(interp, b.t[i], b.s[i]);
                    double cf = 0.0, sd = 0.0;
                    if (has_cfm) {
                        for (int k = 0; k < 2; ++k) cf += std::pow(f_tt0(i, k) - cfm_target(i, k), 2);
                    }
                    std::vector<double> r(2);
                    if (residual) {
                        eulerian_residual(bc, interp.nu_value(), xt.row(i), v.row(i), ev.value.row(i), ev.tangent.row(i), r);
                    } else if (target_style) {
                        for (int k = 0; k < 2; ++k) r[k] = fts(i, k) - tgt(i, k);
                    }
                    sd = r[0] * r[0] + r[1] * r[1];
                    const double fac = c.ct_weight ? bc.A / (interp.nu_value() * interp.nu_value()) : 1.0;
                    w[i] = loss_weight(c.weighting, interp.to_normalized(b.t[i]), cf + fac * sd, c.adaptive_p,
                                       c.adaptive_eta);
                }
            }

            const auto ref_loss = [&](std::span<const double> th) {
                double total = 0.0;
                const Matrix ftt = net.apply(th, qtt);
                Tangent tg{v, std::vector<double>(6, 1.0), std::vector<double>(6, 0.0)};
                Tangent tonly{Matrix(6, 2), std::vector<double>(6, 1.0), std::vector<double>(6, 0.0)};
                const Evaluation ev = net.evaluate(th, qts, o == Objective::SD_SG ? &tonly : &tg);
                for (std::size_t i = 0; i < 6; ++i) {
                    const auto bc = bridge(interp, b.t[i], b.s[i]);
                    double cf = 0.0;
                    if (has_cfm) {
                        for (int k = 0; k < 2; ++k) cf += std::pow(ftt(i, k) - cfm_target(i, k), 2);
                    }
                    std::vector<double> r(2);
                    if (residual) {
                        std::vector<double> df(ev.tangent.row(i).begin(), ev.tangent.row(i).end());
                        if (o == Objective::SD_SG) {
                            for (int k = 0; k < 2; ++k) df[k] += jv0(i, k);
                        }
                        eulerian_residual(bc, interp.nu_value(), xt.row(i), v.row(i), ev.value.row(i), df, r);
                    } else if (target_style) {
                        for (int k = 0; k < 2; ++k) r[k] = ev.value(i, k) - tgt(i, k);
                    }
                    const double fac = c.ct_weight ? bc.A / (interp.nu_value() * interp.nu_value()) : 1.0;
                    total += w[i] * (cf + fac * (r[0] * r[0] + r[1] * r[1]));
                }
                return total / 6.0;
            };
            const auto ref = fd_grad(ref_loss, theta);
            CHECK(rel_err(grad, ref) < 1e-4);
            CHECK(evaluate_loss(net, theta, interp, c, b, &mix, {}).total == doctest::Approx(ref_loss(theta)).epsilon(1e-12));
        }
    }
}

TEST_CASE("conditional and oracle guidance give the same expected CT gradient") {
    const auto lin = Interpolant::linear();
    const auto mix = GaussianMixture::default_ring();
    Rng rng(6);
    const FieldNet net(tiny_spec());
    const auto theta = net.init_params(rng, false);
    // fix x_t and times; average over the posterior of x given x_t
    const auto gap_for = [&](std::size_t n) {
        LossBatch b;
        b.x.resize(n, 2);
        b.z.resize(n, 2);
        const double t = 0.6, s = 0.2;
        std::vector<double> y{0.4, -0.3};
        const auto post = posterior_stats(mix, lin, y, t);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0, pick = u(rng);
            std::size_t comp = 0;
            for (; comp + 1 < post.responsibilities.size(); ++comp) {
                acc += post.responsibilities[comp];
                if (pick < acc) break;
            }
            for (std::size_t k = 0; k < 2; ++k) {
                b.x(i, k) = post.component_means(comp, k) + std::sqrt(post.component_vars(comp, k)) * nd(rng);
                b.z(i, k) = (y[k] - (1 - t) * b.x(i, k)) / t;
            }
        }
        b.t.assign(n, t);
        b.s.assign(n, s);
        LossConfig ct;
        ct.objective = Objective::CT;
        LossConfig cd;
        cd.objective = Objective::CD;
        std::vector<double> g1(net.num_params(), 0.0), g2(net.num_params(), 0.0);
        evaluate_loss(net, theta, lin, ct, b, &mix, g1);
        evaluate_loss(net, theta, lin, cd, b, &mix, g2);
        return rel_err(g1, g2);
    };
    const double small = gap_for(64);
    const double large = gap_for(16384);
    CHECK(large < small);
    CHECK(large < 0.1);
}

TEST_CASE("network-level helpers") {
    Rng rng(7);
    const auto lin = Interpolant::linear();
    const FieldNet net(tiny_spec(3));
    const auto theta = net.init_params(rng, false);
    const auto b = random_batch(rng, lin, 5, 3, false);
    const Matrix xt = xt_of(lin, b);
    const Matrix vc = vcond_of(lin, b);
    FieldQuery q{xt, b.t, b.s, b.labels, {}};
    CHECK(pre_cfg_velocity(net, theta, q, vc, 1.0) == vc);
    // s = t: the residual is v - F
    FieldQuery qtt{xt, b.t, b.t, b.labels, {}};
    const Matrix r = eulerian_residual(net, theta, lin, qtt, vc);
    const Matrix f = net.apply(theta, qtt);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r.data()[i] == doctest::Approx(vc.data()[i] - f.data()[i]));
    const Matrix tgt = sdr_target(net, theta, lin, qtt, vc, JvpMode{});
    CHECK(tgt == vc);
}
