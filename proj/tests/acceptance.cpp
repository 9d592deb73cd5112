// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria. Usage: acceptance [artifact dir] [seeds]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fmlab/artifacts.hpp"
#include "fmlab/experiments.hpp"
#include "fmlab/objectives.hpp"
#include "fmlab/sampler.hpp"

using namespace fmlab;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

CriterionResult make(int id, const std::string& name) {
    CriterionResult r;
    r.id = id;
    r.name = name;
    return r;
}

// ---- 1 ----

CriterionResult nu_constancy() {
    const auto t0 = Clock::now();
    auto r = make(1, "nu constancy (linear, trig, power 0.5/0.7/1.0)");
    const std::vector<Interpolant> family{Interpolant::linear(), Interpolant::trigonometric(), Interpolant::power(0.5),
                                          Interpolant::power(0.7), Interpolant::power(1.0)};
    // alpha sigma' - sigma alpha' straight from the schedule, independent of the stored constant.
    auto nu_at = [](const Interpolant& it, double t) {
        const Schedule s = eval_schedule(it, t);
        return s.alpha * s.dsigma - s.sigma * s.dalpha;
    };
    double worst = 0.0;
    for (const auto& it : family) {
        const double mid = nu_at(it, it.to_domain(0.5));
        for (int i = 0; i < 1024; ++i) {
            const double t = it.to_domain(static_cast<double>(i) / 1023.0);
            worst = std::max(worst, std::abs(nu_at(it, t) - mid));
        }
    }
    r.pass = worst < 1e-6;
    r.detail = "max |nu(t) - nu(0.5)| = " + fmt("%.3g", worst) + " (need < 1e-6)";
    r.seconds = since(t0);
    r.pass = r.pass && r.seconds < 1.0;
    return r;
}

// ---- 2 ----

CriterionResult identity_boundary() {
    const auto t0 = Clock::now();
    auto r = make(2, "flow map identity at s = t");
    Rng rng(11);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<Interpolant> family{Interpolant::linear(), Interpolant::trigonometric(), Interpolant::power(0.6)};
    std::size_t bad = 0;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto& it = family[static_cast<std::size_t>(i) % family.size()];
        const double t = it.to_domain(u(rng));
        std::vector<double> x(2), F(2), out(2);
        for (auto& v : x) v = nd(rng) * std::exp(3 * nd(rng));
        for (auto& v : F) v = nd(rng) * std::exp(3 * nd(rng));
        flow_map(it, x, t, t, F, out);
        for (int k = 0; k < 2; ++k) {
            worst = std::max(worst, std::abs(out[k] - x[k]));
            bad += out[k] != x[k];
        }
    }
    r.pass = bad == 0;
    r.detail = std::to_string(bad) + " of 2000 coordinates differ, max deviation " + fmt("%.3g", worst);
    r.seconds = since(t0);
    r.pass = r.pass && r.seconds < 1.0;
    return r;
}

// ---- 3 ----

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

CriterionResult autodiff_suite() {
    const auto t0 = Clock::now();
    auto r = make(3, "reverse mode vs finite differences, JVP step halving");
    Rng rng(12);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::uniform_int_distribution<int> pick(0, 1 << 20);
    const auto mix = GaussianMixture::default_ring();
    const std::vector<Interpolant> family{Interpolant::linear(), Interpolant::trigonometric(), Interpolant::power(0.7)};
    double worst = 0.0;
    std::string kinds;
    for (int c = 0; c < 20; ++c) {
        NetSpec spec;
        spec.hidden = 6 + static_cast<std::size_t>(pick(rng) % 11);
        spec.depth = 2 + static_cast<std::size_t>(pick(rng) % 3);
        spec.fourier = 1 + static_cast<std::size_t>(pick(rng) % 4);
        spec.num_classes = c % 2 ? 3 : 0;
        spec.embed_dim = 3;
        const FieldNet net(spec);
        const auto theta = net.init_params(rng, false);
        const auto& it = family[static_cast<std::size_t>(c) % family.size()];
        const std::size_t n = 5;

        FieldQuery q;
        q.x.resize(n, 2);
        for (auto& v : q.x.flat()) v = nd(rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = u(rng), b = u(rng);
            q.t.push_back(it.to_domain(std::max(a, b)));
            q.s.push_back(it.to_domain(std::min(a, b)));
            if (spec.num_classes) q.labels.push_back(static_cast<int>(i % 4) - 1);
        }

        std::function<double(std::span<const double>)> loss;
        std::vector<double> grad(net.num_params(), 0.0);
        const int kind = c % 4;
        if (kind == 0 || kind == 1) {
            // Weighted value plus a quadratic in the exact JVP along (dx, dt = 1, ds = 0).
            Tangent tg{Matrix(n, 2), std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
            for (auto& v : tg.dx.flat()) v = nd(rng);
            Matrix a(n, 2);
            for (auto& v : a.flat()) v = nd(rng);
            loss = [&, tg, a](std::span<const double> th) {
                const Evaluation e = net.evaluate(th, q, &tg);
                double acc = 0.0;
                for (std::size_t i = 0; i < e.value.size(); ++i) {
                    acc += a.data()[i] * e.value.data()[i] + 0.5 * e.tangent.data()[i] * e.tangent.data()[i];
                }
                return acc;
            };
            Tape tape;
            const Evaluation e = net.record(theta, q, &tg, tape);
            net.backward(theta, tape, a, &e.tangent, grad);
            kinds += "J";
        } else {
            if (spec.num_classes) q.labels.clear();
            LossConfig lc;
            lc.objective = kind == 2 ? Objective::ED : Objective::DT;
            LossBatch b;
            auto data = sample_data(mix, rng, n);
            b.x = data.x;
            b.z.resize(n, 2);
            for (auto& v : b.z.flat()) v = nd(rng);
            b.t = q.t;
            b.s = q.s;
            if (spec.num_classes) b.labels.assign(n, kNullLabel);
            loss = [&, lc, b](std::span<const double> th) {
                return evaluate_loss(net, th, it, lc, b, &mix, {}).total;
            };
            evaluate_loss(net, theta, it, lc, b, &mix, grad);
            kinds += kind == 2 ? "E" : "D";
        }
        worst = std::max(worst, rel_err(grad, fd_grad(loss, theta)));
    }

    // Central-difference JVP error shrinks by 4 when the step halves.
    std::vector<double> ratios;
    for (int c = 0; c < 5; ++c) {
        NetSpec spec;
        spec.hidden = 16;
        spec.depth = 3;
        spec.fourier = 3;
        const FieldNet net(spec);
        const auto theta = net.init_params(rng, false);
        const std::size_t n = 16;
        FieldQuery q;
        q.x.resize(n, 2);
        for (auto& v : q.x.flat()) v = nd(rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = u(rng), b = u(rng);
            q.t.push_back(std::max(a, b));
            q.s.push_back(std::min(a, b));
        }
        Tangent tg{Matrix(n, 2), std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)};
        for (auto& v : tg.dx.flat()) v = nd(rng);
        const Matrix exact = net.jvp_exact(theta, q, tg);
        auto err = [&](double eps) {
            const Matrix a = net.jvp_approx(theta, q, tg.dx, eps);
            double e = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) e += std::pow(a.data()[i] - exact.data()[i], 2);
            return std::sqrt(e);
        };
        ratios.push_back(err(0.01) / err(0.005));
    }
    bool ratios_ok = true;
    std::string rs = "[";
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        ratios_ok = ratios_ok && ratios[i] >= 3.0 && ratios[i] <= 5.0;
        rs += (i ? " " : "") + fmt("%.3f", ratios[i]);
    }
    r.pass = worst < 1e-4 && ratios_ok;
    r.detail = "20 cases (" + kinds + ") max rel err " + fmt("%.3g", worst) + " (need < 1e-4); JVP error ratios " + rs +
               "] (need in [3, 5])";
    r.seconds = since(t0);
    r.pass = r.pass && r.seconds < 30.0;
    return r;
}

// ---- 4 ----

CriterionResult oracle_correctness() {
    const auto t0 = Clock::now();
    auto r = make(4, "oracle marginal velocity vs Monte Carlo, terminal mean collapse");
    Rng rng(13);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<Interpolant> family{Interpolant::linear(), Interpolant::trigonometric(), Interpolant::power(0.7)};
    constexpr std::size_t kSamples = 100000;
    double worst_z = 0.0;
    bool collapse = true;
    for (int c = 0; c < 50; ++c) {
        const std::size_t k = 1 + static_cast<std::size_t>(u(rng) * 4);
        std::vector<double> w(k);
        double wsum = 0.0;
        for (auto& v : w) wsum += (v = 0.2 + u(rng));
        for (auto& v : w) v /= wsum;
        Matrix means(k, 2), vars(k, 2);
        for (auto& v : means.flat()) v = 2.0 * nd(rng);
        for (auto& v : vars.flat()) v = std::pow(0.1 + 0.4 * u(rng), 2);
        const GaussianMixture mix(w, means, vars);
        const auto& it = family[static_cast<std::size_t>(c) % family.size()];
        const double t = it.to_domain(0.2 + 0.75 * u(rng));

        // x_t from the model itself so the query sits where the posterior has mass.
        const auto x0 = sample_data(mix, rng, 1).x;
        const Schedule sc = eval_schedule(it, t);
        std::vector<double> y{sc.alpha * x0(0, 0) + sc.sigma * nd(rng), sc.alpha * x0(0, 1) + sc.sigma * nd(rng)};

        // Self-normalized importance sampling from the prior: weight N(y; alpha x, sigma^2).
        const auto xs = sample_data(mix, rng, kSamples).x;
        std::vector<double> logw(kSamples);
        double mx = -INFINITY;
        for (std::size_t i = 0; i < kSamples; ++i) {
            const double d0 = y[0] - sc.alpha * xs(i, 0), d1 = y[1] - sc.alpha * xs(i, 1);
            logw[i] = -(d0 * d0 + d1 * d1) / (2 * sc.sigma * sc.sigma);
            mx = std::max(mx, logw[i]);
        }
        double sw = 0.0;
        std::vector<double> vhat(2, 0.0);
        std::vector<double> ws(kSamples);
        for (std::size_t i = 0; i < kSamples; ++i) {
            ws[i] = std::exp(logw[i] - mx);
            sw += ws[i];
        }
        auto cond_v = [&](std::size_t i, int d) {
            const double z = (y[d] - sc.alpha * xs(i, d)) / sc.sigma;
            return sc.dalpha * xs(i, d) + sc.dsigma * z;
        };
        for (std::size_t i = 0; i < kSamples; ++i) {
            for (int d = 0; d < 2; ++d) vhat[d] += ws[i] * cond_v(i, d) / sw;
        }
        const auto exact = marginal_velocity(mix, it, y, t);
        for (int d = 0; d < 2; ++d) {
            double var = 0.0;
            for (std::size_t i = 0; i < kSamples; ++i) var += std::pow(ws[i] / sw * (cond_v(i, d) - vhat[d]), 2);
            const double se = std::sqrt(var);
            worst_z = std::max(worst_z, std::abs(exact[d] - vhat[d]) / se);
        }

        std::vector<double> mu(2, 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            for (int d = 0; d < 2; ++d) mu[d] += w[j] * means(j, d);
        }
        const auto end = posterior_stats(mix, it, y, it.domain_end());
        collapse = collapse && end.mean == mu && end.mean == mix.mean();
    }
    r.pass = worst_z < 4.0 && collapse;
    r.detail = "50 cases, 1e5 samples: max |error| / SE = " + fmt("%.3f", worst_z) +
               " (need < 4); terminal posterior mean == sum pi_i mu_i: " + (collapse ? "yes" : "no");
    r.seconds = since(t0);
    r.pass = r.pass && r.seconds < 60.0;
    return r;
}

// ---- 5 ----

CriterionResult meanflow_target() {
    const auto t0 = Clock::now();
    auto r = make(5, "linear-interpolant target equals v - (t - s) dF/dt");
    Rng rng(14);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto lin = Interpolant::linear();
    std::size_t bad = 0;
    for (int i = 0; i < 1000; ++i) {
        const double a = u(rng), b = u(rng);
        const double t = std::max(a, b), s = std::min(a, b);
        std::vector<double> x{nd(rng), nd(rng)}, v{nd(rng), nd(rng)}, F{nd(rng), nd(rng)}, dF{nd(rng), nd(rng)};
        std::vector<double> out(2);
        sdr_target(bridge(lin, t, s), x, v, F, dF, out);
        for (int k = 0; k < 2; ++k) bad += out[k] != v[k] - (t - s) * dF[k];
    }
    r.pass = bad == 0;
    r.detail = std::to_string(bad) + " of 2000 coordinates differ bitwise";
    r.seconds = since(t0);
    return r;
}

// ---- 10 ----

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0) return false;
    }
    return true;
}

CriterionResult cfg_identities() {
    const auto t0 = Clock::now();
    auto r = make(10, "guidance identities (Pre-CFG omega=1, Post-CFG omega=1 and 0)");
    Rng rng(15);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.05, 0.95);

    bool pre_rows = true;
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> fn{nd(rng) * 1e3, nd(rng)}, v{nd(rng), nd(rng) * 1e-3}, out(2);
        pre_cfg_velocity(fn, v, 1.0, out);
        pre_rows = pre_rows && out == v;
    }

    NetSpec spec;
    spec.hidden = 24;
    spec.depth = 4;
    spec.num_classes = 8;
    const FieldNet net(spec);
    const auto theta = net.init_params(rng, false);
    const std::size_t n = 64;
    FieldQuery q;
    q.x.resize(n, 2);
    for (auto& v : q.x.flat()) v = nd(rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = u(rng);
        q.t.push_back(t);
        q.s.push_back(t);
        labels.push_back(static_cast<int>(i % 8));
    }
    q.labels = labels;
    Matrix v(n, 2);
    for (auto& e : v.flat()) e = nd(rng);
    const bool pre_net = bitwise_equal(pre_cfg_velocity(net, theta, q, v, 1.0), v);

    const auto trig = Interpolant::trigonometric();
    Matrix z(n, 2);
    for (auto& e : z.flat()) e = nd(rng);
    bool post1 = true, post0 = true;
    for (std::size_t steps : {1u, 2u, 4u, 8u}) {
        const auto sched = uniform_schedule(trig, steps);
        post1 = post1 && bitwise_equal(post_cfg_sample(net, theta, trig, z, sched, labels, 1.0),
                                       few_step_sample(net, theta, trig, z, sched, labels));
        post0 = post0 && bitwise_equal(post_cfg_sample(net, theta, trig, z, sched, labels, 0.0),
                                       few_step_sample(net, theta, trig, z, sched, {}));
    }
    r.pass = pre_rows && pre_net && post1 && post0;
    r.detail = std::string("Pre-CFG rows ") + (pre_rows ? "exact" : "differ") + ", Pre-CFG net " +
               (pre_net ? "exact" : "differs") + ", Post-CFG omega=1 " + (post1 ? "bitwise" : "differs") +
               ", omega=0 " + (post0 ? "bitwise" : "differs");
    r.seconds = since(t0);
    r.pass = r.pass && r.seconds < 1.0;
    return r;
}

// ---- 12 ----

CriterionResult determinism(const std::string& dir) {
    const auto t0 = Clock::now();
    auto r = make(12, "identical config and seed reproduce metrics CSV bytes");
    const std::string base = dir.empty() ? (std::filesystem::temp_directory_path() / "fmlab_acceptance").string() : dir;
    bool same = true;
    std::string detail;
    for (Objective o : {Objective::iSD, Objective::CT, Objective::ED}) {
        ExperimentConfig c = toy_config(o, 256, 5);
        c.train.steps = 300;
        c.train.eval_every = 100;
        c.train.eval_samples = 512;
        const std::string a = (std::filesystem::path(base) / "determinism" / (objective_name(o) + "_a")).string();
        const std::string b = (std::filesystem::path(base) / "determinism" / (objective_name(o) + "_b")).string();
        run_config(c, a);
        run_config(c, b);
        const std::string ta = read_text(a + "/metrics.csv"), tb = read_text(b + "/metrics.csv");
        const bool eq = ta == tb && read_csv(a + "/metrics.csv").rows.size() == 300;
        same = same && eq;
        detail += objective_name(o) + (eq ? " identical " : " DIFFERENT ") + "(" + std::to_string(ta.size()) + " B); ";
    }
    r.pass = same;
    r.detail = detail.substr(0, detail.size() - 2);
    r.seconds = since(t0);
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string out_dir = argc > 1 ? argv[1] : "";
    const std::size_t seeds = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 3;
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    std::vector<CriterionResult> results;
    auto report = [&](CriterionResult r) {
        std::printf("%s\n", format_criterion(r).c_str());
        std::fflush(stdout);
        results.push_back(std::move(r));
    };
    auto guarded = [&](int id, const std::string& name, const std::function<CriterionResult()>& f) {
        try {
            report(f());
        } catch (const std::exception& e) {
            auto r = make(id, name);
            r.detail = std::string("exception: ") + e.what();
            report(r);
        }
    };

    guarded(1, "nu constancy", nu_constancy);
    guarded(2, "flow map identity", identity_boundary);
    guarded(3, "autodiff suite", autodiff_suite);
    guarded(4, "oracle correctness", oracle_correctness);
    guarded(5, "MeanFlow target", meanflow_target);
    RunCache cache;
    guarded(6, "ED ordering", [&] { return check_ed_ordering(cache, seeds, out_dir); });
    guarded(7, "batch effect", [&] { return check_batch_effect(cache, seeds, out_dir); });
    guarded(8, "gradient norms", [&] { return check_grad_norms(cache, seeds, out_dir); });
    guarded(9, "landscape", [&] { return check_landscape(cache, out_dir); });
    guarded(10, "guidance identities", cfg_identities);
    guarded(11, "generation", [&] { return check_generation(cache, seeds, out_dir); });
    guarded(12, "determinism", [&] { return determinism(out_dir); });

    int failed = 0;
    for (const auto& r : results) failed += !r.pass;
    const std::string tally = std::to_string(results.size() - static_cast<std::size_t>(failed)) + " of " +
                              std::to_string(results.size()) + " criteria passed";
    std::printf("%s\n", tally.c_str());
    if (!out_dir.empty()) {
        std::string text;
        for (const auto& r : results) text += format_criterion(r) + "\n";
        write_text((std::filesystem::path(out_dir) / "acceptance_summary.txt").string(), text + tally + "\n");
    }
    return failed;
}
