#include "fmlab/experiments.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "fmlab/artifacts.hpp"
#include "fmlab/error.hpp"
#include "fmlab/sampler.hpp"

namespace fmlab {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

std::string cell_dir(const std::string& out_dir, const std::string& name) {
    if (out_dir.empty()) return "";
    const std::string d = join(out_dir, name);
    std::filesystem::create_directories(d);
    return d;
}

std::string cache_key(ExperimentConfig cfg) {
    cfg.out = "-";
    return format_config(cfg);
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt("%.4g", v[i]);
    return s + "]";
}

std::string run_name(const ExperimentConfig& c) {
    std::string n = objective_name(c.train.loss.objective) + "_B" + std::to_string(c.train.batch_size);
    if (c.train.fixed_s) n += "_s0";
    return n + "_seed" + std::to_string(c.train.seed);
}

Matrix fresh_data(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return sample_data(GaussianMixture::parse(cfg.mixture), rng, n).x;
}

}  // namespace

std::pair<Matrix, std::vector<int>> generate_samples(const ExperimentConfig& cfg, std::span<const double> theta,
                                                     std::uint64_t noise_seed) {
    const NetSpec spec = resolved_net(cfg);
    const FieldNet net(spec);
    if (theta.size() != net.num_params()) throw DimensionError("parameters do not match the configured network");
    const Interpolant interp = Interpolant::parse(cfg.interpolant);
    Rng rng(noise_seed);
    Matrix z(cfg.sample.count, spec.data_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : z.flat()) v = normal(rng);
    std::vector<int> labels;
    if (spec.num_classes > 0) {
        for (std::size_t i = 0; i < cfg.sample.count; ++i) {
            labels.push_back(cfg.sample.label >= 0 ? cfg.sample.label
                                                   : static_cast<int>(i % GaussianMixture::parse(cfg.mixture).components()));
        }
    }
    const SampleSchedule sched = uniform_schedule(interp, cfg.sample.steps, cfg.sample.t_min);
    Matrix out = (spec.num_classes > 0 && cfg.sample.cfg_omega != 1.0)
                     ? post_cfg_sample(net, theta, interp, z, sched, labels, cfg.sample.cfg_omega)
                     : few_step_sample(net, theta, interp, z, sched, labels);
    return {std::move(out), labels};
}

RunOutcome run_config(const ExperimentConfig& cfg, const std::string& dir) {
    validate(cfg);
    const auto t0 = Clock::now();
    const FieldNet net(resolved_net(cfg));
    const GaussianMixture mix = GaussianMixture::parse(cfg.mixture);
    const Interpolant interp = Interpolant::parse(cfg.interpolant);
    if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        write_text(join(dir, "config.txt"), format_config(cfg));
    }
    RunOutcome out;
    out.cfg = cfg;
    out.result = run_experiment(net, mix, interp, cfg.train, dir.empty() ? "" : join(dir, "metrics.csv"));
    const auto& h = out.result.history;
    if (!h.empty() && h.back().ed_proxy && !out.result.failure) {
        out.final_eval = {*h.back().ed_proxy, *h.back().dist_energy};
    } else {
        out.final_eval = evaluate(net, eval_params(out.result.state, cfg.train), mix, interp, cfg.train,
                                  out.result.state.step);
    }
    if (!dir.empty()) {
        const auto& st = out.result.state;
        write_checkpoint(join(dir, "checkpoint.fmlb"), {net.spec(), st.theta, st.theta_ema});
        write_state(join(dir, "state.fmls"), st);
        const auto [pts, labels] = generate_samples(cfg, eval_params(st, cfg.train), cfg.train.seed + 1);
        write_csv(join(dir, "samples.csv"), points_table(pts, labels));
        write_text(join(dir, "samples.svg"), svg_scatter(pts, labels, run_name(cfg)));
    }
    out.seconds = since(t0);
    return out;
}

const RunOutcome& RunCache::get(const ExperimentConfig& cfg, const std::string& dir) {
    const std::string key = cache_key(cfg);
    auto it = runs_.find(key);
    if (it == runs_.end()) it = runs_.emplace(key, run_config(cfg, dir)).first;
    return it->second;
}

ExperimentConfig toy_config(Objective objective, std::size_t batch, std::uint64_t seed) {
    ExperimentConfig c;
    c.train.loss.objective = objective;
    if (objective == Objective::ED || objective == Objective::CD) c.train.loss.guide = Guide::OracleMarginal;
    c.train.batch_size = batch;
    c.train.seed = seed;
    return c;
}

LandscapeReport probe_landscape(const ExperimentConfig& cfg, std::span<const double> theta, std::size_t resolution,
                                double radius, std::uint64_t batch_seed) {
    const FieldNet net(resolved_net(cfg));
    const GaussianMixture mix = GaussianMixture::parse(cfg.mixture);
    const Interpolant interp = Interpolant::parse(cfg.interpolant);
    TrainState scratch;
    scratch.rng = Rng(batch_seed);
    const LossBatch batch = draw_batch(scratch, net, mix, interp, cfg.train);
    const ScalarLossFn loss = [&](std::span<const double> th) {
        return evaluate_loss(net, th, interp, cfg.train.loss, batch, &mix, {}).total;
    };
    const GradientFn gradient = [&](std::span<const double> th) {
        std::vector<double> g(net.num_params(), 0.0);
        evaluate_loss(net, th, interp, cfg.train.loss, batch, &mix, g);
        return g;
    };
    Rng rng(batch_seed + 1);
    return landscape_probe(loss, gradient, theta, resolution, radius, rng);
}

std::string format_criterion(const CriterionResult& r) {
    return std::string(r.pass ? "PASS" : "FAIL") + "  [" + std::to_string(r.id) + "] " + r.name + ": " + r.detail +
           " (" + fmt("%.1f", r.seconds) + " s)";
}

CriterionResult check_ed_ordering(RunCache& cache, std::size_t seeds, const std::string& out_dir) {
    const auto t0 = Clock::now();
    std::vector<double> ed, dt, ratio;
    for (std::size_t s = 0; s < seeds; ++s) {
        const auto ce = toy_config(Objective::ED, 2048, s);
        const auto cd = toy_config(Objective::DT, 2048, s);
        ed.push_back(cache.get(ce, cell_dir(out_dir, run_name(ce))).final_eval.ed_proxy);
        dt.push_back(cache.get(cd, cell_dir(out_dir, run_name(cd))).final_eval.ed_proxy);
        ratio.push_back(dt.back() / ed.back());
    }
    CriterionResult r;
    r.id = 6;
    r.name = "ED-proxy ordering DT > ED (B=2048, 5000 steps)";
    r.pass = mean(ratio) > 1.5;
    for (std::size_t s = 0; s < seeds; ++s) r.pass = r.pass && dt[s] > ed[s];
    r.detail = "ED " + list(ed) + " DT " + list(dt) + " mean ratio " + fmt("%.3f", mean(ratio)) + " (need > 1.5)";
    r.seconds = since(t0);
    return r;
}

CriterionResult check_batch_effect(RunCache& cache, std::size_t seeds, const std::string& out_dir) {
    const auto t0 = Clock::now();
    std::vector<double> ed_small, ed_large, de_small, de_large, ratio;
    for (std::size_t s = 0; s < seeds; ++s) {
        const auto cs = toy_config(Objective::CT, 128, s);
        const auto cl = toy_config(Objective::CT, 2048, s);
        const auto& small = cache.get(cs, cell_dir(out_dir, run_name(cs))).final_eval;
        const auto& large = cache.get(cl, cell_dir(out_dir, run_name(cl))).final_eval;
        ed_small.push_back(small.ed_proxy);
        ed_large.push_back(large.ed_proxy);
        de_small.push_back(small.dist_energy);
        de_large.push_back(large.dist_energy);
        ratio.push_back(small.ed_proxy / large.ed_proxy);
    }
    CriterionResult r;
    r.id = 7;
    r.name = "CT batch-size effect B=128 vs B=2048";
    r.pass = mean(ratio) > 1.2 && mean(de_small) > mean(de_large);
    r.detail = "ED-proxy B128 " + list(ed_small) + " B2048 " + list(ed_large) + " mean ratio " +
               fmt("%.3f", mean(ratio)) + " (need > 1.2); energy distance B128 " + list(de_small) + " B2048 " +
               list(de_large);
    r.seconds = since(t0);
    return r;
}

CriterionResult check_grad_norms(RunCache& cache, std::size_t seeds, const std::string& out_dir) {
    const auto t0 = Clock::now();
    std::vector<double> isd, sdsg;
    std::vector<Series> curves;
    for (std::size_t s = 0; s < seeds; ++s) {
        // The iSD runs are the 5000-step defaults; steps 500-2500 do not depend on the total budget.
        const auto ci = toy_config(Objective::iSD, 2048, s);
        auto cs = toy_config(Objective::SD_SG, 2048, s);
        cs.train.steps = 2500;
        for (const ExperimentConfig* c : std::array{&ci, static_cast<const ExperimentConfig*>(&cs)}) {
            const auto& run = cache.get(*c, cell_dir(out_dir, run_name(*c)));
            std::vector<std::size_t> steps;
            std::vector<double> norms;
            Series sr{run_name(*c), {}, {}};
            for (const auto& m : run.result.history) {
                steps.push_back(m.step);
                norms.push_back(m.grad_norm);
                if (m.step <= 2500 && m.step % 10 == 0) {
                    sr.x.push_back(static_cast<double>(m.step));
                    sr.y.push_back(m.grad_norm);
                }
            }
            const WindowStats w = window_stats(steps, norms, 500, 2500);
            (c == &ci ? isd : sdsg).push_back(w.mean);
            curves.push_back(std::move(sr));
        }
    }
    if (!out_dir.empty()) {
        write_text(join(out_dir, "fig10_grad_norms.svg"),
                   svg_lines(curves, "Gradient norms", "step", "grad norm", true));
        CsvTable t;
        t.header = {"step"};
        for (const auto& c : curves) t.header.push_back(c.name);
        for (std::size_t i = 0; i < curves.front().x.size(); ++i) {
            std::vector<std::string> row{fmt("%.0f", curves.front().x[i])};
            for (const auto& c : curves) row.push_back(i < c.y.size() ? fmt("%.10g", c.y[i]) : "");
            t.rows.push_back(std::move(row));
        }
        write_csv(join(out_dir, "fig10_grad_norms.csv"), t);
    }
    CriterionResult r;
    r.id = 8;
    r.name = "mean grad norm over steps 500-2500: iSD < SD_SG";
    r.pass = mean(isd) < mean(sdsg);
    r.detail = "iSD " + list(isd) + " SD_SG " + list(sdsg);
    r.seconds = since(t0);
    return r;
}

CriterionResult check_landscape(RunCache& cache, const std::string& out_dir) {
    const auto t0 = Clock::now();
    const auto ci = toy_config(Objective::iSD, 2048, 0);
    auto cc = toy_config(Objective::CT, 2048, 0);
    cc.train.fixed_s = true;
    constexpr std::size_t kRes = 21;
    constexpr double kRadius = 1.0;
    constexpr std::uint64_t kBatchSeed = 2024;
    std::vector<LandscapeReport> reps;
    for (const ExperimentConfig* c : std::array{&ci, static_cast<const ExperimentConfig*>(&cc)}) {
        const auto& run = cache.get(*c, cell_dir(out_dir, run_name(*c)));
        reps.push_back(probe_landscape(*c, eval_params(run.result.state, c->train), kRes, kRadius, kBatchSeed));
        if (!out_dir.empty()) {
            CsvTable t;
            t.header = {"alpha", "beta", "loss"};
            const auto& rep = reps.back();
            for (std::size_t i = 0; i < kRes; ++i) {
                for (std::size_t j = 0; j < kRes; ++j) {
                    t.rows.push_back({fmt("%.6g", rep.coords[i]), fmt("%.6g", rep.coords[j]), fmt("%.10g", rep.grid(i, j))});
                }
            }
            t.comments.push_back(" sigma=" + fmt("%.10g", rep.sigma) + " spikes=" + std::to_string(rep.spikes) +
                                 " eig1=" + fmt("%.6g", rep.eig1) + " eig2=" + fmt("%.6g", rep.eig2) +
                                 " converged=" + (rep.converged ? "true" : "false") + " batch_seed=" +
                                 std::to_string(kBatchSeed));
            write_csv(join(out_dir, "landscape_" + run_name(*c) + ".csv"), t);
            write_text(join(out_dir, "landscape_" + run_name(*c) + ".svg"),
                       svg_heatmap(rep.grid, rep.coords, "loss landscape " + run_name(*c)));
        }
    }
    const auto& a = reps[0];
    const auto& b = reps[1];
    CriterionResult r;
    r.id = 9;
    r.name = "landscape sigma iSD < CT(s=0)";
    r.pass = a.sigma < b.sigma;
    r.detail = "sigma iSD " + fmt("%.4g", a.sigma) + " CT " + fmt("%.4g", b.sigma) + "; spikes own bound iSD " +
               std::to_string(a.spikes) + " CT " + std::to_string(b.spikes) + ", against CT bound iSD " +
               std::to_string(count_spikes(a.grid, b.mean, b.sigma)) +
               (a.converged && b.converged ? "" : "; power iteration hit the iteration cap");
    r.seconds = since(t0);
    return r;
}

CriterionResult check_generation(RunCache& cache, std::size_t seeds, const std::string& out_dir) {
    const auto t0 = Clock::now();
    std::vector<double> isd, dt;
    for (std::size_t s = 0; s < seeds; ++s) {
        for (Objective o : {Objective::iSD, Objective::DT}) {
            const auto c = toy_config(o, 2048, s);
            const auto& run = cache.get(c, cell_dir(out_dir, run_name(c)));
            // fresh data, not the trainer's held-out set
            const auto [pts, labels] = generate_samples(c, eval_params(run.result.state, c.train), 7000 + s);
            const double e = energy_distance(pts, fresh_data(c, pts.rows(), 9000 + s));
            (o == Objective::iSD ? isd : dt).push_back(e);
        }
    }
    CriterionResult r;
    r.id = 11;
    r.name = "4-step energy distance iSD < DT";
    r.pass = mean(isd) < mean(dt);
    r.detail = "iSD " + list(isd) + " DT " + list(dt);
    r.seconds = since(t0);
    return r;
}

std::vector<CriterionResult> repro(const std::string& figure, const std::string& out_dir, std::size_t seeds) {
    if (seeds == 0) throw ConfigError("repro needs at least one seed");
    RunCache cache;
    std::vector<CriterionResult> results;
    static const std::vector<std::string> known{"fig2", "fig3", "fig4", "fig10", "landscape"};
    if (std::find(known.begin(), known.end(), figure) == known.end()) {
        throw ConfigError("unknown figure '" + figure + "' (expected fig2, fig3, fig4, fig10, landscape)");
    }
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    if (figure == "fig2") {
        for (Objective o : {Objective::ED, Objective::DT, Objective::CT, Objective::SD, Objective::iSD}) {
            const auto c = toy_config(o, 2048, 0);
            cache.get(c, cell_dir(out_dir, run_name(c)));
        }
        if (!out_dir.empty()) {
            const auto c = toy_config(Objective::iSD, 2048, 0);
            Rng rng(1);
            const auto data = sample_data(GaussianMixture::parse(c.mixture), rng, 2048);
            write_text(join(out_dir, "data.svg"), svg_scatter(data.x, data.labels, "data"));
        }
        results.push_back(check_generation(cache, seeds, out_dir));
    } else if (figure == "fig3") {
        for (Objective o : {Objective::CT, Objective::iSD}) {
            for (std::size_t b : {2048u, 512u, 128u}) {
                const auto c = toy_config(o, b, 0);
                cache.get(c, cell_dir(out_dir, run_name(c)));
            }
        }
        results.push_back(check_batch_effect(cache, seeds, out_dir));
    } else if (figure == "fig4") {
        std::vector<Series> curves;
        for (Objective o : {Objective::ED, Objective::DT, Objective::CT, Objective::iSD}) {
            for (std::size_t b : {2048u, 128u}) {
                const auto c = toy_config(o, b, 0);
                const auto& run = cache.get(c, cell_dir(out_dir, run_name(c)));
                Series sr{objective_name(o) + "_B" + std::to_string(b), {}, {}};
                for (const auto& m : run.result.history) {
                    if (!m.ed_proxy) continue;
                    sr.x.push_back(static_cast<double>(m.step));
                    sr.y.push_back(*m.ed_proxy);
                }
                curves.push_back(std::move(sr));
            }
        }
        if (!out_dir.empty()) {
            CsvTable t;
            t.header = {"step"};
            for (const auto& c : curves) t.header.push_back(c.name);
            std::size_t rows = 0;
            for (const auto& c : curves) rows = std::max(rows, c.x.size());
            for (std::size_t i = 0; i < rows; ++i) {
                std::vector<std::string> row{fmt("%.0f", curves.front().x.size() > i ? curves.front().x[i] : 0.0)};
                for (const auto& c : curves) row.push_back(i < c.y.size() ? fmt("%.10g", c.y[i]) : "");
                t.rows.push_back(std::move(row));
            }
            write_csv(join(out_dir, "fig4_ed_proxy.csv"), t);
            write_text(join(out_dir, "fig4_ed_proxy.svg"), svg_lines(curves, "ED proxy", "step", "ED proxy", true));
        }
        results.push_back(check_ed_ordering(cache, seeds, out_dir));
    } else if (figure == "fig10") {
        results.push_back(check_grad_norms(cache, seeds, out_dir));
    } else if (figure == "landscape") {
        results.push_back(check_landscape(cache, out_dir));
    } else {
        throw ConfigError("unknown figure '" + figure + "' (expected fig2, fig3, fig4, fig10, landscape)");
    }
    if (!out_dir.empty()) {
        std::string summary;
        for (const auto& r : results) summary += format_criterion(r) + "\n";
        write_text(join(out_dir, "summary.txt"), summary);
    }
    return results;
}

}  // namespace fmlab
