#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "fmlab/artifacts.hpp"
#include "fmlab/config.hpp"
#include "fmlab/error.hpp"
#include "fmlab/experiments.hpp"

using namespace fmlab;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "config file (flat key = value)");
    cmd->add_option("--seed", c.seed, "overrides run.seed");
    cmd->add_option("--out", c.out, "overrides run.out");
    cmd->add_option("--set", c.overrides, "extra key=value overrides, applied after the file");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) cfg.train.seed = *c.seed;
    if (c.out) cfg.out = *c.out;
    validate(cfg);
    return cfg;
}

std::string in_out(const ExperimentConfig& cfg, const std::string& name) {
    std::filesystem::create_directories(cfg.out);
    return (std::filesystem::path(cfg.out) / name).string();
}

std::vector<double> load_params(const ExperimentConfig& cfg, std::string path) {
    if (path.empty()) path = (std::filesystem::path(cfg.out) / "checkpoint.fmlb").string();
    Checkpoint ck = read_checkpoint(path);
    if (FieldNet(ck.spec).num_params() != FieldNet(resolved_net(cfg)).num_params()) {
        throw ConfigError(path + ": checkpoint architecture does not match the config");
    }
    if (cfg.train.ema_decay > 0.0 && !ck.theta_ema.empty()) return ck.theta_ema;
    return ck.theta;
}

int cmd_train(const ExperimentConfig& cfg) {
    const RunOutcome run = run_config(cfg, cfg.out);
    if (run.result.failure) {
        std::cerr << "fmlab: " << *run.result.failure << "\n";
        return 2;
    }
    std::printf("trained %s for %llu steps in %.1f s: ed_proxy %.6g energy_distance %.6g\n",
                objective_name(cfg.train.loss.objective).c_str(),
                static_cast<unsigned long long>(run.result.state.step), run.seconds, run.final_eval.ed_proxy,
                run.final_eval.dist_energy);
    return 0;
}

int cmd_sample(const ExperimentConfig& cfg, const std::string& ckpt) {
    const auto theta = load_params(cfg, ckpt);
    const auto [pts, labels] = generate_samples(cfg, theta, cfg.train.seed + 1);
    write_csv(in_out(cfg, "samples.csv"), points_table(pts, labels));
    write_text(in_out(cfg, "samples.svg"),
               svg_scatter(pts, labels, std::to_string(cfg.sample.steps) + "-step samples"));
    std::printf("wrote %zu samples to %s\n", pts.rows(), cfg.out.c_str());
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt) {
    const auto theta = load_params(cfg, ckpt);
    const FieldNet net(resolved_net(cfg));
    const GaussianMixture mix = GaussianMixture::parse(cfg.mixture);
    const Interpolant interp = Interpolant::parse(cfg.interpolant);

    // One batch from the run seed gives the loss columns.
    TrainState scratch;
    scratch.rng = Rng(cfg.train.seed);
    const LossBatch batch = draw_batch(scratch, net, mix, interp, cfg.train);
    std::vector<double> grad(net.num_params(), 0.0);
    const LossValue lv = evaluate_loss(net, theta, interp, cfg.train.loss, batch, &mix, grad);
    const EvalResult ev = evaluate(net, theta, mix, interp, cfg.train, cfg.train.steps);

    MetricsRecord r;
    r.step = cfg.train.steps;
    r.loss_total = lv.total;
    r.loss_cfm = lv.cfm;
    r.loss_sd = lv.sd;
    r.grad_norm = l2_norm(grad);
    r.ed_proxy = ev.ed_proxy;
    r.dist_energy = ev.dist_energy;
    write_text(in_out(cfg, "eval.csv"), std::string(kMetricsHeader) + "\n" + format_metrics_row(r) + "\n");
    std::printf("ed_proxy %.6g energy_distance %.6g\n", ev.ed_proxy, ev.dist_energy);
    return 0;
}

int cmd_landscape(const ExperimentConfig& cfg, const std::string& ckpt, std::size_t res, double radius,
                  std::uint64_t batch_seed) {
    const auto theta = load_params(cfg, ckpt);
    const LandscapeReport rep = probe_landscape(cfg, theta, res, radius, batch_seed);
    CsvTable t;
    t.header = {"alpha", "beta", "loss"};
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    for (std::size_t i = 0; i < rep.resolution; ++i) {
        for (std::size_t j = 0; j < rep.resolution; ++j) {
            t.rows.push_back({num(rep.coords[i]), num(rep.coords[j]), num(rep.grid(i, j))});
        }
    }
    t.comments.push_back("eig1 " + num(rep.eig1) + " eig2 " + num(rep.eig2) + " mean " + num(rep.mean) + " sigma " +
                         num(rep.sigma) + " spikes " + std::to_string(rep.spikes) +
                         (rep.converged ? "" : " (power iteration not converged)"));
    write_csv(in_out(cfg, "landscape.csv"), t);
    write_text(in_out(cfg, "landscape.svg"),
               svg_heatmap(rep.grid, rep.coords, objective_name(cfg.train.loss.objective) + " loss surface"));
    std::printf("sigma %.6g mean %.6g spikes %zu eig1 %.6g eig2 %.6g\n", rep.sigma, rep.mean, rep.spikes, rep.eig1,
                rep.eig2);
    return 0;
}

int cmd_repro(const std::string& figure, const std::string& out, std::size_t seeds) {
    for (const auto& r : repro(figure, out, seeds)) std::printf("%s\n", format_criterion(r).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-map training lab"};
    app.require_subcommand(1);

    Common common;
    std::string ckpt;
    std::size_t resolution = 21;
    double radius = 1.0;
    std::uint64_t batch_seed = 2024;
    std::string figure;
    std::string repro_out = "repro";
    std::size_t seeds = 3;

    auto* train = app.add_subcommand("train", "train one configuration; writes metrics.csv and checkpoint");
    add_common(train, common);
    auto* sample = app.add_subcommand("sample", "few-step samples from a checkpoint (samples.csv, samples.svg)");
    add_common(sample, common);
    sample->add_option("--checkpoint", ckpt, "defaults to <out>/checkpoint.fmlb");
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint into eval.csv");
    add_common(eval, common);
    eval->add_option("--checkpoint", ckpt, "defaults to <out>/checkpoint.fmlb");
    auto* land = app.add_subcommand("landscape", "2-D loss surface along the top Hessian directions");
    add_common(land, common);
    land->add_option("--checkpoint", ckpt, "defaults to <out>/checkpoint.fmlb");
    land->add_option("--resolution", resolution)->check(CLI::Range(2, 401));
    land->add_option("--radius", radius)->check(CLI::NonNegativeNumber);
    land->add_option("--batch-seed", batch_seed);
    auto* rep = app.add_subcommand("repro", "toy-figure reproduction with ordering checks");
    rep->add_option("figure", figure, "fig2, fig3, fig4, fig10 or landscape")->required();
    rep->add_option("--out", repro_out);
    rep->add_option("--seeds", seeds)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*rep) return cmd_repro(figure, repro_out, seeds);
        const ExperimentConfig cfg = resolve(common);
        if (*train) return cmd_train(cfg);
        if (*sample) return cmd_sample(cfg, ckpt);
        if (*eval) return cmd_eval(cfg, ckpt);
        return cmd_landscape(cfg, ckpt, resolution, radius, batch_seed);
    } catch (const NumericError& e) {
        std::cerr << "fmlab: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fmlab: " << e.what() << "\n";
        return 1;
    }
}
