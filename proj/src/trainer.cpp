#include "fmlab/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fmlab/error.hpp"
#include "fmlab/sampler.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fmlab {

namespace {

Rng derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
    return Rng(seq);
}

// Every step allocates and frees the same few megabytes of activations; keep
// them on the heap instead of returning pages to the OS between steps.
void keep_heap_pages() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)once;
#endif
}

constexpr std::uint64_t kTagEval = 1;
constexpr std::uint64_t kTagHeldOutNoise = 2;
constexpr std::uint64_t kTagHeldOutData = 3;

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_vec(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
    put_u64(out, v.size());
    for (double d : v) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
    std::uint64_t u64() {
        if (pos_ + 8 > b_.size()) throw IoError("train state truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
        return v;
    }
    std::vector<double> vec() {
        const std::uint64_t n = u64();
        if (n > (b_.size() - pos_) / 8) throw IoError("train state truncated");
        std::vector<double> v(n);
        for (auto& d : v) d = std::bit_cast<double>(u64());
        return v;
    }
    std::string bytes(std::size_t n) {
        if (pos_ + n > b_.size()) throw IoError("train state truncated");
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

const char* const kMetricsHeader = "step,loss_total,loss_cfm,loss_sd,grad_norm,ed_proxy,dist_energy";

std::string format_metrics_row(const MetricsRecord& r) {
    std::string s = std::to_string(r.step) + "," + fmt(r.loss_total) + "," + fmt(r.loss_cfm) + "," + fmt(r.loss_sd) +
                    "," + fmt(r.grad_norm) + ",";
    if (r.ed_proxy) s += fmt(*r.ed_proxy);
    s += ",";
    if (r.dist_energy) s += fmt(*r.dist_energy);
    return s;
}

void validate(const TrainConfig& cfg, const NetSpec& spec) {
    validate(cfg.loss, spec);
    if (cfg.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(cfg.lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(cfg.adam_eps >= 0.0)) throw ConfigError("train.adam_eps must be >= 0");
    if (!(cfg.ema_decay >= 0.0 && cfg.ema_decay < 1.0)) throw ConfigError("train.ema_decay must lie in [0, 1)");
    if (!(cfg.time_dist.a > 0.0 && cfg.time_dist.b > 0.0)) throw ConfigError("time distribution needs Beta a, b > 0");
    if (!(cfg.t_min >= 0.0 && cfg.t_min < 1.0)) throw ConfigError("train.t_min must lie in [0, 1)");
    if (cfg.eval_samples == 0) throw ConfigError("eval.samples must be >= 1");
    if (cfg.sample_steps == 0) throw ConfigError("sample.steps must be >= 1");
}

TrainState init_state(const FieldNet& net, const TrainConfig& cfg) {
    TrainState s;
    s.rng = Rng(cfg.seed);
    s.theta = net.init_params(s.rng);
    s.theta_ema = s.theta;
    s.m.assign(s.theta.size(), 0.0);
    s.v.assign(s.theta.size(), 0.0);
    return s;
}

std::vector<std::uint8_t> encode_state(const TrainState& state) {
    std::vector<std::uint8_t> out{'F', 'M', 'L', 'S'};
    put_u64(out, 1);
    put_u64(out, state.step);
    put_vec(out, state.theta);
    put_vec(out, state.theta_ema);
    put_vec(out, state.m);
    put_vec(out, state.v);
    std::ostringstream os;
    os << state.rng;
    const std::string rng = os.str();
    put_u64(out, rng.size());
    out.insert(out.end(), rng.begin(), rng.end());
    return out;
}

TrainState decode_state(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || bytes[0] != 'F' || bytes[1] != 'M' || bytes[2] != 'L' || bytes[3] != 'S') {
        throw IoError("not a train state (bad magic)");
    }
    Reader r(bytes.subspan(4));
    if (r.u64() != 1) throw IoError("unsupported train state version");
    TrainState s;
    s.step = r.u64();
    s.theta = r.vec();
    s.theta_ema = r.vec();
    s.m = r.vec();
    s.v = r.vec();
    const std::uint64_t n = r.u64();
    std::istringstream is(r.bytes(n));
    is >> s.rng;
    if (!is) throw IoError("train state RNG is corrupt");
    if (!r.done()) throw IoError("train state has trailing bytes");
    if (s.theta_ema.size() != s.theta.size() || s.m.size() != s.theta.size() || s.v.size() != s.theta.size()) {
        throw IoError("train state vectors differ in length");
    }
    return s;
}

void write_state(const std::string& path, const TrainState& state) {
    const auto bytes = encode_state(state);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

TrainState read_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open train state " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_state(bytes);
}

LossBatch draw_batch(TrainState& state, const FieldNet& net, const GaussianMixture& mixture,
                     const Interpolant& interp, const TrainConfig& cfg) {
    const std::size_t n = cfg.batch_size;
    Rng& rng = state.rng;
    LossBatch b;
    DataBatch data = sample_data(mixture, rng, n);
    b.x = std::move(data.x);
    b.z.resize(n, mixture.dim());
    {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& v : b.z.flat()) v = normal(rng);
    }
    b.t.resize(n);
    b.s.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto [t, s] = sample_times_normalized(rng, cfg.time_dist);
        t = std::max(t, cfg.t_min);
        s = cfg.fixed_s ? 0.0 : std::min(s, t);
        b.t[i] = interp.to_domain(t);
        b.s[i] = interp.to_domain(s);
    }
    if (net.spec().num_classes > 0) {
        if (mixture.components() > net.spec().num_classes) {
            throw ConfigError("network has fewer classes than the mixture has components");
        }
        b.labels = std::move(data.labels);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int& l : b.labels) {
            if (u(rng) < cfg.loss.label_dropout) l = kNullLabel;
        }
    }
    if (cfg.loss.objective == Objective::iSD_C) {
        std::uniform_real_distribution<double> u(1.0, cfg.loss.omega);
        b.omega.resize(n);
        for (double& w : b.omega) w = cfg.loss.omega > 1.0 ? u(rng) : 1.0;
    }
    return b;
}

MetricsRecord train_step(TrainState& state, const FieldNet& net, const GaussianMixture& mixture,
                         const Interpolant& interp, const TrainConfig& cfg) {
    const Rng saved = state.rng;
    const LossBatch batch = draw_batch(state, net, mixture, interp, cfg);
    std::vector<double> grad(net.num_params(), 0.0);
    const LossValue lv = evaluate_loss(net, state.theta, interp, cfg.loss, batch, &mixture, grad);
    const double gnorm = l2_norm(grad);
    if (!std::isfinite(lv.total) || !std::isfinite(gnorm) || !all_finite(grad)) {
        state.rng = saved;
        std::ostringstream os;
        os << "non-finite " << (std::isfinite(lv.total) ? "gradient" : "loss") << " at step " << state.step + 1
           << " (loss_total=" << lv.total << ", grad_norm=" << gnorm << ")";
        throw NumericError(os.str());
    }
    ++state.step;
    const double k = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, k);
    const double bc2 = 1.0 - std::pow(cfg.beta2, k);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        state.theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        state.theta_ema[i] = cfg.ema_decay * state.theta_ema[i] + (1.0 - cfg.ema_decay) * state.theta[i];
    }
    MetricsRecord r;
    r.step = state.step;
    r.loss_total = lv.total;
    r.loss_cfm = lv.cfm;
    r.loss_sd = lv.sd;
    r.grad_norm = gnorm;
    return r;
}

std::span<const double> eval_params(const TrainState& state, const TrainConfig& cfg) {
    return cfg.ema_decay > 0.0 ? std::span<const double>(state.theta_ema) : std::span<const double>(state.theta);
}

EvalResult evaluate(const FieldNet& net, std::span<const double> theta, const GaussianMixture& mixture,
                    const Interpolant& interp, const TrainConfig& cfg, std::uint64_t step) {
    EvalResult out;
    Rng rng = derived_rng(cfg.seed, kTagEval, step);
    out.ed_proxy = ed_proxy(net, theta, mixture, interp, cfg.eval_samples, rng, cfg.time_dist, cfg.t_min);

    const std::size_t n = cfg.eval_samples;
    Rng noise_rng = derived_rng(cfg.seed, kTagHeldOutNoise, 0);
    Rng data_rng = derived_rng(cfg.seed, kTagHeldOutData, 0);
    const DataBatch held_out = sample_data(mixture, data_rng, n);
    Matrix z(n, mixture.dim());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : z.flat()) v = normal(noise_rng);
    std::vector<int> labels;
    if (net.spec().num_classes > 0) labels = held_out.labels;
    const Matrix samples =
        few_step_sample(net, theta, interp, z, uniform_schedule(interp, cfg.sample_steps, cfg.t_min), labels);
    out.dist_energy = energy_distance(samples, held_out.x);
    return out;
}

RunResult run_experiment(const FieldNet& net, const GaussianMixture& mixture, const Interpolant& interp,
                         const TrainConfig& cfg, const std::string& csv_path, std::optional<TrainState> start) {
    validate(cfg, net.spec());
    keep_heap_pages();
    RunResult res;
    res.state = start ? std::move(*start) : init_state(net, cfg);
    if (res.state.theta.size() != net.num_params()) throw DimensionError("train state does not match network");
    std::ofstream csv;
    if (!csv_path.empty()) {
        csv.open(csv_path, std::ios::trunc);
        if (!csv) throw IoError("cannot open " + csv_path + " for writing");
        csv << kMetricsHeader << "\n";
    }
    while (res.state.step < cfg.steps) {
        MetricsRecord r;
        try {
            r = train_step(res.state, net, mixture, interp, cfg);
        } catch (const NumericError& e) {
            res.failure = e.what();
            if (csv) csv << "# " << e.what() << "\n";
            break;
        }
        if ((cfg.eval_every > 0 && r.step % cfg.eval_every == 0) || r.step == cfg.steps) {
            const EvalResult ev = evaluate(net, eval_params(res.state, cfg), mixture, interp, cfg, r.step);
            r.ed_proxy = ev.ed_proxy;
            r.dist_energy = ev.dist_energy;
        }
        if (csv) csv << format_metrics_row(r) << "\n";
        res.history.push_back(r);
    }
    if (csv) {
        csv.flush();
        if (!csv) throw IoError("failed writing " + csv_path);
    }
    return res;
}

}  // namespace fmlab
