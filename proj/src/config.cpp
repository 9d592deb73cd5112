#include "fmlab/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fmlab/error.hpp"

namespace fmlab {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size() || !std::isfinite(d)) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
    return d;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long n = 0;
    try {
        n = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size() || v.front() == '-' || v.front() == '+') {
        throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + v + "'");
    }
    return n;
}

int to_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    int n = 0;
    try {
        n = std::stoi(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    return n;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct Field {
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field count_field(T ExperimentConfig::*section, std::size_t T::*member) {
    return {[=](ExperimentConfig& c, const std::string& k, const std::string& v) {
                (c.*section).*member = static_cast<std::size_t>(to_uint(k, v));
            },
            [=](const ExperimentConfig& c) { return std::to_string((c.*section).*member); }};
}

template <class T>
Field real_field(T ExperimentConfig::*section, double T::*member) {
    return {[=](ExperimentConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = to_double(k, v); },
            [=](const ExperimentConfig& c) { return fmt_double((c.*section).*member); }};
}

template <class T>
Field bool_field(T ExperimentConfig::*section, bool T::*member) {
    return {[=](ExperimentConfig& c, const std::string& k, const std::string& v) { (c.*section).*member = to_bool(k, v); },
            [=](const ExperimentConfig& c) { return bool_text((c.*section).*member); }};
}

Field loss_real(double LossConfig::*member) {
    return {[=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.loss.*member = to_double(k, v); },
            [=](const ExperimentConfig& c) { return fmt_double(c.train.loss.*member); }};
}

// Ordered so format_config emits keys grouped by section.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"data.mixture", {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.mixture = v; },
                          [](const ExperimentConfig& c) { return c.mixture; }}},
        {"data.interpolant",
         {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.interpolant = v; },
          [](const ExperimentConfig& c) { return c.interpolant; }}},
        {"net.hidden", count_field(&ExperimentConfig::net, &NetSpec::hidden)},
        {"net.depth", count_field(&ExperimentConfig::net, &NetSpec::depth)},
        {"net.fourier", count_field(&ExperimentConfig::net, &NetSpec::fourier)},
        {"net.classes", count_field(&ExperimentConfig::net, &NetSpec::num_classes)},
        {"net.embed_dim", count_field(&ExperimentConfig::net, &NetSpec::embed_dim)},
        {"net.omega_channel", bool_field(&ExperimentConfig::net, &NetSpec::omega_channel)},
        {"loss.objective",
         {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.train.loss.objective = parse_objective(v); },
          [](const ExperimentConfig& c) { return objective_name(c.train.loss.objective); }}},
        {"loss.guide",
         {[](ExperimentConfig& c, const std::string&, const std::string& v) {
              if (v == "default") {
                  c.train.loss.guide.reset();
              } else {
                  c.train.loss.guide = parse_guide(v);
              }
          },
          [](const ExperimentConfig& c) {
              return c.train.loss.guide ? guide_name(*c.train.loss.guide) : std::string("default");
          }}},
        {"loss.jvp",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
              JvpMode m;
              if (v.rfind("approx:", 0) == 0) {
                  m.exact = false;
                  m.eps = to_double(k, v.substr(7));
              } else if (v == "approx") {
                  m.exact = false;
              } else if (v != "exact") {
                  throw ConfigError("key '" + k + "': expected exact or approx:<eps>, got '" + v + "'");
              }
              c.train.loss.jvp = m;
          },
          [](const ExperimentConfig& c) {
              const auto& j = c.train.loss.jvp;
              return j.exact ? std::string("exact") : "approx:" + fmt_double(j.eps);
          }}},
        {"loss.weighting",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
              auto& l = c.train.loss;
              const LossConfig def;
              l.adaptive_p = def.adaptive_p;
              l.adaptive_eta = def.adaptive_eta;
              if (v.rfind("adaptive:", 0) == 0) {
                  const std::string rest = v.substr(9);
                  const auto colon = rest.find(':');
                  if (colon == std::string::npos) {
                      throw ConfigError("key '" + k + "': expected adaptive:<p>:<eta>, got '" + v + "'");
                  }
                  l.weighting = Weighting::Adaptive;
                  l.adaptive_p = to_double(k, rest.substr(0, colon));
                  l.adaptive_eta = to_double(k, rest.substr(colon + 1));
              } else {
                  l.weighting = parse_weighting(v);
              }
          },
          [](const ExperimentConfig& c) {
              const auto& l = c.train.loss;
              if (l.weighting != Weighting::Adaptive) return weighting_name(l.weighting);
              return "adaptive:" + fmt_double(l.adaptive_p) + ":" + fmt_double(l.adaptive_eta);
          }}},
        {"loss.omega", loss_real(&LossConfig::omega)},
        {"loss.label_dropout", loss_real(&LossConfig::label_dropout)},
        {"loss.lambda_cfm", loss_real(&LossConfig::lambda_cfm)},
        {"loss.lambda_sd", loss_real(&LossConfig::lambda_sd)},
        {"loss.ct_weight",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.loss.ct_weight = to_bool(k, v); },
          [](const ExperimentConfig& c) { return bool_text(c.train.loss.ct_weight); }}},
        {"train.batch_size", count_field(&ExperimentConfig::train, &TrainConfig::batch_size)},
        {"train.steps", count_field(&ExperimentConfig::train, &TrainConfig::steps)},
        {"train.lr", real_field(&ExperimentConfig::train, &TrainConfig::lr)},
        {"train.beta1", real_field(&ExperimentConfig::train, &TrainConfig::beta1)},
        {"train.beta2", real_field(&ExperimentConfig::train, &TrainConfig::beta2)},
        {"train.adam_eps", real_field(&ExperimentConfig::train, &TrainConfig::adam_eps)},
        {"train.ema_decay", real_field(&ExperimentConfig::train, &TrainConfig::ema_decay)},
        {"train.time_a",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.time_dist.a = to_double(k, v); },
          [](const ExperimentConfig& c) { return fmt_double(c.train.time_dist.a); }}},
        {"train.time_b",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.time_dist.b = to_double(k, v); },
          [](const ExperimentConfig& c) { return fmt_double(c.train.time_dist.b); }}},
        {"train.fixed_s", bool_field(&ExperimentConfig::train, &TrainConfig::fixed_s)},
        {"train.t_min", real_field(&ExperimentConfig::train, &TrainConfig::t_min)},
        {"train.eval_every", count_field(&ExperimentConfig::train, &TrainConfig::eval_every)},
        {"train.eval_samples", count_field(&ExperimentConfig::train, &TrainConfig::eval_samples)},
        {"train.eval_steps", count_field(&ExperimentConfig::train, &TrainConfig::sample_steps)},
        {"sample.steps", count_field(&ExperimentConfig::sample, &SampleSettings::steps)},
        {"sample.t_min", real_field(&ExperimentConfig::sample, &SampleSettings::t_min)},
        {"sample.count", count_field(&ExperimentConfig::sample, &SampleSettings::count)},
        {"sample.cfg_omega", real_field(&ExperimentConfig::sample, &SampleSettings::cfg_omega)},
        {"sample.label",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.sample.label = to_int(k, v); },
          [](const ExperimentConfig& c) { return std::to_string(c.sample.label); }}},
        {"run.seed",
         {[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_uint(k, v); },
          [](const ExperimentConfig& c) { return std::to_string(c.train.seed); }}},
        {"run.out", {[](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = v; },
                     [](const ExperimentConfig& c) { return c.out; }}},
    };
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& [name, f] : fields()) {
        if (name == key) return &f;
    }
    return nullptr;
}

bool same_loss(const LossConfig& a, const LossConfig& b) {
    // jvp.eps only matters for the approximate JVP, p and eta only for adaptive weighting
    const bool adaptive = a.weighting == Weighting::Adaptive;
    return a.objective == b.objective && a.guide == b.guide && a.jvp.exact == b.jvp.exact &&
           (a.jvp.exact || a.jvp.eps == b.jvp.eps) && a.weighting == b.weighting &&
           (!adaptive || (a.adaptive_p == b.adaptive_p && a.adaptive_eta == b.adaptive_eta)) &&
           a.omega == b.omega && a.label_dropout == b.label_dropout && a.lambda_cfm == b.lambda_cfm &&
           a.lambda_sd == b.lambda_sd && a.ct_weight == b.ct_weight;
}

bool same_train(const TrainConfig& a, const TrainConfig& b) {
    return same_loss(a.loss, b.loss) && a.batch_size == b.batch_size && a.steps == b.steps && a.lr == b.lr &&
           a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.adam_eps == b.adam_eps && a.ema_decay == b.ema_decay &&
           a.time_dist.a == b.time_dist.a && a.time_dist.b == b.time_dist.b && a.fixed_s == b.fixed_s &&
           a.t_min == b.t_min && a.seed == b.seed && a.eval_every == b.eval_every &&
           a.eval_samples == b.eval_samples && a.sample_steps == b.sample_steps;
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
    return mixture == o.mixture && interpolant == o.interpolant && net == o.net && same_train(train, o.train) &&
           sample.steps == o.sample.steps && sample.t_min == o.sample.t_min && sample.count == o.sample.count &&
           sample.cfg_omega == o.sample.cfg_omega && sample.label == o.sample.label && out == o.out;
}

std::string weighting_name(Weighting w) {
    switch (w) {
        case Weighting::None:
            return "none";
        case Weighting::Cosine:
            return "cosine";
        case Weighting::Adaptive:
            return "adaptive";
    }
    return "?";
}

Weighting parse_weighting(const std::string& name) {
    if (name == "none") return Weighting::None;
    if (name == "cosine") return Weighting::Cosine;
    if (name == "adaptive") return Weighting::Adaptive;
    throw ConfigError("unknown weighting '" + name + "' (expected none, cosine, adaptive)");
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
    try {
        f->set(cfg, key, value);
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        if (msg.find("key '") != std::string::npos) throw;
        throw ConfigError("key '" + key + "': " + msg);
    }
}

NetSpec resolved_net(const ExperimentConfig& cfg) {
    NetSpec spec = cfg.net;
    const Interpolant interp = Interpolant::parse(cfg.interpolant);
    spec.data_dim = GaussianMixture::parse(cfg.mixture).dim();
    spec.time_scale = 1.0 / interp.domain_end();
    return spec;
}

void validate(const ExperimentConfig& cfg) {
    const GaussianMixture mix = GaussianMixture::parse(cfg.mixture);
    Interpolant::parse(cfg.interpolant);
    const NetSpec spec = resolved_net(cfg);
    FieldNet net(spec);
    validate(cfg.train, spec);
    if (spec.num_classes > 0 && mix.components() > spec.num_classes) {
        throw ConfigError("net.classes must be at least the number of mixture components (" +
                          std::to_string(mix.components()) + ")");
    }
    if (cfg.sample.steps == 0) throw ConfigError("sample.steps must be >= 1");
    if (!(cfg.sample.t_min >= 0.0 && cfg.sample.t_min < 1.0)) throw ConfigError("sample.t_min must lie in [0, 1)");
    if (cfg.sample.count == 0) throw ConfigError("sample.count must be >= 1");
    if (!(cfg.sample.cfg_omega >= 0.0)) throw ConfigError("sample.cfg_omega must be >= 0");
    if (cfg.sample.label >= 0 && static_cast<std::size_t>(cfg.sample.label) >= spec.num_classes) {
        throw ConfigError("sample.label out of range for net.classes");
    }
    if (cfg.sample.label < -1) throw ConfigError("sample.label must be -1 or a class index");
    if (cfg.out.empty()) throw ConfigError("run.out must not be empty");
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + body + "'");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) throw ConfigError(where + "missing key before '='");
        if (auto it = seen.find(key); it != seen.end()) {
            throw ConfigError(where + "key '" + key + "' already set on line " + std::to_string(it->second));
        }
        seen[key] = lineno;
        try {
            set_config_value(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    try {
        validate(cfg);
    } catch (const Error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& [name, f] : fields()) {
        const std::string sec = name.substr(0, name.find('.'));
        if (sec != section && !section.empty()) out += "\n";
        section = sec;
        out += name + " = " + f.get(cfg) + "\n";
    }
    return out;
}

}  // namespace fmlab
