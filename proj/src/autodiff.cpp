#include "fmlab/autodiff.hpp"

#include "fmlab/error.hpp"

namespace fmlab {

std::size_t PassRecorder::track(const FieldQuery& q, const Tangent* tangent) {
    Pass p;
    p.eval = net_.record(theta_, q, tangent, p.tape);
    passes_.push_back(std::move(p));
    return passes_.size() - 1;
}

Matrix& PassRecorder::value_adjoint(std::size_t pass) {
    Pass& p = passes_.at(pass);
    if (p.value_adj.empty()) p.value_adj.resize(p.eval.value.rows(), p.eval.value.cols());
    return p.value_adj;
}

Matrix& PassRecorder::tangent_adjoint(std::size_t pass) {
    Pass& p = passes_.at(pass);
    if (!p.tape.has_tangent) {
        throw ConfigError("unsupported loss: tangent adjoint requested for a pass evaluated without a tangent");
    }
    if (!p.has_tangent_adj) {
        p.tangent_adj.resize(p.eval.tangent.rows(), p.eval.tangent.cols());
        p.has_tangent_adj = true;
    }
    return p.tangent_adj;
}

void PassRecorder::accumulate(std::span<double> grad) const {
    for (const Pass& p : passes_) {
        if (p.value_adj.empty() && !p.has_tangent_adj) continue;
        Matrix zero;
        const Matrix* va = &p.value_adj;
        if (p.value_adj.empty()) {
            zero.resize(p.eval.value.rows(), p.eval.value.cols());
            va = &zero;
        }
        net_.backward(theta_, p.tape, *va, p.has_tangent_adj ? &p.tangent_adj : nullptr, grad);
    }
}

std::pair<double, std::vector<double>> value_and_grad(const FieldNet& net, std::span<const double> theta,
                                                      const std::function<double(PassRecorder&)>& loss) {
    PassRecorder rec(net, theta);
    const double value = loss(rec);
    std::vector<double> grad(net.num_params(), 0.0);
    rec.accumulate(grad);
    return {value, std::move(grad)};
}

std::vector<double> hvp(const GradientFn& gradient, std::span<const double> theta, std::span<const double> v,
                        double delta) {
    if (!(delta > 0.0)) throw DomainError("hvp step must be positive");
    if (v.size() != theta.size()) throw DimensionError("hvp direction does not match parameters");
    const double norm = l2_norm(v);
    if (norm == 0.0) throw DomainError("hvp direction is the zero vector");
    std::vector<double> plus(theta.begin(), theta.end());
    std::vector<double> minus(theta.begin(), theta.end());
    for (std::size_t i = 0; i < v.size(); ++i) {
        plus[i] += delta * v[i] / norm;
        minus[i] -= delta * v[i] / norm;
    }
    const auto gp = gradient(plus);
    const auto gm = gradient(minus);
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * delta) * norm;
    return out;
}

}  // namespace fmlab
