#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fmlab/fieldnet.hpp"

namespace fmlab {

// Collects the differentiable field passes of one scalar loss. The loss code
// reads pass results, writes adjoints dL/d(value) and dL/d(tangent), and the
// recorder turns them into a parameter gradient. Passes evaluated outside the
// recorder are constants (stop-gradient).
class PassRecorder {
public:
    PassRecorder(const FieldNet& net, std::span<const double> theta) : net_(net), theta_(theta) {}

    std::size_t track(const FieldQuery& q, const Tangent* tangent = nullptr);

    const Evaluation& result(std::size_t pass) const { return passes_.at(pass).eval; }
    Matrix& value_adjoint(std::size_t pass);
    // Throws ConfigError when the pass was recorded without a tangent.
    Matrix& tangent_adjoint(std::size_t pass);

    void accumulate(std::span<double> grad) const;

private:
    struct Pass {
        Tape tape;
        Evaluation eval;
        Matrix value_adj;
        Matrix tangent_adj;
        bool has_tangent_adj = false;
    };
    const FieldNet& net_;
    std::span<const double> theta_;
    std::vector<Pass> passes_;
};

// Runs loss(recorder) and returns (loss value, gradient).
std::pair<double, std::vector<double>> value_and_grad(const FieldNet& net, std::span<const double> theta,
                                                      const std::function<double(PassRecorder&)>& loss);

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

// (g(theta + d u) - g(theta - d u)) / (2 d) * |v| with u = v / |v|. Throws DomainError for v = 0.
std::vector<double> hvp(const GradientFn& gradient, std::span<const double> theta, std::span<const double> v,
                        double delta);

}  // namespace fmlab
