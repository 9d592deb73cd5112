#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fmlab/matrix.hpp"
#include "fmlab/mixture.hpp"

namespace fmlab {

inline constexpr int kNullLabel = -1;

struct NetSpec {
    std::size_t data_dim = 2;
    std::size_t hidden = 32;
    std::size_t depth = 5;          // number of affine layers
    std::size_t num_classes = 0;    // 0: unconditional, no label embedding
    std::size_t embed_dim = 16;
    std::size_t fourier = 4;        // frequencies 2^0 .. 2^(fourier-1) for each of t and s
    bool omega_channel = false;     // extra input carrying (omega - 1)
    double time_scale = 1.0;        // maps domain time to normalized time before embedding

    bool operator==(const NetSpec&) const = default;
};

// One batch of field arguments F(x; t, s, c, omega). Empty labels mean the null
// label for every row; empty omega means omega = 1.
struct FieldQuery {
    Matrix x;
    std::vector<double> t;
    std::vector<double> s;
    std::vector<int> labels;
    std::vector<double> omega;

    std::size_t size() const { return x.rows(); }
};

// Per-row input-space direction (dx, dt, ds).
struct Tangent {
    Matrix dx;
    std::vector<double> dt;
    std::vector<double> ds;
};

struct Evaluation {
    Matrix value;
    Matrix tangent;  // empty unless a tangent was supplied
};

// Activations kept for a reverse pass. Primal and tangent rows are stacked
// (rows [0, B) primal, [B, 2B) tangent) so each layer is a single GEMM.
struct Tape {
    std::size_t batch = 0;
    bool has_tangent = false;
    std::vector<int> label_rows;        // embedding row per sample
    std::vector<Matrix> inputs;         // stacked layer inputs, one per affine layer
    std::vector<Matrix> d1;             // activation slope, one per hidden layer
    std::vector<Matrix> d2_tangent;     // act''(a) * tangent(a), one per hidden layer
};

// Small MLP with smooth gating activations, Fourier time features, and an
// optional learned class embedding. Parameters live in a flat vector owned
// by the caller; the network object only describes the architecture.
class FieldNet {
public:
    explicit FieldNet(NetSpec spec);

    const NetSpec& spec() const { return spec_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t num_params() const { return num_params_; }

    // Uniform fan-in initialization; the final layer is zero unless zero_output is false.
    std::vector<double> init_params(Rng& rng, bool zero_output = true) const;

    Evaluation evaluate(std::span<const double> theta, const FieldQuery& q, const Tangent* tangent = nullptr) const;
    Evaluation record(std::span<const double> theta, const FieldQuery& q, const Tangent* tangent, Tape& tape) const;

    // Accumulates d(loss)/d(theta) into grad given adjoints of the output and,
    // for tangent-carrying tapes, of the tangent output.
    void backward(std::span<const double> theta, const Tape& tape, const Matrix& value_adj,
                  const Matrix* tangent_adj, std::span<double> grad) const;

    Matrix apply(std::span<const double> theta, const FieldQuery& q) const;
    Matrix jvp_exact(std::span<const double> theta, const FieldQuery& q, const Tangent& tangent) const;

    // [F(x + eps v; t + eps, s) - F(x - eps v; t - eps, s)] / (2 eps)
    Matrix jvp_approx(std::span<const double> theta, const FieldQuery& q, const Matrix& v, double eps) const;

    // Offsets into the flat parameter vector.
    std::size_t weight_offset(std::size_t layer) const { return weight_offset_[layer]; }
    std::size_t bias_offset(std::size_t layer) const { return bias_offset_[layer]; }
    std::size_t embedding_offset() const { return embedding_offset_; }
    std::size_t layer_in(std::size_t layer) const { return dims_[layer]; }
    std::size_t layer_out(std::size_t layer) const { return dims_[layer + 1]; }

private:
    Evaluation run(std::span<const double> theta, const FieldQuery& q, const Tangent* tangent, Tape* tape) const;
    void validate(std::span<const double> theta, const FieldQuery& q, const Tangent* tangent) const;
    int label_row(int label) const;

    NetSpec spec_;
    std::vector<std::size_t> dims_;
    std::vector<std::size_t> weight_offset_;
    std::vector<std::size_t> bias_offset_;
    std::size_t embedding_offset_ = 0;
    std::size_t input_dim_ = 0;
    std::size_t num_params_ = 0;
};

// Flat-vector helpers used by the optimizer and diagnostics.
double l2_norm(std::span<const double> v);

// Binary checkpoint: "FMLB", u32 version, u32 count + u32 architecture fields,
// f64 parameters, u8 EMA flag, optional f64 EMA parameters. Little-endian.
struct Checkpoint {
    NetSpec spec;
    std::vector<double> theta;
    std::vector<double> theta_ema;  // empty when absent
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace fmlab
