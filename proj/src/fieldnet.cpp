#include "fmlab/fieldnet.hpp"

#include <algorithm>

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "fmlab/error.hpp"
#include "fmlab/simd/kernels.hpp"

namespace fmlab {
namespace {

void transpose(const double* src, std::size_t rows, std::size_t cols, double* dst) {
    constexpr std::size_t kTile = 16;
    for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
        const std::size_t r1 = std::min(rows, r0 + kTile);
        for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
            const std::size_t c1 = std::min(cols, c0 + kTile);
            for (std::size_t c = c0; c < c1; ++c) {
                for (std::size_t r = r0; r < r1; ++r) dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
}

}  // namespace

FieldNet::FieldNet(NetSpec spec) : spec_(spec) {
    if (spec_.data_dim == 0 || spec_.hidden == 0 || spec_.depth < 1) {
        throw ConfigError("network needs data_dim >= 1, hidden >= 1 and depth >= 1");
    }
    if (!(spec_.time_scale > 0.0)) throw ConfigError("network time scale must be positive");
    input_dim_ = spec_.data_dim + 4 * spec_.fourier + (spec_.num_classes > 0 ? spec_.embed_dim : 0) +
                 (spec_.omega_channel ? 1 : 0);
    dims_.push_back(input_dim_);
    for (std::size_t l = 0; l + 1 < spec_.depth; ++l) dims_.push_back(spec_.hidden);
    dims_.push_back(spec_.data_dim);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec_.depth; ++l) {
        weight_offset_.push_back(offset);
        offset += dims_[l] * dims_[l + 1];
        bias_offset_.push_back(offset);
        offset += dims_[l + 1];
    }
    embedding_offset_ = offset;
    if (spec_.num_classes > 0) offset += (spec_.num_classes + 1) * spec_.embed_dim;
    num_params_ = offset;
}

std::vector<double> FieldNet::init_params(Rng& rng, bool zero_output) const {
    std::vector<double> theta(num_params_, 0.0);
    for (std::size_t l = 0; l < spec_.depth; ++l) {
        if (zero_output && l + 1 == spec_.depth) break;
        const double bound = std::sqrt(3.0 / static_cast<double>(dims_[l]));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < dims_[l] * dims_[l + 1]; ++i) theta[weight_offset_[l] + i] = u(rng);
        std::uniform_real_distribution<double> ub(-1.0 / std::sqrt(static_cast<double>(dims_[l])),
                                                  1.0 / std::sqrt(static_cast<double>(dims_[l])));
        for (std::size_t i = 0; i < dims_[l + 1]; ++i) theta[bias_offset_[l] + i] = ub(rng);
    }
    if (spec_.num_classes > 0) {
        std::normal_distribution<double> n(0.0, 1.0);
        for (std::size_t i = 0; i < (spec_.num_classes + 1) * spec_.embed_dim; ++i) {
            theta[embedding_offset_ + i] = n(rng);
        }
    }
    return theta;
}

int FieldNet::label_row(int label) const {
    if (spec_.num_classes == 0) return -1;
    if (label == kNullLabel) return static_cast<int>(spec_.num_classes);
    if (label < 0 || static_cast<std::size_t>(label) >= spec_.num_classes) {
        throw DimensionError("label " + std::to_string(label) + " outside [0, " + std::to_string(spec_.num_classes) +
                             ")");
    }
    return label;
}

void FieldNet::validate(std::span<const double> theta, const FieldQuery& q, const Tangent* tangent) const {
    if (theta.size() != num_params_) {
        throw DimensionError("parameter vector has " + std::to_string(theta.size()) + " entries, network expects " +
                             std::to_string(num_params_));
    }
    const std::size_t b = q.size();
    if (q.x.cols() != spec_.data_dim) throw DimensionError("field input dimension does not match network");
    if (q.t.size() != b || q.s.size() != b) throw DimensionError("field query needs one (t, s) per row");
    if (!q.labels.empty() && q.labels.size() != b) throw DimensionError("field query labels must match batch");
    if (!q.omega.empty() && q.omega.size() != b) throw DimensionError("field query omega must match batch");
    if (tangent != nullptr) {
        if (tangent->dx.rows() != b || tangent->dx.cols() != spec_.data_dim || tangent->dt.size() != b ||
            tangent->ds.size() != b) {
            throw DimensionError("tangent shape does not match field query");
        }
    }
}

Evaluation FieldNet::evaluate(std::span<const double> theta, const FieldQuery& q, const Tangent* tangent) const {
    return run(theta, q, tangent, nullptr);
}

Evaluation FieldNet::record(std::span<const double> theta, const FieldQuery& q, const Tangent* tangent,
                            Tape& tape) const {
    return run(theta, q, tangent, &tape);
}

Matrix FieldNet::apply(std::span<const double> theta, const FieldQuery& q) const {
    return run(theta, q, nullptr, nullptr).value;
}

Matrix FieldNet::jvp_exact(std::span<const double> theta, const FieldQuery& q, const Tangent& tangent) const {
    return run(theta, q, &tangent, nullptr).tangent;
}

Matrix FieldNet::jvp_approx(std::span<const double> theta, const FieldQuery& q, const Matrix& v, double eps) const {
    if (!(eps > 0.0)) throw ConfigError("JVP finite-difference step must be positive");
    require_same_shape(q.x, v, "jvp_approx");
    FieldQuery plus = q;
    FieldQuery minus = q;
    for (std::size_t i = 0; i < q.size(); ++i) {
        for (std::size_t d = 0; d < q.x.cols(); ++d) {
            plus.x(i, d) = q.x(i, d) + eps * v(i, d);
            minus.x(i, d) = q.x(i, d) - eps * v(i, d);
        }
        plus.t[i] = q.t[i] + eps;
        minus.t[i] = q.t[i] - eps;
    }
    const Matrix fp = apply(theta, plus);
    const Matrix fm = apply(theta, minus);
    Matrix out(fp.rows(), fp.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = (fp.data()[i] - fm.data()[i]) / (2.0 * eps);
    return out;
}

Evaluation FieldNet::run(std::span<const double> theta, const FieldQuery& q, const Tangent* tangent,
                         Tape* tape) const {
    validate(theta, q, tangent);
    const auto& k = simd::active();
    const std::size_t b = q.size();
    const bool tan = tangent != nullptr;
    const std::size_t rows = tan ? 2 * b : b;
    const std::size_t nf = spec_.fourier;
    const double ts = spec_.time_scale;

    Matrix h(rows, input_dim_);
    std::vector<int> label_rows(b, -1);
    for (std::size_t i = 0; i < b; ++i) {
        double* row = h.row(i).data();
        for (std::size_t d = 0; d < spec_.data_dim; ++d) row[d] = q.x(i, d);
        std::size_t col = spec_.data_dim;
        const double ut = ts * q.t[i];
        const double us = ts * q.s[i];
        double* trow = tan ? h.row(b + i).data() : nullptr;
        if (tan) {
            for (std::size_t d = 0; d < spec_.data_dim; ++d) trow[d] = tangent->dx(i, d);
        }
        for (int which = 0; which < 2; ++which) {
            const double u = which == 0 ? ut : us;
            const double du = tan ? ts * (which == 0 ? tangent->dt[i] : tangent->ds[i]) : 0.0;
            double freq = 1.0;
            for (std::size_t f = 0; f < nf; ++f, freq *= 2.0) {
                const double sn = std::sin(freq * u);
                const double cs = std::cos(freq * u);
                row[col] = sn;
                row[col + 1] = cs;
                if (tan) {
                    trow[col] = freq * cs * du;
                    trow[col + 1] = -freq * sn * du;
                }
                col += 2;
            }
        }
        if (spec_.num_classes > 0) {
            const int lr = label_row(q.labels.empty() ? kNullLabel : q.labels[i]);
            label_rows[i] = lr;
            const double* emb = theta.data() + embedding_offset_ + static_cast<std::size_t>(lr) * spec_.embed_dim;
            for (std::size_t e = 0; e < spec_.embed_dim; ++e) row[col + e] = emb[e];
            col += spec_.embed_dim;
        }
        if (spec_.omega_channel) {
            row[col] = (q.omega.empty() ? 1.0 : q.omega[i]) - 1.0;
            ++col;
        }
    }

    if (tape != nullptr) {
        tape->batch = b;
        tape->has_tangent = tan;
        tape->label_rows = label_rows;
        tape->inputs.clear();
        tape->d1.clear();
        tape->d2_tangent.clear();
    }

    std::vector<double> wt;
    for (std::size_t l = 0; l < spec_.depth; ++l) {
        const std::size_t in = dims_[l];
        const std::size_t out = dims_[l + 1];
        wt.resize(in * out);
        transpose(theta.data() + weight_offset_[l], out, in, wt.data());
        Matrix a(rows, out);
        k.gemm(rows, out, in, h.data(), in, wt.data(), out, a.data(), out, false);
        const double* bias = theta.data() + bias_offset_[l];
        for (std::size_t i = 0; i < b; ++i) {
            double* r = a.row(i).data();
            for (std::size_t j = 0; j < out; ++j) r[j] += bias[j];
        }
        if (tape != nullptr) tape->inputs.push_back(h);
        if (l + 1 == spec_.depth) {
            Evaluation ev;
            ev.value.resize(b, out);
            std::copy(a.data(), a.data() + b * out, ev.value.data());
            if (tan) {
                ev.tangent.resize(b, out);
                std::copy(a.data() + b * out, a.data() + 2 * b * out, ev.tangent.data());
            }
            return ev;
        }
        Matrix next(rows, out);
        Matrix d1(b, out);
        Matrix d2;
        if (tan) d2.resize(b, out);
        k.activate(b * out, a.data(), next.data(), d1.data(), tan ? d2.data() : nullptr);
        if (tan) {
            // tangent(h) = act'(a) * tangent(a); keep act''(a) * tangent(a) for the reverse pass.
            k.mul(b * out, d1.data(), a.data() + b * out, next.data() + b * out);
            k.mul(b * out, d2.data(), a.data() + b * out, d2.data());
        }
        if (tape != nullptr) {
            tape->d1.push_back(std::move(d1));
            if (tan) tape->d2_tangent.push_back(std::move(d2));
        }
        h = std::move(next);
    }
    return {};
}

void FieldNet::backward(std::span<const double> theta, const Tape& tape, const Matrix& value_adj,
                        const Matrix* tangent_adj, std::span<double> grad) const {
    if (grad.size() != num_params_) throw DimensionError("gradient buffer size does not match network");
    if (tape.inputs.size() != spec_.depth) throw InvariantError("tape was not recorded by this network");
    if (tangent_adj != nullptr && !tape.has_tangent) {
        throw ConfigError("unsupported loss: tangent adjoint supplied for a pass evaluated without a tangent");
    }
    const auto& k = simd::active();
    const std::size_t b = tape.batch;
    // Without a tangent adjoint the tangent rows carry zero adjoint all the way down.
    const bool tan = tangent_adj != nullptr;
    const std::size_t rows = tan ? 2 * b : b;
    const std::size_t out_dim = spec_.data_dim;
    if (value_adj.rows() != b || value_adj.cols() != out_dim) throw DimensionError("output adjoint shape mismatch");
    if (tangent_adj != nullptr && (tangent_adj->rows() != b || tangent_adj->cols() != out_dim)) {
        throw DimensionError("tangent adjoint shape mismatch");
    }

    Matrix g(rows, out_dim);
    std::copy(value_adj.data(), value_adj.data() + b * out_dim, g.data());
    if (tangent_adj != nullptr) std::copy(tangent_adj->data(), tangent_adj->data() + b * out_dim, g.data() + b * out_dim);

    std::vector<double> gt;
    for (std::size_t li = spec_.depth; li-- > 0;) {
        const std::size_t in = dims_[li];
        const std::size_t out = dims_[li + 1];
        const Matrix& h = tape.inputs[li];
        // dW += G^T H over the stacked rows; db += column sums of the primal rows.
        gt.resize(out * rows);
        transpose(g.data(), rows, out, gt.data());
        k.gemm(out, in, rows, gt.data(), rows, h.data(), in, grad.data() + weight_offset_[li], in, true);
        double* gb = grad.data() + bias_offset_[li];
        for (std::size_t i = 0; i < b; ++i) {
            const double* r = g.row(i).data();
            for (std::size_t j = 0; j < out; ++j) gb[j] += r[j];
        }
        if (li == 0 && spec_.num_classes == 0) break;
        Matrix dh(rows, in);
        k.gemm(rows, in, out, g.data(), out, theta.data() + weight_offset_[li], in, dh.data(), in, false);
        if (li == 0) {
            if (spec_.num_classes > 0) {
                const std::size_t col = spec_.data_dim + 4 * spec_.fourier;
                for (std::size_t i = 0; i < b; ++i) {
                    double* ge = grad.data() + embedding_offset_ +
                                 static_cast<std::size_t>(tape.label_rows[i]) * spec_.embed_dim;
                    for (std::size_t e = 0; e < spec_.embed_dim; ++e) ge[e] += dh(i, col + e);
                }
            }
            break;
        }
        const Matrix& d1 = tape.d1[li - 1];
        Matrix next(rows, in);
        if (tan) {
            // adj(a) = act' adj(h) + act'' tangent(a) adj(tangent h); adj(tangent a) = act' adj(tangent h)
            k.mul_add(b * in, d1.data(), dh.data(), tape.d2_tangent[li - 1].data(), dh.data() + b * in, next.data());
            k.mul(b * in, d1.data(), dh.data() + b * in, next.data() + b * in);
        } else {
            k.mul(b * in, d1.data(), dh.data(), next.data());
        }
        g = std::move(next);
    }
}

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
        return std::bit_cast<double>(v);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t time_scale_code(double scale) {
    if (scale == 1.0) return 0;
    if (scale == 2.0 / std::numbers::pi) return 1;
    throw IoError("checkpoint cannot store time scale " + std::to_string(scale));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    const FieldNet net(ckpt.spec);
    if (ckpt.theta.size() != net.num_params()) throw DimensionError("checkpoint parameters do not match spec");
    if (!ckpt.theta_ema.empty() && ckpt.theta_ema.size() != net.num_params()) {
        throw DimensionError("checkpoint EMA parameters do not match spec");
    }
    std::vector<std::uint8_t> out{'F', 'M', 'L', 'B'};
    put_u32(out, kCheckpointVersion);
    const std::vector<std::uint32_t> fields{
        static_cast<std::uint32_t>(ckpt.spec.data_dim),    static_cast<std::uint32_t>(ckpt.spec.hidden),
        static_cast<std::uint32_t>(ckpt.spec.depth),       static_cast<std::uint32_t>(ckpt.spec.num_classes),
        static_cast<std::uint32_t>(ckpt.spec.embed_dim),   static_cast<std::uint32_t>(ckpt.spec.fourier),
        ckpt.spec.omega_channel ? 1u : 0u,                 time_scale_code(ckpt.spec.time_scale)};
    put_u32(out, static_cast<std::uint32_t>(fields.size()));
    for (auto f : fields) put_u32(out, f);
    for (double d : ckpt.theta) put_f64(out, d);
    out.push_back(ckpt.theta_ema.empty() ? 0 : 1);
    for (double d : ckpt.theta_ema) put_f64(out, d);
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const char magic[4] = {'F', 'M', 'L', 'B'};
    for (char m : magic) {
        if (r.u8() != static_cast<std::uint8_t>(m)) throw IoError("not a checkpoint (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    if (count != 8) throw IoError("checkpoint architecture header has " + std::to_string(count) + " fields");
    std::vector<std::uint32_t> f(count);
    for (auto& v : f) v = r.u32();
    Checkpoint ckpt;
    ckpt.spec.data_dim = f[0];
    ckpt.spec.hidden = f[1];
    ckpt.spec.depth = f[2];
    ckpt.spec.num_classes = f[3];
    ckpt.spec.embed_dim = f[4];
    ckpt.spec.fourier = f[5];
    if (f[6] > 1 || f[7] > 1) throw IoError("checkpoint architecture header is corrupt");
    ckpt.spec.omega_channel = f[6] == 1;
    ckpt.spec.time_scale = f[7] == 0 ? 1.0 : 2.0 / std::numbers::pi;
    std::size_t n = 0;
    try {
        n = FieldNet(ckpt.spec).num_params();
    } catch (const ConfigError& e) {
        throw IoError(std::string("checkpoint architecture invalid: ") + e.what());
    }
    ckpt.theta.resize(n);
    for (auto& d : ckpt.theta) d = r.f64();
    const std::uint8_t has_ema = r.u8();
    if (has_ema > 1) throw IoError("checkpoint EMA flag is corrupt");
    if (has_ema == 1) {
        ckpt.theta_ema.resize(n);
        for (auto& d : ckpt.theta_ema) d = r.f64();
    }
    if (!r.done()) throw IoError("checkpoint has trailing bytes");
    return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace fmlab
