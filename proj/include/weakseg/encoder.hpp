#pragma once

#include <cmath>
#include <optional>
#include <string_view>
#include <string>
#include <vector>

#include "weakseg/optim.hpp"
#include "weakseg/tensor.hpp"
#include "weakseg/windowing.hpp"

namespace weakseg {

// --- positional encoding ------------------------------------------------------

enum class PeVariant { sinusoidal, learned, none };
enum class PeTarget { window, video, both };

PeVariant parse_pe_variant(std::string_view s);
PeTarget parse_pe_target(std::string_view s);
std::string to_string(PeVariant v);
std::string to_string(PeTarget t);

/// sin for even d, cos for odd d, both at frequency 10000^(-2*floor(d/2)/D).
/// `position` may be negative (video-absolute encoding of padding rows).
template <typename Scalar = double>
Scalar sinusoid(Index position, Index d, Index dim) {
    using std::cos;
    using std::pow;
    using std::sin;
    const Scalar angle = static_cast<Scalar>(position) /
                         pow(Scalar(10000), static_cast<Scalar>(2 * (d / 2)) / static_cast<Scalar>(dim));
    return d % 2 == 0 ? sin(angle) : cos(angle);
}

template <typename Scalar = double>
MatrixX<Scalar> sinusoidal_pe(Index size, Index dim) {
    if (size < 1 || dim < 1) throw std::invalid_argument("sinusoidal_pe: size and dim must be >= 1");
    MatrixX<Scalar> p(size, dim);
    for (Index s = 0; s < size; ++s)
        for (Index d = 0; d < dim; ++d) p(s, d) = sinusoid<Scalar>(s, d, dim);
    return p;
}

/// Position table for a whole stack, (T*S) x dim. Window rows use the
/// in-window index s, video rows the absolute frame index of the row, and
/// `both` takes the window code on even sin/cos pairs and the video code on
/// odd ones.
Matrix stacked_pe(Index frames, Index size, Index dim, PeTarget target);

// --- linearized attention -------------------------------------------------------

template <typename Scalar>
Scalar elu_plus_one(Scalar x) {
    using std::exp;
    return x > Scalar(0) ? x + Scalar(1) : exp(x);
}

/// Attention with positive feature maps already applied:
/// out_i = phi_q_i S / (phi_q_i z) with S = phi_k^T V and z = phi_k^T 1.
template <typename DQ, typename DK, typename DV>
MatrixX<typename DV::Scalar> feature_map_attention(const Eigen::MatrixBase<DQ>& phi_q, const Eigen::MatrixBase<DK>& phi_k,
                                                   const Eigen::MatrixBase<DV>& v) {
    using Scalar = typename DV::Scalar;
    if (phi_k.rows() != v.rows() || phi_q.cols() != phi_k.cols())
        throw DimensionError("attention: query/key/value shapes disagree");
    const MatrixX<Scalar> kv = phi_k.transpose() * v;
    const RowVectorX<Scalar> z = phi_k.colwise().sum();
    MatrixX<Scalar> out = phi_q * kv;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> den = phi_q * z.transpose();
    out.array().colwise() /= den.array();
    return out;
}

/// Linearized softmax-free attention with phi = elu + 1.
template <typename DQ, typename DK, typename DV>
MatrixX<typename DV::Scalar> linear_attention(const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DK>& k,
                                              const Eigen::MatrixBase<DV>& v) {
    using Scalar = typename DV::Scalar;
    if (q.rows() != k.rows() || k.rows() != v.rows()) throw DimensionError("linear_attention: row counts differ");
    auto phi = [](Scalar x) { return elu_plus_one(x); };
    return feature_map_attention(q.unaryExpr(phi), k.unaryExpr(phi), v);
}

/// Differentiable grouped multi-head form. Rows come in groups of `group`
/// keys/values; `phi_q` holds either `group` queries per group or one.
/// Column blocks of width cols/heads are independent heads.
Tensor kernel_attention(const Tensor& phi_q, const Tensor& phi_k, const Tensor& v, Index group, Index heads);

// --- encoder -------------------------------------------------------------------------

struct EncoderConfig {
    Index input_dim = 64;
    Index classes = 2;
    Index window = 32;
    Index model_dim = 64;
    Index heads = 4;
    Index head_dim = 64;
    Index ff_dim = 256;
    Index layers = 1;
    double dropout = 0.5;
    PeVariant pe = PeVariant::sinusoidal;
    PeTarget pe_target = PeTarget::window;

    void validate() const;
};

struct EncoderLayer {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

struct EncoderParams {
    EncoderConfig config;
    Tensor in_w, in_b;  // undefined when input_dim == model_dim
    Tensor pe_table;    // learned variant only, window x model_dim
    std::vector<EncoderLayer> layers;
    Tensor out_gain, out_bias;
    Tensor head_w, head_b;

    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    static EncoderParams init(const EncoderConfig& config, Rng& rng);

    /// Stable names in a fixed order, used by the optimizer and checkpoints.
    NamedParams named() const;
    /// Deep copy with fresh leaves.
    EncoderParams clone() const;
};

/// Frame posteriors with their log form kept on the graph for losses.
struct EncoderOutput {
    Tensor log_posteriors;  // T x classes
    Tensor encoded;         // T x model_dim, e_t before the head

    Matrix posteriors() const { return log_posteriors.value().array().exp(); }
};

/// Runs the encoder over every window and reads each window's center row.
/// `rng` drives dropout and may be null when !train.
EncoderOutput encode(const WindowStack& stack, const EncoderParams& params, bool train, Rng* rng = nullptr);

/// T x S weights from each window's center query to its positions, first
/// layer, averaged over heads.
Matrix attention_map(const WindowStack& stack, const EncoderParams& params);

}  // namespace weakseg
