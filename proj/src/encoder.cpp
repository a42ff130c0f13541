#include "weakseg/encoder.hpp"

namespace weakseg {

PeVariant parse_pe_variant(std::string_view s) {
    if (s == "sinusoidal") return PeVariant::sinusoidal;
    if (s == "learned") return PeVariant::learned;
    if (s == "none") return PeVariant::none;
    throw std::invalid_argument("unknown positional encoding '" + std::string(s) + "' (sinusoidal|learned|none)");
}

PeTarget parse_pe_target(std::string_view s) {
    if (s == "window") return PeTarget::window;
    if (s == "video") return PeTarget::video;
    if (s == "both") return PeTarget::both;
    throw std::invalid_argument("unknown positional encoding target '" + std::string(s) + "' (window|video|both)");
}

std::string to_string(PeVariant v) {
    switch (v) {
        case PeVariant::sinusoidal: return "sinusoidal";
        case PeVariant::learned: return "learned";
        case PeVariant::none: return "none";
    }
    return "?";
}

std::string to_string(PeTarget t) {
    switch (t) {
        case PeTarget::window: return "window";
        case PeTarget::video: return "video";
        case PeTarget::both: return "both";
    }
    return "?";
}

Matrix stacked_pe(Index frames, Index size, Index dim, PeTarget target) {
    RowVector inv_freq(dim);
    for (Index d = 0; d < dim; ++d)
        inv_freq(d) = 1.0 / std::pow(10000.0, static_cast<double>(2 * (d / 2)) / static_cast<double>(dim));
    auto code = [&](double position, Index d) {
        const double angle = position * inv_freq(d);
        return d % 2 == 0 ? std::sin(angle) : std::cos(angle);
    };
    Matrix window_pe(size, dim);
    for (Index s = 0; s < size; ++s)
        for (Index d = 0; d < dim; ++d) window_pe(s, d) = code(static_cast<double>(s), d);
    Matrix out(frames * size, dim);
    for (Index i = 0; i < frames; ++i) {
        const Index start = window_start(i, size);
        for (Index s = 0; s < size; ++s) {
            const double j = static_cast<double>(start + s);
            for (Index d = 0; d < dim; ++d) {
                const bool use_video = target == PeTarget::video || (target == PeTarget::both && (d / 2) % 2 == 1);
                out(i * size + s, d) = use_video ? code(j, d) : window_pe(s, d);
            }
        }
    }
    return out;
}

// --- kernel attention ------------------------------------------------------------

Tensor kernel_attention(const Tensor& phi_q, const Tensor& phi_k, const Tensor& v, Index group, Index heads) {
    if (group < 1 || heads < 1) throw DimensionError("kernel_attention: group and heads must be >= 1");
    if (phi_k.rows() != v.rows() || phi_k.rows() % group != 0)
        throw DimensionError("kernel_attention: key/value rows must be a multiple of the group size");
    if (phi_q.cols() != phi_k.cols() || phi_k.cols() % heads != 0 || v.cols() % heads != 0)
        throw DimensionError("kernel_attention: head widths disagree");
    const Index groups = v.rows() / group;
    if (phi_q.rows() != groups * group && phi_q.rows() != groups)
        throw DimensionError("kernel_attention: queries must be one per key or one per group");
    const Index per_group = phi_q.rows() / groups;
    const Index dk = phi_k.cols() / heads;
    const Index dv = v.cols() / heads;

    const Matrix& Q = phi_q.value();
    const Matrix& K = phi_k.value();
    const Matrix& V = v.value();
    Matrix out(phi_q.rows(), v.cols());
    for (Index g = 0; g < groups; ++g)
        for (Index h = 0; h < heads; ++h)
            out.block(g * per_group, h * dv, per_group, dv) =
                feature_map_attention(Q.block(g * per_group, h * dk, per_group, dk), K.block(g * group, h * dk, group, dk),
                                      V.block(g * group, h * dv, group, dv));

    Matrix saved = out;
    return make_result(Shape{phi_q.rows(), v.cols()}, std::move(out), {phi_q, phi_k, v},
                       [phi_q, phi_k, v, group, heads, groups, per_group, dk, dv,
                        A = std::move(saved)](detail::Node& self) {
                           const Matrix& Q = phi_q.value();
                           const Matrix& K = phi_k.value();
                           const Matrix& V = v.value();
                           Matrix dQ = Matrix::Zero(Q.rows(), Q.cols());
                           Matrix dK = Matrix::Zero(K.rows(), K.cols());
                           Matrix dV = Matrix::Zero(V.rows(), V.cols());
                           for (Index g = 0; g < groups; ++g) {
                               for (Index h = 0; h < heads; ++h) {
                                   const auto q = Q.block(g * per_group, h * dk, per_group, dk);
                                   const auto k = K.block(g * group, h * dk, group, dk);
                                   const auto vv = V.block(g * group, h * dv, group, dv);
                                   const auto a = A.block(g * per_group, h * dv, per_group, dv);
                                   const auto da = self.grad.block(g * per_group, h * dv, per_group, dv);
                                   const Matrix kv = k.transpose() * vv;
                                   const RowVector z = k.colwise().sum();
                                   const Vector den = q * z.transpose();
                                   Matrix dnum = da;
                                   dnum.array().colwise() /= den.array();
                                   const Vector dden = -(da.cwiseProduct(a).rowwise().sum().array() / den.array()).matrix();
                                   dQ.block(g * per_group, h * dk, per_group, dk) =
                                       dnum * kv.transpose() + dden * z;
                                   const Matrix dkv = q.transpose() * dnum;
                                   const RowVector dz = dden.transpose() * q;
                                   dK.block(g * group, h * dk, group, dk) =
                                       (vv * dkv.transpose()).rowwise() + dz;
                                   dV.block(g * group, h * dv, group, dv) = k * dkv;
                               }
                           }
                           if (phi_q.requires_grad()) phi_q.node()->accumulate(dQ);
                           if (phi_k.requires_grad()) phi_k.node()->accumulate(dK);
                           if (v.requires_grad()) v.node()->accumulate(dV);
                       });
}

// --- parameters ---------------------------------------------------------------------

void EncoderConfig::validate() const {
    if (input_dim < 1 || classes < 1 || window < 1 || model_dim < 1 || heads < 1 || head_dim < 1 || ff_dim < 1 ||
        layers < 1)
        throw std::invalid_argument("encoder: every dimension must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("encoder: dropout must be in [0, 1)");
    if (pe == PeVariant::learned && pe_target != PeTarget::window)
        throw std::invalid_argument("encoder: the learned encoding is indexed by window position only");
}

namespace {

Tensor zeros_row(Index n) { return Tensor(Matrix::Zero(1, n), true); }
Tensor ones_row(Index n) { return Tensor(Matrix::Ones(1, n), true); }

template <typename P, typename F>
void visit_params(P& p, F&& f) {
    if (p.in_w.defined()) {
        f("input.weight", p.in_w);
        f("input.bias", p.in_b);
    }
    if (p.pe_table.defined()) f("pe.table", p.pe_table);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& L = p.layers[l];
        const std::string pre = "layer" + std::to_string(l) + ".";
        f(pre + "ln1.gain", L.ln1_gain);
        f(pre + "ln1.bias", L.ln1_bias);
        f(pre + "q.weight", L.wq);
        f(pre + "q.bias", L.bq);
        f(pre + "k.weight", L.wk);
        f(pre + "k.bias", L.bk);
        f(pre + "v.weight", L.wv);
        f(pre + "v.bias", L.bv);
        f(pre + "out.weight", L.wo);
        f(pre + "out.bias", L.bo);
        f(pre + "ln2.gain", L.ln2_gain);
        f(pre + "ln2.bias", L.ln2_bias);
        f(pre + "ff1.weight", L.ff1_w);
        f(pre + "ff1.bias", L.ff1_b);
        f(pre + "ff2.weight", L.ff2_w);
        f(pre + "ff2.bias", L.ff2_b);
    }
    f("final_ln.gain", p.out_gain);
    f("final_ln.bias", p.out_bias);
    f("head.weight", p.head_w);
    f("head.bias", p.head_b);
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    EncoderParams p;
    p.config = config;
    const Index dm = config.model_dim;
    const Index inner = config.heads * config.head_dim;
    if (config.input_dim != dm) {
        p.in_w = xavier_uniform(config.input_dim, dm, rng);
        p.in_b = zeros_row(dm);
    }
    if (config.pe == PeVariant::learned) p.pe_table = xavier_uniform(config.window, dm, rng);
    for (Index l = 0; l < config.layers; ++l) {
        EncoderLayer L;
        L.ln1_gain = ones_row(dm);
        L.ln1_bias = zeros_row(dm);
        L.wq = xavier_uniform(dm, inner, rng);
        L.bq = zeros_row(inner);
        L.wk = xavier_uniform(dm, inner, rng);
        L.bk = zeros_row(inner);
        L.wv = xavier_uniform(dm, inner, rng);
        L.bv = zeros_row(inner);
        L.wo = xavier_uniform(inner, dm, rng);
        L.bo = zeros_row(dm);
        L.ln2_gain = ones_row(dm);
        L.ln2_bias = zeros_row(dm);
        L.ff1_w = xavier_uniform(dm, config.ff_dim, rng);
        L.ff1_b = zeros_row(config.ff_dim);
        L.ff2_w = xavier_uniform(config.ff_dim, dm, rng);
        L.ff2_b = zeros_row(dm);
        p.layers.push_back(std::move(L));
    }
    p.out_gain = ones_row(dm);
    p.out_bias = zeros_row(dm);
    p.head_w = xavier_uniform(dm, config.classes, rng);
    p.head_b = zeros_row(config.classes);
    return p;
}

NamedParams EncoderParams::named() const {
    NamedParams out;
    visit_params(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
    return out;
}

EncoderParams EncoderParams::clone() const {
    EncoderParams copy = *this;
    visit_params(copy, [](const std::string&, Tensor& t) { t = Tensor(t.shape(), t.value(), t.requires_grad()); });
    return copy;
}

// --- forward ---------------------------------------------------------------------------

namespace {

void check_stack(const WindowStack& stack, const EncoderConfig& c) {
    if (stack.size != c.window)
        throw DimensionError("encode: stack window " + std::to_string(stack.size) + " but encoder expects " +
                             std::to_string(c.window));
    if (stack.dim() != c.input_dim)
        throw DimensionError("encode: feature dim " + std::to_string(stack.dim()) + " but encoder expects " +
                             std::to_string(c.input_dim));
    if (stack.frames < 1 || stack.data.rows() != stack.frames * stack.size)
        throw DimensionError("encode: malformed window stack");
}

/// Input projection plus positional encoding, (T*S) x model_dim.
Tensor embed_inputs(const WindowStack& stack, const EncoderParams& p) {
    const EncoderConfig& c = p.config;
    Tensor x(stack.data);
    Tensor h = p.in_w.defined() ? linear(x, p.in_w, p.in_b) : x;
    switch (c.pe) {
        case PeVariant::sinusoidal:
            return add(h, Tensor(stacked_pe(stack.frames, stack.size, c.model_dim, c.pe_target)));
        case PeVariant::learned: return add(h, repeat_rows(p.pe_table, stack.frames));
        case PeVariant::none: return h;
    }
    return h;
}

}  // namespace

EncoderOutput encode(const WindowStack& stack, const EncoderParams& params, bool train, Rng* rng) {
    const EncoderConfig& c = params.config;
    check_stack(stack, c);
    if (train && c.dropout > 0.0 && rng == nullptr) throw ContractError("encode: training with dropout needs an rng");
    const Index S = stack.size;
    const Index center = window_center(S);

    Tensor h = embed_inputs(stack, params);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const EncoderLayer& L = params.layers[l];
        const bool last = l + 1 == params.layers.size();
        Tensor a = layer_norm(h, L.ln1_gain, L.ln1_bias);
        Tensor k = elu_plus_one(linear(a, L.wk, L.bk));
        Tensor v = linear(a, L.wv, L.bv);
        // Only the center row of each window survives the last layer.
        if (last) {
            a = select_in_groups(a, S, center);
            h = select_in_groups(h, S, center);
        }
        Tensor q = elu_plus_one(linear(a, L.wq, L.bq));
        h = add(h, linear(kernel_attention(q, k, v, S, c.heads), L.wo, L.bo));
        Tensor f = linear(relu(linear(layer_norm(h, L.ln2_gain, L.ln2_bias), L.ff1_w, L.ff1_b)), L.ff2_w, L.ff2_b);
        if (train && c.dropout > 0.0) f = dropout(f, c.dropout, true, *rng);
        h = add(h, f);
    }
    Tensor e = layer_norm(h, params.out_gain, params.out_bias);
    return EncoderOutput{log_softmax(linear(e, params.head_w, params.head_b)), e};
}

Matrix attention_map(const WindowStack& stack, const EncoderParams& params) {
    const EncoderConfig& c = params.config;
    check_stack(stack, c);
    const Index S = stack.size;
    const EncoderLayer& L = params.layers.front();
    Tensor a = layer_norm(embed_inputs(stack, params), L.ln1_gain, L.ln1_bias);
    const Matrix k = elu_plus_one(linear(a, L.wk, L.bk)).value();
    const Matrix q = elu_plus_one(linear(select_in_groups(a, S, window_center(S)), L.wq, L.bq)).value();
    const Index dk = c.head_dim;
    Matrix map = Matrix::Zero(stack.frames, S);
    for (Index t = 0; t < stack.frames; ++t) {
        for (Index h = 0; h < c.heads; ++h) {
            Vector w = k.block(t * S, h * dk, S, dk) * q.block(t, h * dk, 1, dk).transpose();
            map.row(t) += (w / w.sum()).transpose();
        }
    }
    return map / static_cast<double>(c.heads);
}

}  // namespace weakseg
