#include "weakseg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace weakseg {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::pair<Index, Index> fold(const Shape& shape) {
    if (shape.empty()) return {1, 1};
    if (shape.size() == 1) return {1, shape[0]};
    Index rows = 1;
    for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
    return {rows, shape.back()};
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

Shape matrix_shape(Index r, Index c) { return Shape{r, c}; }

template <typename F>
Tensor unary(const Tensor& a, Matrix value, F&& local_grad) {
    return make_result(a.shape(), std::move(value), {a},
                       [a, local_grad = std::forward<F>(local_grad)](detail::Node& self) {
                           if (wants_grad(a)) a.node()->accumulate_expr(local_grad(self));
                       });
}

}  // namespace

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Index shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

void detail::Node::accumulate(const Eigen::Ref<const Matrix>& g) { accumulate_expr(g); }

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, Matrix data, bool requires_grad) {
    for (Index d : shape)
        if (d < 0) throw DimensionError("negative dimension in " + to_string(shape));
    const auto [r, c] = fold(shape);
    if (data.size() != shape_size(shape))
        throw DimensionError("tensor data holds " + std::to_string(data.size()) + " values, shape " +
                             to_string(shape) + " needs " + std::to_string(shape_size(shape)));
    if (!data.allFinite()) throw std::domain_error("tensor data contains NaN or Inf");
    if (data.rows() != r || data.cols() != c) data = Eigen::Map<Matrix>(data.data(), r, c).eval();
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(Matrix data, bool requires_grad) {
    Shape shape = matrix_shape(data.rows(), data.cols());
    *this = Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto [r, c] = fold(shape);
    return Tensor(std::move(shape), Matrix::Zero(r, c), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor(Shape{}, Matrix::Constant(1, 1, v), requires_grad);
}

Matrix& Tensor::mutable_value() {
    if (!node_->leaf) throw ContractError("mutable_value on a non-leaf tensor");
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on a tensor with " + std::to_string(numel()) + " values");
    return node_->value(0, 0);
}

Matrix Tensor::grad() const {
    if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
    return node_->grad;
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<detail::Node>();
    n->shape = node_->shape;
    n->value = node_->value;
    return from_node(std::move(n));
}

// --- Tape -------------------------------------------------------------------

Tape::~Tape() {
    clear();
    if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::clear() {
    for (auto& n : nodes_) {
        n->backward = nullptr;
        n->grad.resize(0, 0);
        n->tape = nullptr;
    }
    nodes_.clear();
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a scalar");
    if (loss.node()->tape != this) throw ContractError("backward: loss was not produced on this tape");
    loss.node()->accumulate(Matrix::Ones(1, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        detail::Node& n = **it;
        if (n.grad.size() != 0 && n.backward) n.backward(n);
    }
    clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.node()->tape == nullptr)
        throw ContractError("backward: loss was not produced on a tape");
    loss.node()->tape->backward(loss);
}

Tensor make_result(Shape shape, Matrix value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> grad_fn) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->leaf = false;
    Tape* tape = g_active_tape;
    bool record = false;
    if (tape != nullptr)
        for (const auto& t : inputs) record = record || wants_grad(t);
    if (record) {
        n->requires_grad = true;
        n->tape = tape;
        n->backward = std::move(grad_fn);
        tape->nodes_.push_back(n);
    }
    return Tensor::from_node(std::move(n));
}

// --- arithmetic -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    if (b.rows() == 1 && a.rows() > 1 && b.cols() == a.cols()) {
        Matrix v = a.value().rowwise() + b.value().row(0);
        return make_result(a.shape(), std::move(v), {a, b}, [a, b](detail::Node& self) {
            if (wants_grad(a)) a.node()->accumulate(self.grad);
            if (wants_grad(b)) b.node()->accumulate_expr(self.grad.colwise().sum());
        });
    }
    check_same_shape(a, b, "add");
    return make_result(a.shape(), a.value() + b.value(), {a, b}, [a, b](detail::Node& self) {
        if (wants_grad(a)) a.node()->accumulate(self.grad);
        if (wants_grad(b)) b.node()->accumulate(self.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    return make_result(a.shape(), a.value() - b.value(), {a, b}, [a, b](detail::Node& self) {
        if (wants_grad(a)) a.node()->accumulate(self.grad);
        if (wants_grad(b)) b.node()->accumulate_expr(-self.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Matrix v = a.value().cwiseProduct(b.value());
    return make_result(a.shape(), std::move(v), {a, b}, [a, b](detail::Node& self) {
        if (wants_grad(a)) a.node()->accumulate_expr(self.grad.cwiseProduct(b.value()));
        if (wants_grad(b)) b.node()->accumulate_expr(self.grad.cwiseProduct(a.value()));
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, a.value() * s, [s](const detail::Node& self) { return (self.grad * s).eval(); });
}

Tensor add_scalar(const Tensor& a, double s) {
    Matrix v = a.value().array() + s;
    return unary(a, std::move(v), [](const detail::Node& self) { return self.grad; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (b.rank() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
    Shape shape = a.shape();
    if (shape.empty()) shape = {1, 1};
    shape.back() = b.cols();
    if (shape.size() == 1) shape = {1, b.cols()};
    Matrix v = a.value() * b.value();
    return make_result(std::move(shape), std::move(v), {a, b}, [a, b](detail::Node& self) {
        if (wants_grad(a)) a.node()->accumulate_expr(self.grad * b.value().transpose());
        if (wants_grad(b)) b.node()->accumulate_expr(a.value().transpose() * self.grad);
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() > 2) throw DimensionError("transpose: rank > 2");
    Matrix v = a.value().transpose();
    return make_result(matrix_shape(a.cols(), a.rows()), std::move(v), {a}, [a](detail::Node& self) {
        if (wants_grad(a)) a.node()->accumulate_expr(self.grad.transpose());
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.numel())
        throw DimensionError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
    const auto [r, c] = fold(shape);
    Matrix v = Eigen::Map<const Matrix>(a.value().data(), r, c);
    const Index ar = a.rows(), ac = a.cols();
    return make_result(std::move(shape), std::move(v), {a}, [a, ar, ac](detail::Node& self) {
        if (wants_grad(a)) a.node()->accumulate_expr(Eigen::Map<const Matrix>(self.grad.data(), ar, ac));
    });
}

// --- indexing -------------------------------------------------------------

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
    if (begin < 0 || count < 0 || begin + count > a.rows())
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                             ") outside " + std::to_string(a.rows()) + " rows");
    Matrix v = a.value().middleRows(begin, count);
    return make_result(matrix_shape(count, a.cols()), std::move(v), {a},
                       [a, begin, count](detail::Node& self) {
                           if (!wants_grad(a)) return;
                           Matrix g = Matrix::Zero(a.rows(), a.cols());
                           g.middleRows(begin, count) = self.grad;
                           a.node()->accumulate(g);
                       });
}

Tensor gather_rows(const Tensor& a, std::vector<Index> indices) {
    Matrix v(static_cast<Index>(indices.size()), a.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= a.rows())
            throw DimensionError("gather_rows: index " + std::to_string(indices[i]) + " out of range");
        v.row(static_cast<Index>(i)) = a.value().row(indices[i]);
    }
    Shape shape = matrix_shape(v.rows(), v.cols());
    return make_result(std::move(shape), std::move(v), {a}, [a, idx = std::move(indices)](detail::Node& self) {
        if (!wants_grad(a)) return;
        Matrix g = Matrix::Zero(a.rows(), a.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
        a.node()->accumulate(g);
    });
}

Tensor select_in_groups(const Tensor& a, Index group, Index offset) {
    if (group <= 0 || a.rows() % group != 0 || offset < 0 || offset >= group)
        throw DimensionError("select_in_groups: bad grouping");
    const Index n = a.rows() / group;
    Matrix v(n, a.cols());
    for (Index i = 0; i < n; ++i) v.row(i) = a.value().row(i * group + offset);
    return make_result(matrix_shape(n, a.cols()), std::move(v), {a}, [a, group, offset, n](detail::Node& self) {
        if (!wants_grad(a)) return;
        Matrix g = Matrix::Zero(a.rows(), a.cols());
        for (Index i = 0; i < n; ++i) g.row(i * group + offset) = self.grad.row(i);
        a.node()->accumulate(g);
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != parts[0].cols()) throw DimensionError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix v(rows, parts[0].cols());
    Index at = 0;
    for (const auto& p : parts) {
        v.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return make_result(matrix_shape(rows, v.cols()), std::move(v), parts, [parts](detail::Node& self) {
        Index at = 0;
        for (const auto& p : parts) {
            if (wants_grad(p)) p.node()->accumulate_expr(self.grad.middleRows(at, p.rows()));
            at += p.rows();
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != parts[0].rows()) throw DimensionError("concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix v(parts[0].rows(), cols);
    Index at = 0;
    for (const auto& p : parts) {
        v.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return make_result(matrix_shape(v.rows(), cols), std::move(v), parts, [parts](detail::Node& self) {
        Index at = 0;
        for (const auto& p : parts) {
            if (wants_grad(p)) p.node()->accumulate_expr(self.grad.middleCols(at, p.cols()));
            at += p.cols();
        }
    });
}

Tensor repeat_rows(const Tensor& a, Index times) {
    if (times <= 0) throw DimensionError("repeat_rows: times must be positive");
    Matrix v = a.value().replicate(times, 1);
    return make_result(matrix_shape(v.rows(), v.cols()), std::move(v), {a}, [a, times](detail::Node& self) {
        if (!wants_grad(a)) return;
        Matrix g = Matrix::Zero(a.rows(), a.cols());
        for (Index k = 0; k < times; ++k) g += self.grad.middleRows(k * a.rows(), a.rows());
        a.node()->accumulate(g);
    });
}

// --- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a) {
    return make_result(Shape{}, Matrix::Constant(1, 1, a.value().sum()), {a}, [a](detail::Node& self) {
        if (wants_grad(a)) a.node()->accumulate_expr(Matrix::Constant(a.rows(), a.cols(), self.grad(0, 0)));
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    return scale(sum(a), 1.0 / n);
}

Tensor sum(const Tensor& a, int axis) {
    if (axis == 0) {
        Matrix v = a.value().colwise().sum();
        return make_result(matrix_shape(1, a.cols()), std::move(v), {a}, [a](detail::Node& self) {
            if (wants_grad(a)) a.node()->accumulate_expr(self.grad.replicate(a.rows(), 1));
        });
    }
    if (axis == 1 || axis == -1) {
        Matrix v = a.value().rowwise().sum();
        return make_result(matrix_shape(a.rows(), 1), std::move(v), {a}, [a](detail::Node& self) {
            if (wants_grad(a)) a.node()->accumulate_expr(self.grad.replicate(1, a.cols()));
        });
    }
    throw DimensionError("sum: axis must be 0 or 1");
}

Tensor mean(const Tensor& a, int axis) {
    const Index n = (axis == 0) ? a.rows() : a.cols();
    return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

// --- elementwise ----------------------------------------------------------

Tensor exp(const Tensor& a) {
    Matrix v = a.value().array().exp();
    Matrix y = v;
    return unary(a, std::move(v), [y = std::move(y)](const detail::Node& self) {
        return self.grad.cwiseProduct(y).eval();
    });
}

Tensor log(const Tensor& a) {
    Matrix v = a.value().array().log();
    return unary(a, std::move(v), [a](const detail::Node& self) {
        return self.grad.cwiseQuotient(a.value()).eval();
    });
}

Tensor sigmoid(const Tensor& a) {
    Matrix y = (1.0 + (-a.value().array()).exp()).inverse().matrix();
    Matrix yc = y;
    return unary(a, std::move(y), [yc = std::move(yc)](const detail::Node& self) {
        return (self.grad.array() * yc.array() * (1.0 - yc.array())).matrix().eval();
    });
}

Tensor tanh(const Tensor& a) {
    Matrix y = a.value().array().tanh();
    Matrix yc = y;
    return unary(a, std::move(y), [yc = std::move(yc)](const detail::Node& self) {
        return (self.grad.array() * (1.0 - yc.array().square())).matrix().eval();
    });
}

Tensor relu(const Tensor& a) {
    Matrix y = a.value().cwiseMax(0.0);
    return unary(a, std::move(y), [a](const detail::Node& self) {
        return (self.grad.array() * (a.value().array() > 0.0).cast<double>()).matrix().eval();
    });
}

Tensor elu_plus_one(const Tensor& a) {
    Matrix y = (a.value().array() > 0.0).select(a.value().array() + 1.0, a.value().array().exp());
    Matrix local = (a.value().array() > 0.0).select(Matrix::Ones(a.rows(), a.cols()).array(), y.array());
    return unary(a, std::move(y), [local = std::move(local)](const detail::Node& self) {
        return self.grad.cwiseProduct(local).eval();
    });
}

namespace {

Matrix softmax_rows(const Matrix& x) {
    Matrix y = x.colwise() - x.rowwise().maxCoeff();
    y = y.array().exp();
    y.array().colwise() /= y.rowwise().sum().array();
    return y;
}

Matrix log_softmax_rows(const Matrix& x) {
    Vector m = x.rowwise().maxCoeff();
    Matrix shifted = x.colwise() - m;
    Vector lse = shifted.array().exp().rowwise().sum().log();
    return shifted.colwise() - lse;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    if (axis == 0) return transpose(softmax(transpose(a), 1));
    if (axis != 1 && axis != -1) throw DimensionError("softmax: axis must be 0 or 1");
    Matrix y = softmax_rows(a.value());
    Matrix yc = y;
    return unary(a, std::move(y), [yc = std::move(yc)](const detail::Node& self) {
        Vector dot = self.grad.cwiseProduct(yc).rowwise().sum();
        return (yc.array() * (self.grad.colwise() - dot).array()).matrix().eval();
    });
}

Tensor log_softmax(const Tensor& a, int axis) {
    if (axis == 0) return transpose(log_softmax(transpose(a), 1));
    if (axis != 1 && axis != -1) throw DimensionError("log_softmax: axis must be 0 or 1");
    Matrix y = log_softmax_rows(a.value());
    Matrix p = y.array().exp();
    return unary(a, std::move(y), [p = std::move(p)](const detail::Node& self) {
        Vector total = self.grad.rowwise().sum();
        return (self.grad - (p.array().colwise() * total.array()).matrix()).eval();
    });
}

Tensor dropout(const Tensor& a, double rate, bool train, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!train || rate == 0.0) return a;
    const double keep = 1.0 - rate;
    Matrix mask(a.rows(), a.cols());
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Matrix y = a.value().cwiseProduct(mask);
    return unary(a, std::move(y), [mask = std::move(mask)](const detail::Node& self) {
        return self.grad.cwiseProduct(mask).eval();
    });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    if (gamma.numel() != a.cols() || beta.numel() != a.cols())
        throw DimensionError("layer_norm: gain/bias width " + std::to_string(gamma.numel()) + " vs " +
                             std::to_string(a.cols()));
    const double n = static_cast<double>(a.cols());
    Vector mu = a.value().rowwise().mean();
    Matrix centered = a.value().colwise() - mu;
    Vector inv_std = ((centered.array().square().rowwise().sum() / n) + eps).rsqrt();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Eigen::Map<const RowVector> g(gamma.value().data(), a.cols());
    Eigen::Map<const RowVector> b(beta.value().data(), a.cols());
    Matrix y = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
    return make_result(a.shape(), std::move(y), {a, gamma, beta},
                       [a, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](detail::Node& self) {
                           const Matrix& gr = self.grad;
                           if (wants_grad(gamma)) {
                               RowVector dg = gr.cwiseProduct(xhat).colwise().sum();
                               gamma.node()->accumulate_expr(
                                   Eigen::Map<const Matrix>(dg.data(), gamma.rows(), gamma.cols()));
                           }
                           if (wants_grad(beta)) {
                               RowVector db = gr.colwise().sum();
                               beta.node()->accumulate_expr(
                                   Eigen::Map<const Matrix>(db.data(), beta.rows(), beta.cols()));
                           }
                           if (wants_grad(a)) {
                               Eigen::Map<const RowVector> gv(gamma.value().data(), gamma.numel());
                               Matrix dxhat = gr.array().rowwise() * gv.array();
                               Vector m1 = dxhat.rowwise().sum() / n;
                               Vector m2 = dxhat.cwiseProduct(xhat).rowwise().sum() / n;
                               Matrix dx = (dxhat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix();
                               dx.array().colwise() *= inv_std.array();
                               a.node()->accumulate(dx);
                           }
                       });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || x.cols() != weight.rows())
        throw DimensionError("linear: input width " + std::to_string(x.cols()) + " vs weight " +
                             to_string(weight.shape()));
    if (bias.defined() && bias.numel() != weight.cols())
        throw DimensionError("linear: bias width mismatch");
    Matrix y = x.value() * weight.value();
    if (bias.defined()) y.rowwise() += Eigen::Map<const RowVector>(bias.value().data(), bias.numel());
    Shape shape = x.shape();
    if (shape.size() < 2) shape = {x.rows(), x.cols()};
    shape.back() = weight.cols();
    return make_result(std::move(shape), std::move(y), {x, weight, bias}, [x, weight, bias](detail::Node& self) {
        if (wants_grad(x)) x.node()->accumulate_expr(self.grad * weight.value().transpose());
        if (wants_grad(weight)) weight.node()->accumulate_expr(x.value().transpose() * self.grad);
        if (wants_grad(bias)) {
            RowVector db = self.grad.colwise().sum();
            bias.node()->accumulate_expr(Eigen::Map<const Matrix>(db.data(), bias.rows(), bias.cols()));
        }
    });
}

Tensor cosine_distance(const Tensor& u, const Tensor& v) {
    if (u.numel() != v.numel()) throw DimensionError("cosine_distance: size mismatch");
    const double nu = u.value().norm();
    const double nv = v.value().norm();
    if (nu == 0.0 || nv == 0.0) throw ContractError("cosine_distance: zero vector");
    const double dot = u.value().cwiseProduct(Eigen::Map<const Matrix>(v.value().data(), u.rows(), u.cols())).sum();
    const double c = dot / (nu * nv);
    return make_result(Shape{}, Matrix::Constant(1, 1, 1.0 - c), {u, v}, [u, v, nu, nv, c](detail::Node& self) {
        const double g = self.grad(0, 0);
        Eigen::Map<const Matrix> vv(v.value().data(), u.rows(), u.cols());
        Eigen::Map<const Matrix> uu(u.value().data(), v.rows(), v.cols());
        if (wants_grad(u)) u.node()->accumulate_expr(-g * (vv / (nu * nv) - (c / (nu * nu)) * u.value()));
        if (wants_grad(v)) v.node()->accumulate_expr(-g * (uu / (nu * nv) - (c / (nv * nv)) * v.value()));
    });
}

}  // namespace weakseg
