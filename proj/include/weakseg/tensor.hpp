#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "weakseg/errors.hpp"
#include "weakseg/rng.hpp"

namespace weakseg {

using Index = Eigen::Index;

/// Dense row-major storage shared by every module. Tensors of rank > 2 keep
/// their trailing dimension as columns and fold the leading ones into rows.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Vector = Eigen::VectorXd;

using Shape = std::vector<Index>;

std::string to_string(const Shape& shape);
Index shape_size(const Shape& shape);

class Tape;

namespace detail {

struct Node {
    Shape shape;
    Matrix value;
    Matrix grad;  // empty until something accumulates into it
    bool requires_grad = false;
    bool leaf = true;
    Tape* tape = nullptr;
    std::function<void(Node&)> backward;

    void accumulate(const Eigen::Ref<const Matrix>& g);
    template <typename Expr>
    void accumulate_expr(const Expr& g) {
        if (grad.size() == 0)
            grad = g;
        else
            grad += g;
    }
};

}  // namespace detail

/// Handle to a node of the autodiff graph. Copies share the same node, the
/// way parameters are shared between a model and its optimizer.
class Tensor {
public:
    Tensor() = default;

    /// Leaf tensor. Rejects non-finite values and shape/data mismatches.
    Tensor(Shape shape, Matrix data, bool requires_grad = false);
    explicit Tensor(Matrix data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    Index rank() const { return static_cast<Index>(node_->shape.size()); }
    Index rows() const { return node_->value.rows(); }
    Index cols() const { return node_->value.cols(); }
    Index numel() const { return node_->value.size(); }

    const Matrix& value() const { return node_->value; }
    /// Mutable access for optimizers and initializers; leaves only.
    Matrix& mutable_value();
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->grad.size() != 0; }
    /// Gradient buffer, zero-filled when nothing has accumulated yet.
    Matrix grad() const;
    void zero_grad() { node_->grad.resize(0, 0); }

    /// Copy of the value with no graph history.
    Tensor detach() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor from_node(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations for one forward pass.
/// Only one tape is active per thread; with none active, operations build
/// no graph and keep no intermediates.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    std::size_t size() const { return nodes_.size(); }
    void clear();

    /// Reverse replay from a scalar loss recorded on this tape. Leaf
    /// gradients accumulate; the tape is cleared afterwards.
    void backward(const Tensor& loss);

    static Tape* active();

private:
    friend class TapeScope;
    friend Tensor make_result(Shape, Matrix, std::vector<Tensor>, std::function<void(detail::Node&)>);
    std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Activates a tape on the current thread for the lifetime of the scope.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Runs backward on the tape that recorded `loss`.
void backward(const Tensor& loss);

/// Builds the result of a primitive. When a tape is active and any input
/// requires grad, the node is recorded and `grad_fn` is kept for replay;
/// grad_fn receives the result node (with its grad populated) and must
/// accumulate into the inputs it captured.
Tensor make_result(Shape shape, Matrix value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> grad_fn);

// ---------------------------------------------------------------------------
// Primitives. Every operation accepts rank-0..3 tensors in their folded 2-D
// layout unless noted otherwise.

Tensor add(const Tensor& a, const Tensor& b);  ///< b may be a 1 x n row, broadcast over rows
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  ///< elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor slice_rows(const Tensor& a, Index begin, Index count);
/// Rows at `indices`, in order; repeated indices are allowed.
Tensor gather_rows(const Tensor& a, std::vector<Index> indices);
/// Row `offset` of every consecutive group of `group` rows.
Tensor select_in_groups(const Tensor& a, Index group, Index offset);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Stacks `times` copies of `a` vertically.
Tensor repeat_rows(const Tensor& a, Index times);

Tensor sum(const Tensor& a);   ///< scalar
Tensor mean(const Tensor& a);  ///< scalar
/// axis 0 reduces rows (result 1 x n), axis 1 reduces columns (result m x 1).
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
/// elu(x) + 1: x + 1 for x > 0, exp(x) otherwise. Strictly positive.
Tensor elu_plus_one(const Tensor& a);

Tensor softmax(const Tensor& a, int axis = 1);
Tensor log_softmax(const Tensor& a, int axis = 1);

/// Inverted dropout. Identity when !train or rate == 0.
Tensor dropout(const Tensor& a, double rate, bool train, Rng& rng);

/// Row-wise normalization with learned gain/bias rows (1 x n).
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// x W + b with b a 1 x out row (optional).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Cosine distance 1 - u.v / (|u||v|) between two equally-shaped tensors.
Tensor cosine_distance(const Tensor& u, const Tensor& v);

}  // namespace weakseg
