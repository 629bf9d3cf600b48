#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ahan/tensor.hpp"

namespace ahan {

class Var;

namespace detail {

struct Node {
    Tensor value;
    Tensor grad;  // empty until something flows in
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Gradient buffer, allocated as zeros on first use.
    Tensor& grad_buffer();
};

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

}  // namespace detail

/// Handle to a node of the computation graph. Copies share the node.
class Var {
  public:
    Var() = default;
    /// Constant: never receives a gradient.
    explicit Var(Tensor value);
    static Var parameter(Tensor value);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const;
    Tensor& mutable_value();
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    bool requires_grad() const;
    bool is_leaf() const;

    /// Accumulated gradient; zeros of value's shape when nothing has flowed in.
    Tensor grad() const;
    void zero_grad();

    detail::Node* node() const { return node_.get(); }

  private:
    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Var detail::make_op(Tensor, std::vector<Var>, std::function<void(detail::Node&)>);
};

// Linear algebra
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Elementwise (shapes must match)
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var abs(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);

/// a[n x d] + row broadcast over rows; row has d values.
Var add_row(const Var& a, const Var& row);
/// a[n x d] * row broadcast over rows.
Var mul_row(const Var& a, const Var& row);
/// Every element of a times the single value held by s.
Var mul_scalar(const Var& a, const Var& s);

// Reductions and normalizers
Var softmax(const Var& x, std::size_t axis);
/// Arithmetic mean along axis; the axis is removed from the shape.
Var mean_pool(const Var& x, std::size_t axis);
Var sum(const Var& x);
Var mean(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);
/// L2-normalize every row of a matrix. Zero rows are rejected.
Var normalize_rows(const Var& x);

// Structural
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var reshape(const Var& x, Shape shape);
/// Rows of a matrix in the given order (indices may repeat).
Var take_rows(const Var& x, std::span<const std::size_t> indices);
/// Flat elements of x in the given order; result has shape [k].
Var gather(const Var& x, std::span<const std::size_t> flat_indices);
/// Average non-overlapping factor x factor blocks of a (rows*cols) x d grid of tokens.
Var grid_avg_pool(const Var& x, std::size_t rows, std::size_t cols, std::size_t factor);

// Losses
/// Mean negative log-likelihood of labels under row-wise softmax of logits.
Var cross_entropy(const Var& logits, std::span<const std::size_t> labels);
/// Additive angular margin on target cosines: s*cos(acos(c)+m) at label, s*c elsewhere.
Var arc_margin_logits(const Var& cosines, std::span<const std::size_t> labels, double margin, double scale);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate at leaves.
void backward(const Var& loss);

/// Central differences of f around x, one coordinate at a time.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace ahan
