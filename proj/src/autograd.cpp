#include "ahan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace ahan {

namespace detail {

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->is_leaf = false;
    for (auto& p : parents) {
        if (!p.defined()) throw std::invalid_argument("operation on an undefined variable");
        node->requires_grad = node->requires_grad || p.requires_grad();
        node->parents.push_back(p.node_);
    }
    if (node->requires_grad) {
        node->backward = std::move(backward);
    } else {
        // Constant subgraph: nothing upstream needs a gradient.
        node->parents.clear();
    }
    return Var(std::move(node));
}

}  // namespace detail

using detail::make_op;
using detail::Node;

Var::Var(Tensor value) : node_(std::make_shared<Node>()) { node_->value = std::move(value); }

Var Var::parameter(Tensor value) {
    Var v(std::move(value));
    v.node_->requires_grad = true;
    return v;
}

const Tensor& Var::value() const {
    if (!node_) throw std::logic_error("undefined variable");
    return node_->value;
}

Tensor& Var::mutable_value() {
    if (!node_) throw std::logic_error("undefined variable");
    return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }
bool Var::is_leaf() const { return node_ && node_->is_leaf; }

Tensor Var::grad() const {
    if (!node_) throw std::logic_error("undefined variable");
    if (node_->grad.empty()) return Tensor::zeros(node_->value.shape());
    return node_->grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

namespace {

bool wants(const std::shared_ptr<Node>& n) { return n->requires_grad; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const double* pa = a.storage().data();
    const double* pb = b.storage().data();
    double* po = out.storage().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const Tensor& g, const Tensor& b, Tensor& out) {
    const std::size_t m = g.dim(0), n = g.dim(1), k = b.dim(0);
    const double* pg = g.storage().data();
    const double* pb = b.storage().data();
    double* po = out.storage().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = pg + i * n;
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            po[i * k + p] += acc;
        }
    }
}

// out[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const Tensor& a, const Tensor& g, Tensor& out) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = g.dim(1);
    const double* pa = a.storage().data();
    const double* pg = g.storage().data();
    double* po = out.storage().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = pg + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            double* orow = po + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
        }
    }
}

struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <typename F>
Var unary_elementwise(const Var& a, F&& fwd, std::function<double(double x, double y)> deriv) {
    Tensor out(a.shape());
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
    return make_op(std::move(out), {a}, [deriv = std::move(deriv)](Node& self) {
        auto& p = self.parents[0];
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p->value[i], self.value[i]);
    });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    if (av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_str(av.shape()) + " x " +
                             shape_str(bv.shape()));
    }
    Tensor out(Shape{av.dim(0), bv.dim(1)});
    gemm_nn(av, bv, out);
    return make_op(std::move(out), {a, b}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants(pa)) gemm_nt(self.grad, pb->value, pa->grad_buffer());
        if (wants(pb)) gemm_tn(pa->value, self.grad, pb->grad_buffer());
    });
}

Var transpose(const Var& a) {
    require_matrix(a.value(), "transpose");
    return make_op(a.value().transposed(), {a}, [](Node& self) {
        self.parents[0]->grad_buffer() += self.grad.transposed();
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (auto& p : self.parents)
            if (wants(p)) p->grad_buffer() += self.grad;
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer() += self.grad;
        if (wants(self.parents[1])) {
            Tensor& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants(pa)) {
            Tensor& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (wants(pb)) {
            Tensor& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a.value();
    out *= c;
    return make_op(std::move(out), {a}, [c](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    });
}

Var abs(const Var& a) {
    return unary_elementwise(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var relu(const Var& a) {
    return unary_elementwise(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
    // Exact erf form.
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary_elementwise(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [inv_sqrt2pi](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

Var add_row(const Var& a, const Var& row) {
    const Tensor& av = a.value();
    require_matrix(av, "add_row");
    const std::size_t n = av.dim(0), d = av.dim(1);
    if (row.size() != d) {
        throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " + shape_str(av.shape()));
    }
    Tensor out = av;
    const Tensor& rv = row.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) += rv[j];
    return make_op(std::move(out), {a, row}, [n, d](Node& self) {
        if (wants(self.parents[0])) self.parents[0]->grad_buffer() += self.grad;
        if (wants(self.parents[1])) {
            Tensor& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad(i, j);
        }
    });
}

Var mul_row(const Var& a, const Var& row) {
    const Tensor& av = a.value();
    require_matrix(av, "mul_row");
    const std::size_t n = av.dim(0), d = av.dim(1);
    if (row.size() != d) {
        throw DimensionError("mul_row: row " + shape_str(row.shape()) + " does not match " + shape_str(av.shape()));
    }
    Tensor out = av;
    const Tensor& rv = row.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) *= rv[j];
    return make_op(std::move(out), {a, row}, [n, d](Node& self) {
        auto& pa = self.parents[0];
        auto& pr = self.parents[1];
        if (wants(pa)) {
            Tensor& g = pa->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g(i, j) += self.grad(i, j) * pr->value[j];
        }
        if (wants(pr)) {
            Tensor& g = pr->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) g[j] += self.grad(i, j) * pa->value(i, j);
        }
    });
}

Var mul_scalar(const Var& a, const Var& s) {
    if (s.size() != 1) throw DimensionError("mul_scalar: expected a single value, got " + shape_str(s.shape()));
    Tensor out = a.value();
    out *= s.value()[0];
    return make_op(std::move(out), {a, s}, [](Node& self) {
        auto& pa = self.parents[0];
        auto& ps = self.parents[1];
        if (wants(pa)) {
            Tensor& g = pa->grad_buffer();
            const double c = ps->value[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
        }
        if (wants(ps)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa->value[i];
            ps->grad_buffer()[0] += acc;
        }
    });
}

Var softmax(const Var& x, std::size_t axis) {
    const Tensor& xv = x.value();
    const AxisSplit s = split_axis(xv.shape(), axis, "softmax");
    Tensor out(xv.shape());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
            double z = 0.0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                const double e = std::exp(xv[base + k * s.inner] - mx);
                out[base + k * s.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
        }
    }
    return make_op(std::move(out), {x}, [s](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const Tensor& y = self.value;
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.extent * s.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < s.extent; ++k) {
                    const std::size_t i = base + k * s.inner;
                    dot += self.grad[i] * y[i];
                }
                for (std::size_t k = 0; k < s.extent; ++k) {
                    const std::size_t i = base + k * s.inner;
                    g[i] += y[i] * (self.grad[i] - dot);
                }
            }
        }
    });
}

Var mean_pool(const Var& x, std::size_t axis) {
    const Tensor& xv = x.value();
    const AxisSplit s = split_axis(xv.shape(), axis, "mean_pool");
    Shape out_shape;
    for (std::size_t i = 0; i < xv.rank(); ++i)
        if (i != axis) out_shape.push_back(xv.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out(out_shape);
    const double inv = 1.0 / static_cast<double>(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.extent; ++k)
            for (std::size_t in = 0; in < s.inner; ++in)
                out[o * s.inner + in] += xv[(o * s.extent + k) * s.inner + in];
    out *= inv;
    return make_op(std::move(out), {x}, [s, inv](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t k = 0; k < s.extent; ++k)
                for (std::size_t in = 0; in < s.inner; ++in)
                    g[(o * s.extent + k) * s.inner + in] += inv * self.grad[o * s.inner + in];
    });
}

Var sum(const Var& x) {
    double acc = 0.0;
    for (double v : x.value().values()) acc += v;
    return make_op(Tensor::scalar(acc), {x}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const double up = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
    });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.value();
    require_matrix(xv, "layer_norm");
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    if (gamma.size() != d || beta.size() != d) {
        throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(d));
    }
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xv(i, j);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xv(i, j) - mu) * (xv(i, j) - mu);
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
    }
    Tensor out(xv.shape());
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) = xhat(i, j) * gv[j] + bv[j];

    return make_op(std::move(out), {x, gamma, beta},
                   [xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](Node& self) {
                       auto& px = self.parents[0];
                       auto& pg = self.parents[1];
                       auto& pb = self.parents[2];
                       const Tensor& G = self.grad;
                       if (wants(pg)) {
                           Tensor& g = pg->grad_buffer();
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < d; ++j) g[j] += G(i, j) * xhat(i, j);
                       }
                       if (wants(pb)) {
                           Tensor& g = pb->grad_buffer();
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < d; ++j) g[j] += G(i, j);
                       }
                       if (wants(px)) {
                           Tensor& g = px->grad_buffer();
                           const Tensor& gam = pg->value;
                           const double inv_d = 1.0 / static_cast<double>(d);
                           for (std::size_t i = 0; i < n; ++i) {
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   const double dxh = G(i, j) * gam[j];
                                   m1 += dxh;
                                   m2 += dxh * xhat(i, j);
                               }
                               m1 *= inv_d;
                               m2 *= inv_d;
                               for (std::size_t j = 0; j < d; ++j) {
                                   const double dxh = G(i, j) * gam[j];
                                   g(i, j) += inv_std[i] * (dxh - m1 - xhat(i, j) * m2);
                               }
                           }
                       }
                   });
}

Var normalize_rows(const Var& x) {
    const Tensor& xv = x.value();
    require_matrix(xv, "normalize_rows");
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    std::vector<double> norms(n);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += xv(i, j) * xv(i, j);
        norms[i] = std::sqrt(ss);
        if (norms[i] == 0.0) throw std::invalid_argument("normalize_rows: row " + std::to_string(i) + " has zero norm");
        for (std::size_t j = 0; j < d; ++j) out(i, j) = xv(i, j) / norms[i];
    }
    return make_op(std::move(out), {x}, [norms = std::move(norms), n, d](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const Tensor& y = self.value;
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += self.grad(i, j) * y(i, j);
            for (std::size_t j = 0; j < d; ++j) g(i, j) += (self.grad(i, j) - y(i, j) * dot) / norms[i];
        }
    });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no parts");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for shape " + shape_str(ref));
    }
    Shape out_shape = ref;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == ref.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i)
            if (i != axis && s[i] != ref[i]) ok = false;
        if (!ok) {
            throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(ref) + " along axis " +
                                 std::to_string(axis));
        }
        extents.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    const AxisSplit os = split_axis(out_shape, axis, "concat");
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& pv = parts[pi].value();
        const std::size_t chunk = extents[pi] * os.inner;
        for (std::size_t o = 0; o < os.outer; ++o)
            std::copy_n(pv.storage().data() + o * chunk, chunk,
                        out.storage().data() + o * os.extent * os.inner + offset * os.inner);
        offset += extents[pi];
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_op(std::move(out), std::move(parents), [os, extents = std::move(extents)](Node& self) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
            auto& p = self.parents[pi];
            const std::size_t chunk = extents[pi] * os.inner;
            if (wants(p)) {
                Tensor& g = p->grad_buffer();
                for (std::size_t o = 0; o < os.outer; ++o) {
                    const double* src = self.grad.storage().data() + o * os.extent * os.inner + offset * os.inner;
                    double* dst = g.storage().data() + o * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                }
            }
            offset += extents[pi];
        }
    });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make_op(std::move(out), {x}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var take_rows(const Var& x, std::span<const std::size_t> indices) {
    const Tensor& xv = x.value();
    require_matrix(xv, "take_rows");
    if (indices.empty()) throw DimensionError("take_rows: empty index list");
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    Tensor out(Shape{indices.size(), d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= n) {
            throw DimensionError("take_rows: index " + std::to_string(indices[r]) + " out of range for " +
                                 shape_str(xv.shape()));
        }
        std::copy_n(xv.row(indices[r]).data(), d, out.row(r).data());
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_op(std::move(out), {x}, [idx = std::move(idx), d](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) g(idx[r], j) += self.grad(r, j);
    });
}

Var gather(const Var& x, std::span<const std::size_t> flat_indices) {
    const Tensor& xv = x.value();
    if (flat_indices.empty()) throw DimensionError("gather: empty index list");
    Tensor out(Shape{flat_indices.size()});
    for (std::size_t i = 0; i < flat_indices.size(); ++i) {
        if (flat_indices[i] >= xv.size()) {
            throw DimensionError("gather: index " + std::to_string(flat_indices[i]) + " out of range for " +
                                 shape_str(xv.shape()));
        }
        out[i] = xv[flat_indices[i]];
    }
    std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
    return make_op(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
    });
}

Var grid_avg_pool(const Var& x, std::size_t rows, std::size_t cols, std::size_t factor) {
    const Tensor& xv = x.value();
    require_matrix(xv, "grid_avg_pool");
    if (factor == 0) throw std::invalid_argument("grid_avg_pool: factor must be positive");
    if (xv.dim(0) != rows * cols) {
        throw DimensionError("grid_avg_pool: " + std::to_string(xv.dim(0)) + " tokens do not form a " +
                             std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    }
    if (rows % factor != 0 || cols % factor != 0) {
        throw DimensionError("grid_avg_pool: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " not divisible by factor " + std::to_string(factor));
    }
    const std::size_t d = xv.dim(1);
    const std::size_t orows = rows / factor, ocols = cols / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    Tensor out(Shape{orows * ocols, d});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t dst = (r / factor) * ocols + c / factor;
            for (std::size_t j = 0; j < d; ++j) out(dst, j) += xv(r * cols + c, j);
        }
    out *= inv;
    return make_op(std::move(out), {x}, [rows, cols, factor, ocols, d, inv](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t src = (r / factor) * ocols + c / factor;
                for (std::size_t j = 0; j < d; ++j) g(r * cols + c, j) += inv * self.grad(src, j);
            }
    });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
    const Tensor& lv = logits.value();
    require_matrix(lv, "cross_entropy");
    const std::size_t b = lv.dim(0), c = lv.dim(1);
    if (labels.size() != b) throw DimensionError("cross_entropy: label count does not match batch");
    Tensor probs(lv.shape());
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= c) throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs(i, j) = std::exp(lv(i, j) - mx);
            z += probs(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) probs(i, j) /= z;
        loss += -(lv(i, labels[i]) - mx - std::log(z));
    }
    loss /= static_cast<double>(b);
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return make_op(Tensor::scalar(loss), {logits}, [probs = std::move(probs), lab = std::move(lab), b, c](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const double up = self.grad[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j) g(i, j) += up * (probs(i, j) - (j == lab[i] ? 1.0 : 0.0));
    });
}

Var arc_margin_logits(const Var& cosines, std::span<const std::size_t> labels, double margin, double scale_factor) {
    const Tensor& cv = cosines.value();
    require_matrix(cv, "arc_margin_logits");
    const std::size_t b = cv.dim(0), c = cv.dim(1);
    if (labels.size() != b) throw DimensionError("arc_margin_logits: label count does not match batch");
    // Keep acos differentiable at the poles.
    constexpr double clamp = 1.0 - 1e-12;
    Tensor out(cv.shape());
    std::vector<double> target_deriv(b);
    const double cm = std::cos(margin), sm = std::sin(margin);
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= c) {
            throw std::out_of_range("arc_margin_logits: label " + std::to_string(labels[i]) + " out of range");
        }
        for (std::size_t j = 0; j < c; ++j) out(i, j) = scale_factor * cv(i, j);
        const double ct = std::clamp(cv(i, labels[i]), -clamp, clamp);
        const double st = std::sqrt(1.0 - ct * ct);
        out(i, labels[i]) = scale_factor * (ct * cm - st * sm);
        target_deriv[i] = scale_factor * (cm + sm * ct / st);
    }
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return make_op(std::move(out), {cosines},
                   [lab = std::move(lab), target_deriv = std::move(target_deriv), b, c, scale_factor](Node& self) {
                       Tensor& g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                               g(i, j) += self.grad(i, j) * (j == lab[i] ? target_deriv[i] : scale_factor);
                   });
}

void backward(const Var& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
    if (loss.size() != 1) throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    Node* root = loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a deterministic topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order)
        if (!n->is_leaf) n->grad = Tensor();
    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf || !n->backward) continue;
        if (n->grad.empty()) continue;
        n->backward(*n);
    }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Tensor probe = x;
    Tensor grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = f(probe);
        probe[i] = orig - eps;
        const double fm = f(probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

}  // namespace ahan
