#pragma once

// Dense 64-bit real tensors with a dynamically recorded reverse-mode tape.
// Each operation builds a fresh output node holding references to its inputs
// and a local pull rule; backward() walks the recorded graph once in reverse
// topological order. Tensors are cheap value-semantic handles to shared nodes.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace clavs {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    // Distributes this node's grad into its parents' grads.
    std::function<void(Node&)> pull;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline std::uint64_t next_seq() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->seq = detail::next_seq();
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> d(shape_numel(shape), 0.0);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        std::vector<double> d(shape_numel(shape), v);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    double item() const {
        if (size() != 1)
            throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
        return node_->value[0];
    }

    double at(std::size_t i) const { return node_->value[i]; }

    std::span<const double> values() const { return node_->value; }

    // Mutable access to stored values. Meant for leaves (parameter updates,
    // data fill); mutating an interior node invalidates recorded gradients.
    std::span<double> values_mut() { return node_->value; }

    std::span<const double> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Copy of the values as a fresh constant leaf.
    Tensor detach() const { return from_data(node_->shape, node_->value, false); }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<std::shared_ptr<Node>> parents,
                      std::function<void(Node&)> pull) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->seq = next_seq();
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->pull = std::move(pull);
    }
    return Tensor(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tape: the recorded computation in topological order (inputs precede users).

struct Tape {
    std::vector<std::shared_ptr<detail::Node>> nodes;

    static Tape record_from(const Tensor& root) {
        Tape tape;
        if (!root.node()->requires_grad) return tape;
        std::unordered_set<detail::Node*> visited;
        // iterative post-order DFS; parents land before their users
        std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> st;
        st.emplace_back(root.node(), 0);
        visited.insert(root.node().get());
        while (!st.empty()) {
            auto& [node, child] = st.back();
            if (child < node->parents.size()) {
                auto parent = node->parents[child];
                ++child;
                if (parent->requires_grad && !visited.count(parent.get())) {
                    visited.insert(parent.get());
                    st.emplace_back(parent, 0);
                }
            } else {
                tape.nodes.push_back(node);
                st.pop_back();
            }
        }
        return tape;
    }

    // Seeds the final node with unit gradient and pulls through every recorded
    // node exactly once, newest to oldest.
    void run_backward() {
        if (nodes.empty()) return;
        auto& root = nodes.back();
        root->ensure_grad();
        std::fill(root->grad.begin(), root->grad.end(), 0.0);
        root->grad[0] = 1.0;
        for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
            auto& n = *it;
            if (n->pull) {
                n->ensure_grad();
                n->pull(*n);
            }
        }
    }
};

inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    Tape tape = Tape::record_from(loss);
    tape.run_backward();
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

enum class BinBroadcast { None, RightVector, LeftVector };

inline BinBroadcast classify_broadcast(const Shape& a, const Shape& b,
                                       const char* op_name) {
    if (a == b) return BinBroadcast::None;
    // a per-channel vector may broadcast over the trailing (channel) axis
    if (b.size() == 1 && !a.empty() && a.back() == b[0]) return BinBroadcast::RightVector;
    if (a.size() == 1 && !b.empty() && b.back() == a[0]) return BinBroadcast::LeftVector;
    throw DimensionError(std::string(op_name) + ": shapes " + shape_str(a) + " and " +
                         shape_str(b) + " are neither equal nor channel-broadcastable");
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
    auto mode = classify_broadcast(a.shape(), b.shape(), name);
    auto an = a.node();
    auto bn = b.node();
    const auto& av = an->value;
    const auto& bv = bn->value;
    Shape out_shape = (mode == BinBroadcast::LeftVector) ? bn->shape : an->shape;
    std::size_t n = shape_numel(out_shape);
    std::size_t c = 0;
    if (mode == BinBroadcast::RightVector) c = bv.size();
    if (mode == BinBroadcast::LeftVector) c = av.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double x = (mode == BinBroadcast::LeftVector) ? av[i % c] : av[i];
        double y = (mode == BinBroadcast::RightVector) ? bv[i % c] : bv[i];
        out[i] = fwd(x, y);
    }
    return make_op(std::move(out_shape), std::move(out), {an, bn},
                   [an, bn, mode, c, n, da, db](Node& self) {
                       for (std::size_t i = 0; i < n; ++i) {
                           double g = self.grad[i];
                           std::size_t ia = (mode == BinBroadcast::LeftVector) ? i % c : i;
                           std::size_t ib = (mode == BinBroadcast::RightVector) ? i % c : i;
                           double x = an->value[ia];
                           double y = bn->value[ib];
                           if (an->requires_grad) {
                               an->ensure_grad();
                               an->grad[ia] += g * da(x, y);
                           }
                           if (bn->requires_grad) {
                               bn->ensure_grad();
                               bn->grad[ib] += g * db(x, y);
                           }
                       }
                   });
}

template <typename Fwd, typename Dx>
Tensor unary_op(const Tensor& a, Fwd fwd, Dx dx) {
    auto an = a.node();
    std::vector<double> out(an->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(an->value[i]);
    return make_op(an->shape, std::move(out), {an}, [an, dx](Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * dx(an->value[i], self.value[i]);
    });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                       : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                            [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor gelu(const Tensor& a) {
    // exact erf form; derivative Phi(x) + x*phi(x)
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary_op(
        a,
        [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::exp(x); },
                            [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::log(x); },
                            [](double x, double) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return x * x; },
                            [](double x, double) { return 2.0 * x; });
}

// multiply by a compile-time constant scalar
inline Tensor scale(const Tensor& a, double c) {
    return detail::unary_op(a, [c](double x) { return c * x; },
                            [c](double, double) { return c; });
}

inline Tensor add_const(const Tensor& a, double c) {
    return detail::unary_op(a, [c](double x) { return x + c; },
                            [](double, double) { return 1.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    auto an = a.node();
    auto bn = b.node();
    std::vector<double> out(m * n, 0.0);
    const auto& av = an->value;
    const auto& bv = bn->value;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            double aik = av[i * k + kk];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aik * bv[kk * n + j];
        }
    return detail::make_op({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::Node& self) {
        // dA = dC * B^T, dB = A^T * dC
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += self.grad[i * n + j] * bn->value[kk * n + j];
                    an->grad[i * k + kk] += acc;
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t kk = 0; kk < k; ++kk)
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i)
                        acc += an->value[i * k + kk] * self.grad[i * n + j];
                    bn->grad[kk * n + j] += acc;
                }
        }
    });
}

inline Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2)
        throw DimensionError("transpose2d: expects rank-2, got " + shape_str(a.shape()));
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    auto an = a.node();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = an->value[i * c + j];
    return detail::make_op({c, r}, std::move(out), {an}, [an, r, c](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j * r + i];
    });
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.size())
        throw DimensionError("reshape: " + shape_str(a.shape()) + " has " +
                             std::to_string(a.size()) + " elements, target " +
                             shape_str(new_shape) + " wants " +
                             std::to_string(shape_numel(new_shape)));
    auto an = a.node();
    std::vector<double> out = an->value;
    return detail::make_op(std::move(new_shape), std::move(out), {an}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    });
}

// slice along the last axis: keeps [start, start+len)
inline Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len) {
    if (a.rank() == 0) throw DimensionError("slice_last: scalar input");
    const std::size_t c = a.shape().back();
    if (start + len > c)
        throw DimensionError("slice_last: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") exceeds axis of extent " +
                             std::to_string(c));
    auto an = a.node();
    Shape out_shape = an->shape;
    out_shape.back() = len;
    const std::size_t rows = a.size() / c;
    std::vector<double> out(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) out[r * len + j] = an->value[r * c + start + j];
    return detail::make_op(std::move(out_shape), std::move(out), {an},
                           [an, rows, len, c, start](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < len; ++j)
                                       an->grad[r * c + start + j] += self.grad[r * len + j];
                           });
}

// slice rank-2 rows: keeps [start, start+len)
inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t len) {
    if (a.rank() != 2) throw DimensionError("slice_rows: expects rank-2 input");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    if (start + len > r)
        throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") exceeds " + std::to_string(r) +
                             " rows");
    auto an = a.node();
    std::vector<double> out(an->value.begin() + static_cast<std::ptrdiff_t>(start * c),
                            an->value.begin() + static_cast<std::ptrdiff_t>((start + len) * c));
    return detail::make_op({len, c}, std::move(out), {an},
                           [an, start, c, len](detail::Node& self) {
                               if (!an->requires_grad) return;
                               an->ensure_grad();
                               for (std::size_t i = 0; i < len * c; ++i)
                                   an->grad[start * c + i] += self.grad[i];
                           });
}

// ---------------------------------------------------------------------------
// softmax / layer norm / reductions

namespace detail {

inline int normalize_axis(int axis, std::size_t rank, const char* op) {
    int r = static_cast<int>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw DimensionError(std::string(op) + ": axis out of range for rank " +
                             std::to_string(rank));
    return axis;
}

struct AxisSpan {
    std::size_t outer, extent, inner;
};

inline AxisSpan axis_span(const Shape& s, int axis) {
    AxisSpan sp{1, s[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace detail

inline Tensor softmax(const Tensor& a, int axis = -1) {
    if (a.rank() == 0) throw DimensionError("softmax: scalar input has no axis");
    int ax = detail::normalize_axis(axis, a.rank(), "softmax");
    auto sp = detail::axis_span(a.shape(), ax);
    if (sp.extent == 0) throw DimensionError("softmax: empty axis");
    auto an = a.node();
    std::vector<double> out(an->value.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.extent * sp.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t e = 0; e < sp.extent; ++e)
                mx = std::max(mx, an->value[base + e * sp.inner]);
            double sum = 0.0;
            for (std::size_t e = 0; e < sp.extent; ++e) {
                double v = std::exp(an->value[base + e * sp.inner] - mx);
                out[base + e * sp.inner] = v;
                sum += v;
            }
            for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= sum;
        }
    return detail::make_op(an->shape, std::move(out), {an}, [an, sp](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        // dx = y .* (g - sum(g .* y))
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.extent * sp.inner + in;
                double dot = 0.0;
                for (std::size_t e = 0; e < sp.extent; ++e) {
                    std::size_t idx = base + e * sp.inner;
                    dot += self.grad[idx] * self.value[idx];
                }
                for (std::size_t e = 0; e < sp.extent; ++e) {
                    std::size_t idx = base + e * sp.inner;
                    an->grad[idx] += self.value[idx] * (self.grad[idx] - dot);
                }
            }
    });
}

// Normalizes over the last axis, then applies the affine gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() == 0 || x.shape().back() == 0)
        throw DimensionError("layer_norm: needs a non-empty last axis, got " +
                             shape_str(x.shape()));
    const std::size_t c = x.shape().back();
    if (gain.size() != c || bias.size() != c)
        throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                             shape_str(bias.shape()) + " do not match last axis of " +
                             shape_str(x.shape()));
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    const std::size_t rows = x.size() / c;
    std::vector<double> out(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xn->value.data() + r * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            double xh = (row[j] - mean) * is;
            (*xhat)[r * c + j] = xh;
            out[r * c + j] = gn->value[j] * xh + bn->value[j];
        }
    }
    return detail::make_op(
        xn->shape, std::move(out), {xn, gn, bn},
        [xn, gn, bn, rows, c, xhat, inv_std](detail::Node& self) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * c;
                const double* xh = xhat->data() + r * c;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) gn->grad[j] += g[j] * xh[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t j = 0; j < c; ++j) bn->grad[j] += g[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double mean_dy = 0.0, mean_dyxh = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        double dy = g[j] * gn->value[j];
                        mean_dy += dy;
                        mean_dyxh += dy * xh[j];
                    }
                    mean_dy /= static_cast<double>(c);
                    mean_dyxh /= static_cast<double>(c);
                    double is = (*inv_std)[r];
                    for (std::size_t j = 0; j < c; ++j) {
                        double dy = g[j] * gn->value[j];
                        xn->grad[r * c + j] += is * (dy - mean_dy - xh[j] * mean_dyxh);
                    }
                }
            }
        });
}

namespace detail {

enum class ReduceKind { Sum, Mean, Max };

inline Tensor reduce_impl(const Tensor& a, std::optional<int> axis, ReduceKind kind) {
    auto an = a.node();
    if (!axis.has_value()) {
        // full reduction to a scalar
        const std::size_t n = a.size();
        if (n == 0) throw DimensionError("reduce: empty tensor");
        double v = 0.0;
        std::size_t arg = 0;
        if (kind == ReduceKind::Max) {
            v = an->value[0];
            for (std::size_t i = 1; i < n; ++i)
                if (an->value[i] > v) { v = an->value[i]; arg = i; }
        } else {
            for (double x : an->value) v += x;
            if (kind == ReduceKind::Mean) v /= static_cast<double>(n);
        }
        return make_op({}, {v}, {an}, [an, n, kind, arg](Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            double g = self.grad[0];
            switch (kind) {
                case ReduceKind::Sum:
                    for (std::size_t i = 0; i < n; ++i) an->grad[i] += g;
                    break;
                case ReduceKind::Mean:
                    for (std::size_t i = 0; i < n; ++i) an->grad[i] += g / static_cast<double>(n);
                    break;
                case ReduceKind::Max:
                    an->grad[arg] += g;  // first maximal index
                    break;
            }
        });
    }
    int ax = normalize_axis(*axis, a.rank(), "reduce");
    auto sp = axis_span(a.shape(), ax);
    if (sp.extent == 0) throw DimensionError("reduce: empty axis");
    Shape out_shape;
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (static_cast<int>(i) != ax) out_shape.push_back(a.shape()[i]);
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    if (kind == ReduceKind::Max) argmax->assign(sp.outer * sp.inner, 0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.extent * sp.inner + in;
            const std::size_t oi = o * sp.inner + in;
            if (kind == ReduceKind::Max) {
                double best = an->value[base];
                std::size_t bi = 0;
                for (std::size_t e = 1; e < sp.extent; ++e) {
                    double v = an->value[base + e * sp.inner];
                    if (v > best) { best = v; bi = e; }
                }
                out[oi] = best;
                (*argmax)[oi] = bi;
            } else {
                double acc = 0.0;
                for (std::size_t e = 0; e < sp.extent; ++e) acc += an->value[base + e * sp.inner];
                out[oi] = (kind == ReduceKind::Mean) ? acc / static_cast<double>(sp.extent) : acc;
            }
        }
    return make_op(std::move(out_shape), std::move(out), {an},
                   [an, sp, kind, argmax](Node& self) {
                       if (!an->requires_grad) return;
                       an->ensure_grad();
                       for (std::size_t o = 0; o < sp.outer; ++o)
                           for (std::size_t in = 0; in < sp.inner; ++in) {
                               const std::size_t base = o * sp.extent * sp.inner + in;
                               const std::size_t oi = o * sp.inner + in;
                               double g = self.grad[oi];
                               switch (kind) {
                                   case ReduceKind::Sum:
                                       for (std::size_t e = 0; e < sp.extent; ++e)
                                           an->grad[base + e * sp.inner] += g;
                                       break;
                                   case ReduceKind::Mean:
                                       for (std::size_t e = 0; e < sp.extent; ++e)
                                           an->grad[base + e * sp.inner] +=
                                               g / static_cast<double>(sp.extent);
                                       break;
                                   case ReduceKind::Max:
                                       an->grad[base + (*argmax)[oi] * sp.inner] += g;
                                       break;
                               }
                           }
                   });
}

}  // namespace detail

inline Tensor reduce_sum(const Tensor& a, std::optional<int> axis = std::nullopt) {
    return detail::reduce_impl(a, axis, detail::ReduceKind::Sum);
}
inline Tensor reduce_mean(const Tensor& a, std::optional<int> axis = std::nullopt) {
    return detail::reduce_impl(a, axis, detail::ReduceKind::Mean);
}
inline Tensor reduce_max(const Tensor& a, std::optional<int> axis = std::nullopt) {
    return detail::reduce_impl(a, axis, detail::ReduceKind::Max);
}

// ---------------------------------------------------------------------------
// Spatial ops for the mask decoder

// tokens [n x q*q] laid out as a (grid_h x grid_w) grid of q x q blocks
// -> [grid_h*q x grid_w*q]
inline Tensor assemble_patch_grid(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w,
                                  std::size_t q) {
    if (tokens.rank() != 2 || tokens.shape()[0] != grid_h * grid_w ||
        tokens.shape()[1] != q * q)
        throw DimensionError("assemble_patch_grid: tokens " + shape_str(tokens.shape()) +
                             " do not form a " + std::to_string(grid_h) + "x" +
                             std::to_string(grid_w) + " grid of " + std::to_string(q) + "x" +
                             std::to_string(q) + " blocks");
    auto an = tokens.node();
    const std::size_t h = grid_h * q, w = grid_w * q;
    std::vector<double> out(h * w);
    auto src_index = [=](std::size_t r, std::size_t c) {
        std::size_t tok = (r / q) * grid_w + (c / q);
        std::size_t off = (r % q) * q + (c % q);
        return tok * q * q + off;
    };
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = an->value[src_index(r, c)];
    return detail::make_op({h, w}, std::move(out), {an}, [an, h, w, src_index](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c)
                an->grad[src_index(r, c)] += self.grad[r * w + c];
    });
}

// Bilinear resize of a [h x w] map; half-pixel centers, edges clamped.
inline Tensor bilinear_upsample2d(const Tensor& a, std::size_t out_h, std::size_t out_w) {
    if (a.rank() != 2) throw DimensionError("bilinear_upsample2d: expects rank-2 input");
    const std::size_t h = a.shape()[0], w = a.shape()[1];
    if (h == 0 || w == 0 || out_h == 0 || out_w == 0)
        throw DimensionError("bilinear_upsample2d: empty extent");
    auto an = a.node();
    struct Tap {
        std::size_t i0, i1;
        double f;  // weight of i1
    };
    auto taps = [](std::size_t in_n, std::size_t out_n) {
        std::vector<Tap> t(out_n);
        double r = static_cast<double>(in_n) / static_cast<double>(out_n);
        for (std::size_t i = 0; i < out_n; ++i) {
            double src = (static_cast<double>(i) + 0.5) * r - 0.5;
            if (src < 0.0) src = 0.0;
            double fl = std::floor(src);
            std::size_t i0 = static_cast<std::size_t>(fl);
            if (i0 >= in_n - 1) { t[i] = {in_n - 1, in_n - 1, 0.0}; continue; }
            t[i] = {i0, i0 + 1, src - fl};
        }
        return t;
    };
    auto row_taps = std::make_shared<std::vector<Tap>>(taps(h, out_h));
    auto col_taps = std::make_shared<std::vector<Tap>>(taps(w, out_w));
    std::vector<double> out(out_h * out_w);
    for (std::size_t r = 0; r < out_h; ++r) {
        const Tap& tr = (*row_taps)[r];
        for (std::size_t c = 0; c < out_w; ++c) {
            const Tap& tc = (*col_taps)[c];
            double v00 = an->value[tr.i0 * w + tc.i0];
            double v01 = an->value[tr.i0 * w + tc.i1];
            double v10 = an->value[tr.i1 * w + tc.i0];
            double v11 = an->value[tr.i1 * w + tc.i1];
            double top = v00 + tc.f * (v01 - v00);
            double bot = v10 + tc.f * (v11 - v10);
            out[r * out_w + c] = top + tr.f * (bot - top);
        }
    }
    return detail::make_op(
        {out_h, out_w}, std::move(out), {an},
        [an, w, out_h, out_w, row_taps, col_taps](detail::Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (std::size_t r = 0; r < out_h; ++r) {
                const Tap& tr = (*row_taps)[r];
                for (std::size_t c = 0; c < out_w; ++c) {
                    const Tap& tc = (*col_taps)[c];
                    double g = self.grad[r * out_w + c];
                    double w00 = (1.0 - tr.f) * (1.0 - tc.f);
                    double w01 = (1.0 - tr.f) * tc.f;
                    double w10 = tr.f * (1.0 - tc.f);
                    double w11 = tr.f * tc.f;
                    an->grad[tr.i0 * w + tc.i0] += g * w00;
                    an->grad[tr.i0 * w + tc.i1] += g * w01;
                    an->grad[tr.i1 * w + tc.i0] += g * w10;
                    an->grad[tr.i1 * w + tc.i1] += g * w11;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Fused loss primitives. These exist so the exact gradients stay smooth where
// composed forms would hit relu/abs kinks at zero logits.

// mean over all elements of the numerically stable logit-form BCE
inline Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& target) {
    if (logits.shape() != target.shape())
        throw DimensionError("bce_with_logits: logits " + shape_str(logits.shape()) +
                             " vs target " + shape_str(target.shape()));
    if (target.requires_grad())
        throw ContractError("bce_with_logits: target must be a constant");
    auto zn = logits.node();
    auto tn = target.node();
    const std::size_t n = logits.size();
    if (n == 0) throw DimensionError("bce_with_logits: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = zn->value[i], m = tn->value[i];
        // max(z,0) - z*m + log(1 + exp(-|z|))
        double az = std::abs(z);
        acc += (z > 0.0 ? z : 0.0) - z * m + std::log1p(std::exp(-az));
    }
    acc /= static_cast<double>(n);
    return detail::make_op({}, {acc}, {zn, tn}, [zn, tn, n](detail::Node& self) {
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            double z = zn->value[i];
            double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            zn->grad[i] += g * (s - tn->value[i]);
        }
    });
}

// -log softmax(logits)[label]
inline Tensor cross_entropy_with_logits(const Tensor& logits, std::size_t label) {
    const std::size_t k = logits.size();
    if (label >= k)
        throw ContractError("cross_entropy: label " + std::to_string(label) +
                            " out of range for " + std::to_string(k) + " classes");
    auto zn = logits.node();
    double mx = *std::max_element(zn->value.begin(), zn->value.end());
    double sum = 0.0;
    for (double z : zn->value) sum += std::exp(z - mx);
    double lse = std::log(sum) + mx;
    double v = lse - zn->value[label];
    return detail::make_op({}, {v}, {zn}, [zn, label, k, mx, sum](detail::Node& self) {
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        double g = self.grad[0];
        for (std::size_t i = 0; i < k; ++i) {
            double p = std::exp(zn->value[i] - mx) / sum;
            zn->grad[i] += g * (p - (i == label ? 1.0 : 0.0));
        }
    });
}

}  // namespace clavs
