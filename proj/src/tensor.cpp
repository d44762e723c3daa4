#include "cogdrive/tensor.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace cogdrive {

namespace {

thread_local bool t_grad_enabled = true;
#ifdef NDEBUG
std::atomic<bool> g_check_finite{false};
#else
std::atomic<bool> g_check_finite{true};
#endif

using NodePtr = std::shared_ptr<TensorNode>;
using BackwardFn = std::function<void(TensorNode&)>;

Tensor make(Shape shape, std::vector<double> value, std::vector<NodePtr> parents, const char* op,
            BackwardFn fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    if (g_check_finite.load(std::memory_order_relaxed)) {
        for (double v : node->value)
            if (!std::isfinite(v)) throw RuntimeFailure(std::string("non-finite value produced by ") + op);
    }
    if (t_grad_enabled) {
        bool any = false;
        for (const auto& p : parents) any = any || p->requires_grad;
        if (any) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward_fn = std::move(fn);
        }
    }
    return Tensor(std::move(node));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

/// Number of times b tiles a under leading-batch expansion.
std::size_t tile_count(const char* op, const Shape& a, const Shape& b) {
    if (b.size() > a.size()) shape_error(op, a, b);
    for (std::size_t i = 0; i < b.size(); ++i)
        if (a[a.size() - b.size() + i] != b[i]) shape_error(op, a, b);
    std::size_t nb = numel_of(b);
    return nb == 0 ? 0 : numel_of(a) / nb;
}

template <class Fwd, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
    std::size_t reps = tile_count(op, a.shape(), b.shape());
    std::size_t nb = b.numel();
    const double* av = a.data().data();
    const double* bv = b.data().data();
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] = fwd(av[r * nb + j], bv[j]);
    return make(a.shape(), std::move(out), {a.node(), b.node()}, op, [reps, nb, da, db](TensorNode& self) {
        const auto& pa = self.parents[0];
        const auto& pb = self.parents[1];
        const double* g = self.grad.data();
        if (pa->requires_grad) {
            auto& ga = pa->grad_buffer();
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < nb; ++j)
                    ga[r * nb + j] += g[r * nb + j] * da(pa->value[r * nb + j], pb->value[j]);
        }
        if (pb->requires_grad) {
            auto& gb = pb->grad_buffer();
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < nb; ++j)
                    gb[j] += g[r * nb + j] * db(pa->value[r * nb + j], pb->value[j]);
        }
    });
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return make(a.shape(), std::move(out), {a.node()}, op, [deriv](TensorNode& self) {
        auto& pa = self.parents[0];
        auto& ga = pa->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] += self.grad[i] * deriv(pa->value[i], self.value[i]);
    });
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// --------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    std::size_t n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (numel_of(shape) != values.size())
        throw ValidationError("tensor data length " + std::to_string(values.size()) +
                              " does not match shape " + shape_string(shape));
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

std::span<const double> Tensor::grad() const { return node_->grad_buffer(); }
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), node_->value); }

void Tensor::backward() const {
    if (numel() != 1) throw ValidationError("backward() needs a scalar loss, got " + shape_string(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS for a topological order.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            TensorNode* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior nodes are freshly created per graph; reset their buffers.
    for (TensorNode* n : order)
        if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }
void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

// --------------------------------------------------------------------------
// Ops

namespace ops {

Tensor add(const Tensor& a, const Tensor& b) {
    return binary("add", a, b, [](double x, double y) { return x + y; },
                  [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary("sub", a, b, [](double x, double y) { return x - y; },
                  [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary("mul", a, b, [](double x, double y) { return x * y; },
                  [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary("div", a, b, [](double x, double y) { return x / y; },
                  [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double s) {
    return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Tensor logistic(const Tensor& a) {
    return unary("logistic", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& a) {
    return unary("sqrt", a, [](double x) { return std::sqrt(x); },
                 [](double, double y) { return 0.5 / y; });
}

Tensor atan2(const Tensor& y, const Tensor& x) {
    if (y.shape() != x.shape()) shape_error("atan2", y.shape(), x.shape());
    return binary("atan2", y, x, [](double yy, double xx) { return std::atan2(yy, xx); },
                  [](double yy, double xx) { return xx / (xx * xx + yy * yy); },
                  [](double yy, double xx) { return -yy / (xx * xx + yy * yy); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) shape_error("matmul", sa, sb);
    std::size_t m = sa[sa.size() - 2], k = sa.back();
    std::size_t kb = sb[sb.size() - 2], n = sb.back();
    if (k != kb) shape_error("matmul", sa, sb);
    std::size_t batch = numel_of(sa) / (m * k);
    bool shared = sb.size() == 2;
    if (!shared) {
        if (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))
            shape_error("matmul", sa, sb);
    }
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    std::vector<double> out(batch * m * n, 0.0);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* A = av + bi * m * k;
        const double* B = bv + (shared ? 0 : bi * k * n);
        double* C = out.data() + bi * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double aip = A[i * k + p];
                if (aip == 0.0) continue;
                const double* Brow = B + p * n;
                double* Crow = C + i * n;
                for (std::size_t j = 0; j < n; ++j) Crow[j] += aip * Brow[j];
            }
    }
    return make(std::move(out_shape), std::move(out), {a.node(), b.node()}, "matmul",
                [batch, m, k, n, shared](TensorNode& self) {
                    auto& pa = self.parents[0];
                    auto& pb = self.parents[1];
                    const double* G = self.grad.data();
                    if (pa->requires_grad) {
                        auto& ga = pa->grad_buffer();
                        for (std::size_t bi = 0; bi < batch; ++bi) {
                            const double* B = pb->value.data() + (shared ? 0 : bi * k * n);
                            const double* Gb = G + bi * m * n;
                            double* GA = ga.data() + bi * m * k;
                            for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t p = 0; p < k; ++p) {
                                    double acc = 0.0;
                                    const double* Brow = B + p * n;
                                    const double* Grow = Gb + i * n;
                                    for (std::size_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
                                    GA[i * k + p] += acc;
                                }
                        }
                    }
                    if (pb->requires_grad) {
                        auto& gb = pb->grad_buffer();
                        for (std::size_t bi = 0; bi < batch; ++bi) {
                            const double* A = pa->value.data() + bi * m * k;
                            const double* Gb = G + bi * m * n;
                            double* GB = gb.data() + (shared ? 0 : bi * k * n);
                            for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t p = 0; p < k; ++p) {
                                    double aip = A[i * k + p];
                                    if (aip == 0.0) continue;
                                    const double* Grow = Gb + i * n;
                                    double* GBrow = GB + p * n;
                                    for (std::size_t j = 0; j < n; ++j) GBrow[j] += aip * Grow[j];
                                }
                        }
                    }
                });
}

Tensor transpose(const Tensor& a) {
    const Shape& s = a.shape();
    if (s.size() < 2) throw ValidationError("transpose needs rank >= 2, got " + shape_string(s));
    std::size_t r = s[s.size() - 2], c = s.back();
    std::size_t batch = numel_of(s) / (r * c);
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
    std::vector<double> out(a.numel());
    const double* av = a.data().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = av[b * r * c + i * c + j];
    return make(std::move(out_shape), std::move(out), {a.node()}, "transpose", [batch, r, c](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    ga[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel_of(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
    std::vector<double> out(a.data().begin(), a.data().end());
    return make(std::move(shape), std::move(out), {a.node()}, "reshape", [](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ValidationError("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ValidationError("concat axis out of range for " + shape_string(s0));
    Shape out_shape = s0;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) shape_error("concat", s0, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i]) shape_error("concat", s0, s);
        out_shape[axis] += s[axis];
        extents.push_back(s[axis]);
        parents.push_back(p.node());
    }
    AxisSplit sp = split_axis(out_shape, axis);
    std::vector<double> out(numel_of(out_shape));
    std::size_t row = sp.extent * sp.inner;
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        std::size_t w = extents[pi] * sp.inner;
        const double* src = parts[pi].data().data();
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy(src + o * w, src + (o + 1) * w, out.data() + o * row + offset);
        offset += w;
    }
    return make(std::move(out_shape), std::move(out), std::move(parents), "concat",
                [extents, sp, row](TensorNode& self) {
                    std::size_t off = 0;
                    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                        std::size_t w = extents[pi] * sp.inner;
                        auto& p = self.parents[pi];
                        if (p->requires_grad) {
                            auto& g = p->grad_buffer();
                            for (std::size_t o = 0; o < sp.outer; ++o)
                                for (std::size_t i = 0; i < w; ++i) g[o * w + i] += self.grad[o * row + off + i];
                        }
                        off += w;
                    }
                });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (axis >= s.size() || begin > end || end > s[axis])
        throw ValidationError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                              std::to_string(axis) + " out of range for " + shape_string(s));
    AxisSplit sp = split_axis(s, axis);
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    std::size_t w = (end - begin) * sp.inner;
    std::size_t row = sp.extent * sp.inner;
    std::size_t off = begin * sp.inner;
    std::vector<double> out(sp.outer * w);
    const double* av = a.data().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy(av + o * row + off, av + o * row + off + w, out.data() + o * w);
    return make(std::move(out_shape), std::move(out), {a.node()}, "slice", [sp, w, row, off](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < w; ++i) ga[o * row + off + i] += self.grad[o * w + i];
    });
}

Tensor index_select(const Tensor& a, const std::vector<std::size_t>& rows) {
    const Shape& s = a.shape();
    if (s.empty()) throw ValidationError("index_select on a scalar");
    std::size_t inner = numel_of(s) / s[0];
    Shape out_shape = s;
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * inner);
    const double* av = a.data().data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= s[0]) throw ValidationError("index_select row out of range for " + shape_string(s));
        std::copy(av + rows[r] * inner, av + (rows[r] + 1) * inner, out.data() + r * inner);
    }
    return make(std::move(out_shape), std::move(out), {a.node()}, "index_select", [rows, inner](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t i = 0; i < inner; ++i) ga[rows[r] * inner + i] += self.grad[r * inner + i];
    });
}

Tensor softmax(const Tensor& a) {
    const Shape& s = a.shape();
    std::size_t n = s.empty() ? 1 : s.back();
    std::size_t rows = a.numel() / n;
    std::vector<double> out(a.numel());
    const double* av = a.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av + r * n;
        double* y = out.data() + r * n;
        double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    return make(s, std::move(out), {a.node()}, "softmax", [rows, n](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * n;
            const double* g = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    const Shape& s = a.shape();
    std::size_t n = s.back();
    if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) shape_error("layer_norm", s, gamma.shape());
    std::size_t rows = a.numel() / n;
    std::vector<double> out(a.numel());
    auto xhat = std::make_shared<std::vector<double>>(a.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    const double* av = a.data().data();
    const double* gv = gamma.data().data();
    const double* bv = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += x[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(n);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            double h = (x[j] - mu) * is;
            (*xhat)[r * n + j] = h;
            out[r * n + j] = h * gv[j] + bv[j];
        }
    }
    return make(s, std::move(out), {a.node(), gamma.node(), beta.node()}, "layer_norm",
                [rows, n, xhat, inv_std](TensorNode& self) {
                    auto& pa = self.parents[0];
                    auto& pg = self.parents[1];
                    auto& pb = self.parents[2];
                    const double* g = self.grad.data();
                    if (pg->requires_grad) {
                        auto& gg = pg->grad_buffer();
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * (*xhat)[r * n + j];
                    }
                    if (pb->requires_grad) {
                        auto& gb = pb->grad_buffer();
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                    }
                    if (pa->requires_grad) {
                        auto& ga = pa->grad_buffer();
                        const double* gam = pg->value.data();
                        double inv_n = 1.0 / static_cast<double>(n);
                        for (std::size_t r = 0; r < rows; ++r) {
                            double s1 = 0.0, s2 = 0.0;
                            for (std::size_t j = 0; j < n; ++j) {
                                double dh = g[r * n + j] * gam[j];
                                s1 += dh;
                                s2 += dh * (*xhat)[r * n + j];
                            }
                            for (std::size_t j = 0; j < n; ++j) {
                                double dh = g[r * n + j] * gam[j];
                                ga[r * n + j] +=
                                    (*inv_std)[r] * (dh - inv_n * s1 - (*xhat)[r * n + j] * inv_n * s2);
                            }
                        }
                    }
                });
}

Tensor max_pool(const Tensor& a, std::size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size() || s[axis] == 0) throw ValidationError("max_pool axis out of range for " + shape_string(s));
    AxisSplit sp = split_axis(s, axis);
    Shape out_shape = s;
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(sp.outer * sp.inner);
    std::vector<std::size_t> arg(sp.outer * sp.inner);
    const double* av = a.data().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t best = 0;
            double bv = av[o * sp.extent * sp.inner + i];
            for (std::size_t e = 1; e < sp.extent; ++e) {
                double v = av[(o * sp.extent + e) * sp.inner + i];
                if (v > bv) {
                    bv = v;
                    best = e;
                }
            }
            out[o * sp.inner + i] = bv;
            arg[o * sp.inner + i] = best;
        }
    return make(std::move(out_shape), std::move(out), {a.node()}, "max_pool", [sp, arg](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i)
                ga[(o * sp.extent + arg[o * sp.inner + i]) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return make({}, {acc}, {a.node()}, "sum", [](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (double& g : ga) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    double n = static_cast<double>(a.numel());
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return make({}, {acc / n}, {a.node()}, "mean", [n](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (double& g : ga) g += self.grad[0] / n;
    });
}

Tensor sum(const Tensor& a, std::size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ValidationError("sum axis out of range for " + shape_string(s));
    AxisSplit sp = split_axis(s, axis);
    Shape out_shape = s;
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    const double* av = a.data().data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out[o * sp.inner + i] += av[(o * sp.extent + e) * sp.inner + i];
    return make(std::move(out_shape), std::move(out), {a.node()}, "sum_axis", [sp](TensorNode& self) {
        auto& ga = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    ga[(o * sp.extent + e) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    const Shape& sq = q.shape();
    const Shape& sk = k.shape();
    const Shape& sv = v.shape();
    if (sq.size() != 3 || sk.size() != 3 || sv.size() != 3 || sq[0] != sk[0] || sk[0] != sv[0] ||
        sq[2] != sk[2] || sk[1] != sv[1])
        shape_error("attention", sq, sk);
    const std::size_t B = sq[0], Lq = sq[1], Lk = sk[1], D = sq[2], Dv = sv[2];
    if (heads == 0 || D % heads != 0 || Dv % heads != 0)
        throw ValidationError("attention: widths " + std::to_string(D) + "/" + std::to_string(Dv) +
                              " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t dh = D / heads, dvh = Dv / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto weights = std::make_shared<std::vector<double>>(B * heads * Lq * Lk);
    std::vector<double> out(B * Lq * Dv, 0.0);
    const double* Q = q.data().data();
    const double* K = k.data().data();
    const double* V = v.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < Lq; ++i) {
                double* w = weights->data() + ((b * heads + h) * Lq + i) * Lk;
                const double* qi = Q + (b * Lq + i) * D + h * dh;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < Lk; ++j) {
                    const double* kj = K + (b * Lk + j) * D + h * dh;
                    double acc = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
                    w[j] = acc * inv_sqrt;
                    mx = std::max(mx, w[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < Lk; ++j) z += (w[j] = std::exp(w[j] - mx));
                for (std::size_t j = 0; j < Lk; ++j) w[j] /= z;
                double* oi = out.data() + (b * Lq + i) * Dv + h * dvh;
                for (std::size_t j = 0; j < Lk; ++j) {
                    const double* vj = V + (b * Lk + j) * Dv + h * dvh;
                    for (std::size_t c = 0; c < dvh; ++c) oi[c] += w[j] * vj[c];
                }
            }

    return make({B, Lq, Dv}, std::move(out), {q.node(), k.node(), v.node()}, "attention",
                [=](TensorNode& self) {
                    auto& pq = self.parents[0];
                    auto& pk = self.parents[1];
                    auto& pv = self.parents[2];
                    const double* Qv = pq->value.data();
                    const double* Kv = pk->value.data();
                    const double* Vv = pv->value.data();
                    double* gq = pq->requires_grad ? pq->grad_buffer().data() : nullptr;
                    double* gk = pk->requires_grad ? pk->grad_buffer().data() : nullptr;
                    double* gv = pv->requires_grad ? pv->grad_buffer().data() : nullptr;
                    std::vector<double> dw(Lk);
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t h = 0; h < heads; ++h)
                            for (std::size_t i = 0; i < Lq; ++i) {
                                const double* w = weights->data() + ((b * heads + h) * Lq + i) * Lk;
                                const double* go = self.grad.data() + (b * Lq + i) * Dv + h * dvh;
                                double dot = 0.0;
                                for (std::size_t j = 0; j < Lk; ++j) {
                                    const double* vj = Vv + (b * Lk + j) * Dv + h * dvh;
                                    double acc = 0.0;
                                    for (std::size_t c = 0; c < dvh; ++c) acc += go[c] * vj[c];
                                    dw[j] = acc;
                                    dot += acc * w[j];
                                    if (gv) {
                                        double* gvj = gv + (b * Lk + j) * Dv + h * dvh;
                                        for (std::size_t c = 0; c < dvh; ++c) gvj[c] += w[j] * go[c];
                                    }
                                }
                                const double* qi = Qv + (b * Lq + i) * D + h * dh;
                                double* gqi = gq ? gq + (b * Lq + i) * D + h * dh : nullptr;
                                for (std::size_t j = 0; j < Lk; ++j) {
                                    double ds = w[j] * (dw[j] - dot) * inv_sqrt;
                                    if (ds == 0.0) continue;
                                    const double* kj = Kv + (b * Lk + j) * D + h * dh;
                                    if (gqi)
                                        for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                                    if (gk) {
                                        double* gkj = gk + (b * Lk + j) * D + h * dh;
                                        for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                                    }
                                }
                            }
                });
}

}  // namespace ops

// --------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
    if (index_.contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
    index_[name] = items_.size();
    items_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(values)));
    return items_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return items_[it->second].second;
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& [name, t] : items_)
        out.add(name, t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
    return out;
}

// --------------------------------------------------------------------------
// Weights IO

std::string dump_weights(const ParamStore& params, const std::string& metadata_json) {
    using detail::Json;
    Json doc;
    doc["format"] = kWeightsFormat;
    doc["metadata"] = metadata_json.empty() ? Json::object() : detail::parse_json(metadata_json, "metadata");
    Json list = Json::array();
    for (const auto& [name, t] : params.items()) {
        Json p;
        p["name"] = name;
        p["shape"] = t.shape();
        p["values"] = std::vector<double>(t.data().begin(), t.data().end());
        list.push_back(std::move(p));
    }
    doc["params"] = std::move(list);
    return doc.dump();
}

void save_weights(const ParamStore& params, const std::string& metadata_json,
                  const std::filesystem::path& path) {
    detail::write_file_atomic(path, dump_weights(params, metadata_json));
}

LoadedWeights parse_weights(std::string_view text) {
    using detail::Json;
    Json doc = detail::parse_json(text, "weights");
    detail::check_format(doc, kWeightsFormat);
    LoadedWeights out;
    if (doc.contains("metadata")) out.metadata_json = doc["metadata"].dump();
    const Json& list = detail::require(doc, "params", "weights");
    if (!list.is_array()) throw ValidationError("weights.params: expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
        std::string where = "weights.params[" + std::to_string(i) + "]";
        const Json& p = list[i];
        std::string name = detail::string_at(p, "name", where);
        const Json& js = detail::require(p, "shape", where);
        const Json& jv = detail::require(p, "values", where);
        if (!js.is_array() || !jv.is_array()) throw ValidationError(where + ": shape/values must be arrays");
        Shape shape;
        for (const auto& d : js) {
            if (!d.is_number_unsigned()) throw ValidationError(where + ".shape: expected non-negative integers");
            shape.push_back(d.get<std::size_t>());
        }
        std::vector<double> values;
        values.reserve(jv.size());
        for (const auto& v : jv) values.push_back(detail::number_at(v, where + ".values"));
        if (numel_of(shape) != values.size())
            throw ValidationError(where + ": " + std::to_string(values.size()) + " values for shape " +
                                  shape_string(shape));
        out.params.emplace_back(std::move(name), Tensor::parameter(std::move(shape), std::move(values)));
    }
    return out;
}

LoadedWeights load_weights(const std::filesystem::path& path) {
    return parse_weights(detail::read_file(path));
}

}  // namespace cogdrive
