#include "sanmove/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "sanmove/kernels.hpp"

namespace sanmove::autodiff {

namespace {

VarPtr make_node(std::vector<std::size_t> shape, std::vector<VarPtr> parents) {
    auto v = std::make_shared<Var>();
    v->shape = std::move(shape);
    v->val.assign(v->numel(), 0.0);
    v->parents = std::move(parents);
    for (const auto& p : v->parents)
        if (p->requires_grad) v->requires_grad = true;
    return v;
}

void check_matrix(const VarPtr& v, const char* who) {
    if (v->shape.size() > 2)
        throw ShapeError(std::string(who) + ": expected rank <= 2, got " + shape_str(v->shape));
}

}  // namespace

VarPtr leaf(const Tensor& t, bool requires_grad) {
    auto v = std::make_shared<Var>();
    v->shape = t.shape;
    v->ext = t.data.data();
    v->requires_grad = requires_grad;
    return v;
}

VarPtr constant(Tensor t) {
    auto v = std::make_shared<Var>();
    v->shape = t.shape;
    v->val = std::move(t.data);
    return v;
}

VarPtr matmul(const VarPtr& a, const VarPtr& b) {
    check_matrix(a, "matmul");
    check_matrix(b, "matmul");
    const std::size_t m = a->rows(), k = a->cols(), n = b->cols();
    if (b->rows() != k)
        throw ShapeError("matmul: " + shape_str(a->shape) + " x " + shape_str(b->shape));
    auto out = make_node({m, n}, {a, b});
    kernels::matmul(a->data(), b->data(), out->val.data(), m, k, n);
    auto* o = out.get();
    out->backprop = [o, a, b, m, k, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            kernels::matmul_nt(o->grad.data(), b->data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kernels::matmul_tn(a->data(), o->grad.data(), b->grad.data(), k, m, n);
        }
    };
    return out;
}

VarPtr matmul_nt(const VarPtr& a, const VarPtr& b) {
    check_matrix(a, "matmul_nt");
    check_matrix(b, "matmul_nt");
    const std::size_t m = a->rows(), k = a->cols(), n = b->rows();
    if (b->cols() != k)
        throw ShapeError("matmul_nt: " + shape_str(a->shape) + " x " + shape_str(b->shape) + "^T");
    auto out = make_node({m, n}, {a, b});
    kernels::matmul_nt(a->data(), b->data(), out->val.data(), m, k, n);
    auto* o = out.get();
    out->backprop = [o, a, b, m, k, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            kernels::matmul(o->grad.data(), b->data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kernels::matmul_tn(o->grad.data(), a->data(), b->grad.data(), n, m, k);
        }
    };
    return out;
}

VarPtr add(const VarPtr& a, const VarPtr& b) {
    const std::size_t n = a->numel();
    const bool same = a->shape == b->shape || n == b->numel();
    const bool bcast = !same && b->numel() == a->cols() && a->shape.size() == 2;
    if (!same && !bcast)
        throw ShapeError("add: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_node(a->shape, {a, b});
    const double* ad = a->data();
    const double* bd = b->data();
    if (same) {
        for (std::size_t i = 0; i < n; ++i) out->val[i] = ad[i] + bd[i];
    } else {
        const std::size_t cols = a->cols();
        for (std::size_t i = 0; i < n; ++i) out->val[i] = ad[i] + bd[i % cols];
    }
    auto* o = out.get();
    out->backprop = [o, a, b, same] {
        const std::size_t n = o->numel();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            if (same) {
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += o->grad[i];
            } else {
                const std::size_t cols = o->cols();
                for (std::size_t i = 0; i < n; ++i) b->grad[i % cols] += o->grad[i];
            }
        }
    };
    return out;
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
    if (a->numel() != b->numel())
        throw ShapeError("mul: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_node(a->shape, {a, b});
    const double* ad = a->data();
    const double* bd = b->data();
    const std::size_t n = a->numel();
    for (std::size_t i = 0; i < n; ++i) out->val[i] = ad[i] * bd[i];
    auto* o = out.get();
    out->backprop = [o, a, b] {
        const std::size_t n = o->numel();
        if (a->requires_grad) {
            a->ensure_grad();
            const double* bd = b->data();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * bd[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            const double* ad = a->data();
            for (std::size_t i = 0; i < n; ++i) b->grad[i] += o->grad[i] * ad[i];
        }
    };
    return out;
}

VarPtr mul_const(const VarPtr& a, const std::vector<double>& c) {
    if (a->numel() != c.size())
        throw ShapeError("mul_const: size mismatch");
    auto out = make_node(a->shape, {a});
    const double* ad = a->data();
    for (std::size_t i = 0; i < c.size(); ++i) out->val[i] = ad[i] * c[i];
    auto* o = out.get();
    out->backprop = [o, a, c] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < c.size(); ++i) a->grad[i] += o->grad[i] * c[i];
    };
    return out;
}

VarPtr add_const(const VarPtr& a, const std::vector<double>& c) {
    if (a->numel() != c.size())
        throw ShapeError("add_const: size mismatch");
    auto out = make_node(a->shape, {a});
    const double* ad = a->data();
    for (std::size_t i = 0; i < c.size(); ++i) out->val[i] = ad[i] + c[i];
    auto* o = out.get();
    out->backprop = [o, a, cc = c] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < cc.size(); ++i)
            if (std::isfinite(cc[i])) a->grad[i] += o->grad[i];
    };
    return out;
}

VarPtr scale(const VarPtr& a, double s) {
    auto out = make_node(a->shape, {a});
    const double* ad = a->data();
    const std::size_t n = a->numel();
    for (std::size_t i = 0; i < n; ++i) out->val[i] = ad[i] * s;
    auto* o = out.get();
    out->backprop = [o, a, s] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const std::size_t n = o->numel();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += o->grad[i] * s;
    };
    return out;
}

VarPtr relu(const VarPtr& a) {
    auto out = make_node(a->shape, {a});
    const double* ad = a->data();
    const std::size_t n = a->numel();
    for (std::size_t i = 0; i < n; ++i) out->val[i] = ad[i] > 0.0 ? ad[i] : 0.0;
    auto* o = out.get();
    out->backprop = [o, a] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const double* ad = a->data();
        const std::size_t n = o->numel();
        for (std::size_t i = 0; i < n; ++i)
            if (ad[i] > 0.0) a->grad[i] += o->grad[i];
    };
    return out;
}

VarPtr sigmoid(const VarPtr& a) {
    auto out = make_node(a->shape, {a});
    const double* ad = a->data();
    const std::size_t n = a->numel();
    for (std::size_t i = 0; i < n; ++i) out->val[i] = 1.0 / (1.0 + std::exp(-ad[i]));
    auto* o = out.get();
    out->backprop = [o, a] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const std::size_t n = o->numel();
        for (std::size_t i = 0; i < n; ++i) {
            const double y = o->val[i];
            a->grad[i] += o->grad[i] * y * (1.0 - y);
        }
    };
    return out;
}

VarPtr tanh_v(const VarPtr& a) {
    auto out = make_node(a->shape, {a});
    const double* ad = a->data();
    const std::size_t n = a->numel();
    for (std::size_t i = 0; i < n; ++i) out->val[i] = std::tanh(ad[i]);
    auto* o = out.get();
    out->backprop = [o, a] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const std::size_t n = o->numel();
        for (std::size_t i = 0; i < n; ++i) {
            const double y = o->val[i];
            a->grad[i] += o->grad[i] * (1.0 - y * y);
        }
    };
    return out;
}

VarPtr softmax_rows(const VarPtr& a) {
    check_matrix(a, "softmax_rows");
    const std::size_t m = a->rows(), n = a->cols();
    auto out = make_node(a->shape, {a});
    const double* ad = a->data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = ad + i * n;
        double* y = out->val.data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[j]);
        if (!std::isfinite(mx))
            throw std::runtime_error("softmax_rows: fully masked row " + std::to_string(i));
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    auto* o = out.get();
    out->backprop = [o, a, m, n] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = o->val.data() + i * n;
            const double* dy = o->grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            double* dx = a->grad.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    };
    return out;
}

VarPtr mean_axis0(const VarPtr& a) {
    check_matrix(a, "mean_axis0");
    const std::size_t m = a->rows(), n = a->cols();
    if (m == 0) throw ShapeError("mean_axis0: empty");
    auto out = make_node({n}, {a});
    const double* ad = a->data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->val[j] += ad[i * n + j];
    for (std::size_t j = 0; j < n; ++j) out->val[j] /= double(m);
    auto* o = out.get();
    out->backprop = [o, a, m, n] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) a->grad[i * n + j] += o->grad[j] / double(m);
    };
    return out;
}

VarPtr sum_all(const VarPtr& a) {
    auto out = make_node({1}, {a});
    const double* ad = a->data();
    const std::size_t n = a->numel();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += ad[i];
    out->val[0] = s;
    auto* o = out.get();
    out->backprop = [o, a] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const std::size_t n = a->numel();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += o->grad[0];
    };
    return out;
}

VarPtr gather_rows(const VarPtr& table, const std::vector<std::size_t>& idx) {
    check_matrix(table, "gather_rows");
    const std::size_t r = table->rows(), d = table->cols();
    for (auto i : idx)
        if (i >= r)
            throw std::out_of_range("gather_rows: index " + std::to_string(i) + " >= " + std::to_string(r));
    auto out = make_node({idx.size(), d}, {table});
    const double* td = table->data();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(td + idx[i] * d, td + (idx[i] + 1) * d, out->val.begin() + i * d);
    auto* o = out.get();
    out->backprop = [o, table, idx, d] {
        if (!table->requires_grad) return;
        table->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double* dst = table->grad.data() + idx[i] * d;
            const double* src = o->grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    };
    return out;
}

VarPtr slice_cols(const VarPtr& a, std::size_t c0, std::size_t w) {
    check_matrix(a, "slice_cols");
    const std::size_t m = a->rows(), n = a->cols();
    if (c0 + w > n) throw ShapeError("slice_cols: out of range");
    auto out = make_node({m, w}, {a});
    const double* ad = a->data();
    for (std::size_t i = 0; i < m; ++i)
        std::copy(ad + i * n + c0, ad + i * n + c0 + w, out->val.begin() + i * w);
    auto* o = out.get();
    out->backprop = [o, a, c0, w, m, n] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) a->grad[i * n + c0 + j] += o->grad[i * w + j];
    };
    return out;
}

VarPtr slice_rows(const VarPtr& a, std::size_t r0, std::size_t h) {
    check_matrix(a, "slice_rows");
    const std::size_t m = a->rows(), n = a->cols();
    if (r0 + h > m) throw ShapeError("slice_rows: out of range");
    auto out = make_node({h, n}, {a});
    const double* ad = a->data();
    std::copy(ad + r0 * n, ad + (r0 + h) * n, out->val.begin());
    auto* o = out.get();
    out->backprop = [o, a, r0, h, n] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < h * n; ++i) a->grad[r0 * n + i] += o->grad[i];
    };
    return out;
}

VarPtr concat_cols(const std::vector<VarPtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty");
    const std::size_t m = parts[0]->rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p->rows() != m) throw ShapeError("concat_cols: row mismatch");
        n += p->cols();
    }
    auto out = make_node({m, n}, parts);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p->cols();
        const double* pd = p->data();
        for (std::size_t i = 0; i < m; ++i)
            std::copy(pd + i * w, pd + (i + 1) * w, out->val.begin() + i * n + off);
        off += w;
    }
    auto* o = out.get();
    out->backprop = [o, parts, m, n] {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t w = p->cols();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        p->grad[i * w + j] += o->grad[i * n + off + j];
            }
            off += w;
        }
    };
    return out;
}

VarPtr concat_rows(const std::vector<VarPtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty");
    const std::size_t n = parts[0]->cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p->cols() != n) throw ShapeError("concat_rows: col mismatch");
        m += p->rows();
    }
    auto out = make_node({m, n}, parts);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t sz = p->numel();
        std::copy(p->data(), p->data() + sz, out->val.begin() + off);
        off += sz;
    }
    auto* o = out.get();
    out->backprop = [o, parts] {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t sz = p->numel();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < sz; ++i) p->grad[i] += o->grad[off + i];
            }
            off += sz;
        }
    };
    return out;
}

VarPtr nll_rows(const VarPtr& probs, const std::vector<std::size_t>& targets) {
    check_matrix(probs, "nll_rows");
    const std::size_t m = probs->rows(), n = probs->cols();
    if (targets.size() != m) throw ShapeError("nll_rows: target count mismatch");
    if (m == 0) throw std::runtime_error("nll_rows: no supervised positions");
    for (auto t : targets)
        if (t >= n) throw std::out_of_range("nll_rows: target out of range");
    auto out = make_node({1}, {probs});
    const double* pd = probs->data();
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += -std::log(pd[i * n + targets[i]]);
    out->val[0] = s / double(m);
    auto* o = out.get();
    out->backprop = [o, probs, targets, m, n] {
        if (!probs->requires_grad) return;
        probs->ensure_grad();
        const double* pd = probs->data();
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t t = targets[i];
            probs->grad[i * n + t] += o->grad[0] * (-1.0 / (double(m) * pd[i * n + t]));
        }
    };
    return out;
}

void backward(const VarPtr& loss) {
    if (loss->numel() != 1)
        throw std::runtime_error("backward: loss must be scalar, got " + shape_str(loss->shape));
    // Reverse topological order via iterative DFS.
    std::vector<Var*> order;
    std::unordered_set<Var*> seen;
    std::vector<std::pair<Var*, std::size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Var* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop && !(*it)->grad.empty()) (*it)->backprop();
}

double grad_check(const std::function<VarPtr(const VarPtr&)>& f, Tensor& x, double eps) {
    auto lx = leaf(x, true);
    auto loss = f(lx);
    backward(loss);
    std::vector<double> analytic(x.numel(), 0.0);
    if (!lx->grad.empty()) analytic = lx->grad;

    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = x.data[i];
        x.data[i] = orig + eps;
        const double fp = f(leaf(x, false))->data()[0];
        x.data[i] = orig - eps;
        const double fm = f(leaf(x, false))->data()[0];
        x.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace sanmove::autodiff
