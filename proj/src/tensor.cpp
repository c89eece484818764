#include "qstar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace qstar {

namespace {

thread_local uint64_t g_op_counter = 0;

std::vector<int64_t> strides_of(const Shape& shape) {
    std::vector<int64_t> s(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        s[i] = acc;
        acc *= shape[i];
    }
    return s;
}

// strides of `shape` viewed through broadcast target `out`; broadcast axes
// get stride 0, missing leading axes likewise
std::vector<int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
    auto s = strides_of(shape);
    std::vector<int64_t> r(out.size(), 0);
    int off = static_cast<int>(out.size() - shape.size());
    for (size_t i = 0; i < shape.size(); ++i) {
        r[off + i] = (shape[i] == 1 && out[off + i] != 1) ? 0 : s[i];
    }
    return r;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
    size_t ra = a.size(), rb = b.size();
    size_t r = std::max(ra, rb);
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(what) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcast-compatible");
        }
        out[i] = std::max(da, db);
    }
    return out;
}

void check_axis(const Shape& shape, int axis, const char* what) {
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw ShapeError(std::string(what) + ": axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(shape));
    }
}

// outer/axis/inner decomposition for axis-wise ops
struct AxisView {
    int64_t outer, len, inner;
};

AxisView axis_view(const Shape& shape, int axis) {
    AxisView v{1, shape[axis], 1};
    for (int i = 0; i < axis; ++i) v.outer *= shape[i];
    for (size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

bool any_requires_grad(const std::vector<Tensor>& parents) {
    for (const auto& p : parents) {
        if (p.requires_grad()) return true;
    }
    return false;
}

}  // namespace

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

uint64_t op_counter() { return g_op_counter; }

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(Node&)> backprop) {
    if (numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("op result shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = any_requires_grad(parents);
    if (t.node_->requires_grad) {
        t.node_->parents = std::move(parents);
        t.node_->backprop = std::move(backprop);
    }
    ++g_op_counter;
    return t;
}

// ---- Tensor basics ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(shape, std::vector<double>(numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    return from_data(shape, std::vector<double>(numel(shape), value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
    std::vector<double> d(numel(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return from_data(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::gaussian(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> d(numel(shape));
    for (auto& v : d) v = stddev * rng.gaussian();
    return from_data(std::move(shape), std::move(d), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->data.size()); }
int64_t Tensor::dim(int axis) const { return node_->shape[axis]; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
const std::vector<double>& Tensor::data() const { return node_->data; }
std::vector<double>& Tensor::mutable_data() { return node_->data; }
const std::vector<double>& Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
}

// ---- elementwise with broadcasting ----

namespace {

template <class FwdFn, class BwdFn>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* name, FwdFn fwd, BwdFn bwd) {
    Shape out = broadcast_shape(a.shape(), b.shape(), name);
    int64_t n = numel(out);
    auto sa = broadcast_strides(a.shape(), out);
    auto sb = broadcast_strides(b.shape(), out);
    auto so = strides_of(out);
    std::vector<double> data(n);
    const auto& da = a.data();
    const auto& db = b.data();
    std::vector<int64_t> idx(out.size(), 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        data[i] = fwd(da[ia], db[ib]);
        for (int ax = static_cast<int>(out.size()) - 1; ax >= 0; --ax) {
            ++idx[ax];
            ia += sa[ax];
            ib += sb[ax];
            if (idx[ax] < out[ax]) break;
            idx[ax] = 0;
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
        }
    }
    Tensor ta = a, tb = b;
    Shape oshape = out;
    return make_op(std::move(out), std::move(data), {a, b},
                   [ta, tb, sa, sb, oshape, bwd](Node& node) {
                       const auto& g = node.grad;
                       std::vector<double>* ga =
                           ta.requires_grad() ? &ta.node()->grad_buffer() : nullptr;
                       std::vector<double>* gb =
                           tb.requires_grad() ? &tb.node()->grad_buffer() : nullptr;
                       const auto& da = ta.data();
                       const auto& db = tb.data();
                       std::vector<int64_t> idx(oshape.size(), 0);
                       int64_t ia = 0, ib = 0;
                       int64_t n = static_cast<int64_t>(g.size());
                       for (int64_t i = 0; i < n; ++i) {
                           double dga, dgb;
                           bwd(g[i], da[ia], db[ib], dga, dgb);
                           if (ga) (*ga)[ia] += dga;
                           if (gb) (*gb)[ib] += dgb;
                           for (int ax = static_cast<int>(oshape.size()) - 1; ax >= 0; --ax) {
                               ++idx[ax];
                               ia += sa[ax];
                               ib += sb[ax];
                               if (idx[ax] < oshape[ax]) break;
                               idx[ax] = 0;
                               ia -= sa[ax] * oshape[ax];
                               ib -= sb[ax] * oshape[ax];
                           }
                       }
                   });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double, double& ga, double& gb) {
            ga = g;
            gb = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double, double& ga, double& gb) {
            ga = g;
            gb = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double x, double y, double& ga, double& gb) {
            ga = g * y;
            gb = g * x;
        });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> d(x.data());
    for (auto& v : d) v *= c;
    Tensor tx = x;
    return make_op(x.shape(), std::move(d), {x}, [tx, c](Node& node) {
        auto& g = tx.node()->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += c * node.grad[i];
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> d(x.data());
    for (auto& v : d) v = v > 0.0 ? v : 0.0;  // relu'(0) := 0
    Tensor tx = x;
    return make_op(x.shape(), std::move(d), {x}, [tx](Node& node) {
        auto& g = tx.node()->grad_buffer();
        const auto& in = tx.data();
        for (size_t i = 0; i < g.size(); ++i) g[i] += in[i] > 0.0 ? node.grad[i] : 0.0;
    });
}

Tensor tanh_op(const Tensor& x) {
    std::vector<double> d(x.data());
    for (auto& v : d) v = std::tanh(v);
    Tensor tx = x;
    return make_op(x.shape(), std::move(d), {x}, [tx](Node& node) {
        auto& g = tx.node()->grad_buffer();
        const auto& y = node.data;
        for (size_t i = 0; i < g.size(); ++i) g[i] += (1.0 - y[i] * y[i]) * node.grad[i];
    });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    int64_t m = as[as.size() - 2], k = as[as.size() - 1];
    int64_t kb = bs[bs.size() - 2], n = bs[bs.size() - 1];
    if (k != kb) {
        throw ShapeError("matmul: inner extents disagree between " + shape_str(as) + " and " +
                         shape_str(bs));
    }
    Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
    Shape batch = broadcast_shape(abatch, bbatch, "matmul");
    int64_t nbatch = numel(batch);

    // per-batch base offsets into a and b
    auto sa = broadcast_strides(abatch, batch);
    auto sb = broadcast_strides(bbatch, batch);
    std::vector<int64_t> abase(nbatch, 0), bbase(nbatch, 0);
    {
        std::vector<int64_t> idx(batch.size(), 0);
        int64_t ia = 0, ib = 0;
        for (int64_t i = 0; i < nbatch; ++i) {
            abase[i] = ia * m * k;
            bbase[i] = ib * k * n;
            for (int ax = static_cast<int>(batch.size()) - 1; ax >= 0; --ax) {
                ++idx[ax];
                ia += sa[ax];
                ib += sb[ax];
                if (idx[ax] < batch[ax]) break;
                idx[ax] = 0;
                ia -= sa[ax] * batch[ax];
                ib -= sb[ax] * batch[ax];
            }
        }
    }

    Shape out = batch;
    out.push_back(m);
    out.push_back(n);
    std::vector<double> data(nbatch * m * n, 0.0);
    const auto& da = a.data();
    const auto& db = b.data();
    for (int64_t bi = 0; bi < nbatch; ++bi) {
        const double* pa = da.data() + abase[bi];
        const double* pb = db.data() + bbase[bi];
        double* pc = data.data() + bi * m * n;
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t kk = 0; kk < k; ++kk) {
                double av = pa[i * k + kk];
                if (av == 0.0) continue;
                const double* brow = pb + kk * n;
                double* crow = pc + i * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    Tensor ta = a, tb = b;
    return make_op(std::move(out), std::move(data), {a, b},
                   [ta, tb, abase, bbase, m, k, n, nbatch](Node& node) {
                       const auto& g = node.grad;
                       const auto& da = ta.data();
                       const auto& db = tb.data();
                       std::vector<double>* ga =
                           ta.requires_grad() ? &ta.node()->grad_buffer() : nullptr;
                       std::vector<double>* gb =
                           tb.requires_grad() ? &tb.node()->grad_buffer() : nullptr;
                       for (int64_t bi = 0; bi < nbatch; ++bi) {
                           const double* pg = g.data() + bi * m * n;
                           const double* pa = da.data() + abase[bi];
                           const double* pb = db.data() + bbase[bi];
                           if (ga) {
                               double* pga = ga->data() + abase[bi];
                               for (int64_t i = 0; i < m; ++i) {
                                   for (int64_t kk = 0; kk < k; ++kk) {
                                       double s = 0.0;
                                       const double* grow = pg + i * n;
                                       const double* brow = pb + kk * n;
                                       for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                                       pga[i * k + kk] += s;
                                   }
                               }
                           }
                           if (gb) {
                               double* pgb = gb->data() + bbase[bi];
                               for (int64_t kk = 0; kk < k; ++kk) {
                                   for (int64_t i = 0; i < m; ++i) {
                                       double av = pa[i * k + kk];
                                       if (av == 0.0) continue;
                                       const double* grow = pg + i * n;
                                       double* brow = pgb + kk * n;
                                       for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                                   }
                               }
                           }
                       }
                   });
}

// ---- softmax / reductions ----

Tensor softmax(const Tensor& x, int axis) {
    check_axis(x.shape(), axis, "softmax");
    auto v = axis_view(x.shape(), axis);
    std::vector<double> d(x.data());
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t in = 0; in < v.inner; ++in) {
            double* base = d.data() + o * v.len * v.inner + in;
            double mx = base[0];
            for (int64_t i = 1; i < v.len; ++i) mx = std::max(mx, base[i * v.inner]);
            double sum = 0.0;
            for (int64_t i = 0; i < v.len; ++i) {
                double e = std::exp(base[i * v.inner] - mx);
                base[i * v.inner] = e;
                sum += e;
            }
            for (int64_t i = 0; i < v.len; ++i) base[i * v.inner] /= sum;
        }
    }
    Tensor tx = x;
    return make_op(x.shape(), std::move(d), {x}, [tx, v](Node& node) {
        auto& gx = tx.node()->grad_buffer();
        const auto& y = node.data;
        const auto& g = node.grad;
        for (int64_t o = 0; o < v.outer; ++o) {
            for (int64_t in = 0; in < v.inner; ++in) {
                int64_t base = o * v.len * v.inner + in;
                double dot = 0.0;
                for (int64_t i = 0; i < v.len; ++i) {
                    int64_t p = base + i * v.inner;
                    dot += g[p] * y[p];
                }
                for (int64_t i = 0; i < v.len; ++i) {
                    int64_t p = base + i * v.inner;
                    gx[p] += (g[p] - dot) * y[p];
                }
            }
        }
    });
}

namespace {

Tensor reduce_axis(const Tensor& x, int axis, bool mean, const char* name) {
    check_axis(x.shape(), axis, name);
    auto v = axis_view(x.shape(), axis);
    Shape out;
    for (int i = 0; i < x.rank(); ++i) {
        if (i != axis) out.push_back(x.dim(i));
    }
    if (out.empty()) out.push_back(1);
    std::vector<double> d(v.outer * v.inner, 0.0);
    const auto& dx = x.data();
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t i = 0; i < v.len; ++i) {
            const double* src = dx.data() + (o * v.len + i) * v.inner;
            double* dst = d.data() + o * v.inner;
            for (int64_t in = 0; in < v.inner; ++in) dst[in] += src[in];
        }
    }
    double w = mean ? 1.0 / static_cast<double>(v.len) : 1.0;
    if (mean) {
        for (auto& e : d) e *= w;
    }
    Tensor tx = x;
    return make_op(std::move(out), std::move(d), {x}, [tx, v, w](Node& node) {
        auto& gx = tx.node()->grad_buffer();
        const auto& g = node.grad;
        for (int64_t o = 0; o < v.outer; ++o) {
            for (int64_t i = 0; i < v.len; ++i) {
                double* dst = gx.data() + (o * v.len + i) * v.inner;
                const double* src = g.data() + o * v.inner;
                for (int64_t in = 0; in < v.inner; ++in) dst[in] += w * src[in];
            }
        }
    });
}

}  // namespace

Tensor reduce_mean(const Tensor& x, int axis) { return reduce_axis(x, axis, true, "reduce_mean"); }
Tensor reduce_sum(const Tensor& x, int axis) { return reduce_axis(x, axis, false, "reduce_sum"); }

Tensor reduce_sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor tx = x;
    return make_op({1}, {s}, {x}, [tx](Node& node) {
        auto& gx = tx.node()->grad_buffer();
        for (auto& g : gx) g += node.grad[0];
    });
}

// ---- layout ops ----

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const Shape& s0 = parts[0].shape();
    check_axis(s0, axis, "concat");
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<int>(s0.size())) {
            throw ShapeError("concat: rank mismatch between " + shape_str(s0) + " and " +
                             shape_str(p.shape()));
        }
        for (int i = 0; i < p.rank(); ++i) {
            if (i != axis && p.dim(i) != s0[i]) {
                throw ShapeError("concat: extent mismatch on axis " + std::to_string(i) +
                                 " between " + shape_str(s0) + " and " + shape_str(p.shape()));
            }
        }
        total += p.dim(axis);
    }
    Shape out = s0;
    out[axis] = total;
    auto vout = axis_view(out, axis);
    std::vector<double> d(numel(out));
    std::vector<int64_t> offsets(parts.size());
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        offsets[pi] = off;
        auto v = axis_view(parts[pi].shape(), axis);
        const auto& src = parts[pi].data();
        for (int64_t o = 0; o < v.outer; ++o) {
            std::copy(src.begin() + o * v.len * v.inner, src.begin() + (o + 1) * v.len * v.inner,
                      d.begin() + (o * vout.len + off) * vout.inner);
        }
        off += parts[pi].dim(axis);
    }
    std::vector<Tensor> ps = parts;
    return make_op(std::move(out), std::move(d), parts, [ps, offsets, vout, axis](Node& node) {
        const auto& g = node.grad;
        for (size_t pi = 0; pi < ps.size(); ++pi) {
            if (!ps[pi].requires_grad()) continue;
            auto& gx = ps[pi].node()->grad_buffer();
            auto v = axis_view(ps[pi].shape(), axis);
            for (int64_t o = 0; o < v.outer; ++o) {
                const double* src = g.data() + (o * vout.len + offsets[pi]) * vout.inner;
                double* dst = gx.data() + o * v.len * v.inner;
                for (int64_t i = 0; i < v.len * v.inner; ++i) dst[i] += src[i];
            }
        }
    });
}

Tensor stack0(const std::vector<Tensor>& parts) {
    std::vector<Tensor> expanded;
    expanded.reserve(parts.size());
    for (const auto& p : parts) {
        Shape s = p.shape();
        s.insert(s.begin(), 1);
        expanded.push_back(reshape(p, s));
    }
    return concat(expanded, 0);
}

Tensor transpose(const Tensor& x, const std::vector<int>& axes) {
    if (static_cast<int>(axes.size()) != x.rank()) {
        throw ShapeError("transpose: permutation size " + std::to_string(axes.size()) +
                         " does not match rank of " + shape_str(x.shape()));
    }
    std::vector<bool> seen(axes.size(), false);
    for (int a : axes) {
        if (a < 0 || a >= x.rank() || seen[a]) throw ShapeError("transpose: invalid permutation");
        seen[a] = true;
    }
    Shape out(x.rank());
    for (int i = 0; i < x.rank(); ++i) out[i] = x.dim(axes[i]);
    auto sin = strides_of(x.shape());
    std::vector<int64_t> smap(x.rank());
    for (int i = 0; i < x.rank(); ++i) smap[i] = sin[axes[i]];

    int64_t n = x.size();
    std::vector<double> d(n);
    const auto& dx = x.data();
    std::vector<int64_t> idx(out.size(), 0);
    int64_t src = 0;
    for (int64_t i = 0; i < n; ++i) {
        d[i] = dx[src];
        for (int ax = static_cast<int>(out.size()) - 1; ax >= 0; --ax) {
            ++idx[ax];
            src += smap[ax];
            if (idx[ax] < out[ax]) break;
            idx[ax] = 0;
            src -= smap[ax] * out[ax];
        }
    }
    Tensor tx = x;
    Shape oshape = out;
    return make_op(std::move(out), std::move(d), {x}, [tx, smap, oshape](Node& node) {
        auto& gx = tx.node()->grad_buffer();
        const auto& g = node.grad;
        std::vector<int64_t> idx(oshape.size(), 0);
        int64_t src = 0;
        for (int64_t i = 0; i < static_cast<int64_t>(g.size()); ++i) {
            gx[src] += g[i];
            for (int ax = static_cast<int>(oshape.size()) - 1; ax >= 0; --ax) {
                ++idx[ax];
                src += smap[ax];
                if (idx[ax] < oshape[ax]) break;
                idx[ax] = 0;
                src -= smap[ax] * oshape[ax];
            }
        }
    });
}

Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose2d: rank must be 2, got " + shape_str(x.shape()));
    return transpose(x, {1, 0});
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: element count mismatch between " + shape_str(x.shape()) +
                         " and " + shape_str(shape));
    }
    Tensor tx = x;
    return make_op(std::move(shape), std::vector<double>(x.data()), {x}, [tx](Node& node) {
        auto& gx = tx.node()->grad_buffer();
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += node.grad[i];
    });
}

Tensor take(const Tensor& x, int axis, int64_t index) {
    check_axis(x.shape(), axis, "take");
    if (index < 0 || index >= x.dim(axis)) {
        throw ShapeError("take: index " + std::to_string(index) + " out of range for axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    auto v = axis_view(x.shape(), axis);
    Shape out;
    for (int i = 0; i < x.rank(); ++i) {
        if (i != axis) out.push_back(x.dim(i));
    }
    if (out.empty()) out.push_back(1);
    std::vector<double> d(v.outer * v.inner);
    const auto& dx = x.data();
    for (int64_t o = 0; o < v.outer; ++o) {
        const double* src = dx.data() + (o * v.len + index) * v.inner;
        std::copy(src, src + v.inner, d.begin() + o * v.inner);
    }
    Tensor tx = x;
    return make_op(std::move(out), std::move(d), {x}, [tx, v, index](Node& node) {
        auto& gx = tx.node()->grad_buffer();
        const auto& g = node.grad;
        for (int64_t o = 0; o < v.outer; ++o) {
            double* dst = gx.data() + (o * v.len + index) * v.inner;
            const double* src = g.data() + o * v.inner;
            for (int64_t in = 0; in < v.inner; ++in) dst[in] += src[in];
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add(y, b);
    return y;
}

// ---- conv1d / batchnorm / layernorm ----

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t padding) {
    if (x.rank() != 2 || w.rank() != 3) {
        throw ShapeError("conv1d: expected x [C_in, L] and w [C_out, C_in, k], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    int64_t cin = x.dim(0), len = x.dim(1);
    int64_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin) {
        throw ShapeError("conv1d: channel mismatch between x " + shape_str(x.shape()) + " and w " +
                         shape_str(w.shape()));
    }
    if (k % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
    if (k > len + 2 * padding) throw ShapeError("conv1d: kernel larger than padded length");
    std::vector<double> d(cout * len, 0.0);
    const auto& dx = x.data();
    const auto& dw = w.data();
    for (int64_t co = 0; co < cout; ++co) {
        double bias = b.defined() ? b.data()[co] : 0.0;
        for (int64_t l = 0; l < len; ++l) {
            double s = bias;
            for (int64_t ci = 0; ci < cin; ++ci) {
                for (int64_t j = 0; j < k; ++j) {
                    int64_t src = l + j - padding;
                    if (src < 0 || src >= len) continue;
                    s += dw[(co * cin + ci) * k + j] * dx[ci * len + src];
                }
            }
            d[co * len + l] = s;
        }
    }
    Tensor tx = x, tw = w, tb = b;
    std::vector<Tensor> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    return make_op({cout, len}, std::move(d), std::move(parents),
                   [tx, tw, tb, cin, cout, len, k, padding](Node& node) {
                       const auto& g = node.grad;
                       const auto& dx = tx.data();
                       const auto& dw = tw.data();
                       std::vector<double>* gx =
                           tx.requires_grad() ? &tx.node()->grad_buffer() : nullptr;
                       std::vector<double>* gw =
                           tw.requires_grad() ? &tw.node()->grad_buffer() : nullptr;
                       std::vector<double>* gb = (tb.defined() && tb.requires_grad())
                                                     ? &tb.node()->grad_buffer()
                                                     : nullptr;
                       for (int64_t co = 0; co < cout; ++co) {
                           for (int64_t l = 0; l < len; ++l) {
                               double go = g[co * len + l];
                               if (gb) (*gb)[co] += go;
                               for (int64_t ci = 0; ci < cin; ++ci) {
                                   for (int64_t j = 0; j < k; ++j) {
                                       int64_t src = l + j - padding;
                                       if (src < 0 || src >= len) continue;
                                       if (gw)
                                           (*gw)[(co * cin + ci) * k + j] +=
                                               go * dx[ci * len + src];
                                       if (gx)
                                           (*gx)[ci * len + src] +=
                                               go * dw[(co * cin + ci) * k + j];
                                   }
                               }
                           }
                       }
                   });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 bool training, bool update_running) {
    if (x.rank() != 2) throw ShapeError("batchnorm: expected [C, L], got " + shape_str(x.shape()));
    int64_t c = x.dim(0), l = x.dim(1);
    if (static_cast<int64_t>(state.running_mean.size()) != c) {
        throw ShapeError("batchnorm: state size does not match channel count");
    }
    const auto& dx = x.data();
    std::vector<double> mean(c), var(c);
    if (training) {
        for (int64_t ci = 0; ci < c; ++ci) {
            double m = 0.0;
            for (int64_t i = 0; i < l; ++i) m += dx[ci * l + i];
            m /= static_cast<double>(l);
            double v = 0.0;
            for (int64_t i = 0; i < l; ++i) {
                double d = dx[ci * l + i] - m;
                v += d * d;
            }
            v /= static_cast<double>(l);
            mean[ci] = m;
            var[ci] = v;
        }
        if (update_running) {
            for (int64_t ci = 0; ci < c; ++ci) {
                state.running_mean[ci] =
                    (1.0 - state.momentum) * state.running_mean[ci] + state.momentum * mean[ci];
                state.running_var[ci] =
                    (1.0 - state.momentum) * state.running_var[ci] + state.momentum * var[ci];
            }
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }
    double eps = state.eps;
    std::vector<double> xhat(c * l), d(c * l);
    const auto& dg = gamma.data();
    const auto& db = beta.data();
    for (int64_t ci = 0; ci < c; ++ci) {
        double inv = 1.0 / std::sqrt(var[ci] + eps);
        for (int64_t i = 0; i < l; ++i) {
            double h = (dx[ci * l + i] - mean[ci]) * inv;
            xhat[ci * l + i] = h;
            d[ci * l + i] = dg[ci] * h + db[ci];
        }
    }
    Tensor tx = x, tg = gamma, tb = beta;
    return make_op({c, l}, std::move(d), {x, gamma, beta},
                   [tx, tg, tb, xhat, var, eps, c, l, training](Node& node) {
                       const auto& g = node.grad;
                       const auto& dg = tg.data();
                       std::vector<double>* gx =
                           tx.requires_grad() ? &tx.node()->grad_buffer() : nullptr;
                       std::vector<double>* gg =
                           tg.requires_grad() ? &tg.node()->grad_buffer() : nullptr;
                       std::vector<double>* gb =
                           tb.requires_grad() ? &tb.node()->grad_buffer() : nullptr;
                       for (int64_t ci = 0; ci < c; ++ci) {
                           double inv = 1.0 / std::sqrt(var[ci] + eps);
                           double sum_g = 0.0, sum_gx = 0.0;
                           for (int64_t i = 0; i < l; ++i) {
                               sum_g += g[ci * l + i];
                               sum_gx += g[ci * l + i] * xhat[ci * l + i];
                           }
                           if (gg) (*gg)[ci] += sum_gx;
                           if (gb) (*gb)[ci] += sum_g;
                           if (!gx) continue;
                           if (training) {
                               double n = static_cast<double>(l);
                               for (int64_t i = 0; i < l; ++i) {
                                   double go = g[ci * l + i] * dg[ci];
                                   (*gx)[ci * l + i] +=
                                       inv * (go - (dg[ci] / n) * sum_g -
                                              xhat[ci * l + i] * (dg[ci] / n) * sum_gx);
                               }
                           } else {
                               for (int64_t i = 0; i < l; ++i) {
                                   (*gx)[ci * l + i] += g[ci * l + i] * dg[ci] * inv;
                               }
                           }
                       }
                   });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw ShapeError("layernorm: rank must be >= 1");
    int64_t d = x.dim(x.rank() - 1);
    if (gamma.size() != d || beta.size() != d) {
        throw ShapeError("layernorm: gamma/beta size does not match last axis of " +
                         shape_str(x.shape()));
    }
    int64_t rows = x.size() / d;
    const auto& dx = x.data();
    const auto& dg = gamma.data();
    const auto& db = beta.data();
    std::vector<double> out(x.size()), xhat(x.size()), inv_std(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const double* px = dx.data() + r * d;
        double m = 0.0;
        for (int64_t i = 0; i < d; ++i) m += px[i];
        m /= static_cast<double>(d);
        double v = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double t = px[i] - m;
            v += t * t;
        }
        v /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(v + eps);
        inv_std[r] = inv;
        for (int64_t i = 0; i < d; ++i) {
            double h = (px[i] - m) * inv;
            xhat[r * d + i] = h;
            out[r * d + i] = dg[i] * h + db[i];
        }
    }
    Tensor tx = x, tg = gamma, tb = beta;
    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [tx, tg, tb, xhat, inv_std, rows, d](Node& node) {
                       const auto& g = node.grad;
                       const auto& dg = tg.data();
                       std::vector<double>* gx =
                           tx.requires_grad() ? &tx.node()->grad_buffer() : nullptr;
                       std::vector<double>* gg =
                           tg.requires_grad() ? &tg.node()->grad_buffer() : nullptr;
                       std::vector<double>* gb =
                           tb.requires_grad() ? &tb.node()->grad_buffer() : nullptr;
                       for (int64_t r = 0; r < rows; ++r) {
                           const double* pg = g.data() + r * d;
                           const double* ph = xhat.data() + r * d;
                           double sum_go = 0.0, sum_goh = 0.0;
                           for (int64_t i = 0; i < d; ++i) {
                               double go = pg[i] * dg[i];
                               sum_go += go;
                               sum_goh += go * ph[i];
                               if (gg) (*gg)[i] += pg[i] * ph[i];
                               if (gb) (*gb)[i] += pg[i];
                           }
                           if (!gx) continue;
                           double n = static_cast<double>(d);
                           for (int64_t i = 0; i < d; ++i) {
                               double go = pg[i] * dg[i];
                               (*gx)[r * d + i] +=
                                   inv_std[r] * (go - sum_go / n - ph[i] * sum_goh / n);
                           }
                       }
                   });
}

Tensor cross_entropy_with_logits(const Tensor& logits, int64_t label) {
    if (logits.rank() != 1) {
        throw ShapeError("cross_entropy: logits must be rank 1, got " + shape_str(logits.shape()));
    }
    int64_t v = logits.size();
    if (label < 0 || label >= v) {
        throw ConfigError("cross_entropy: label " + std::to_string(label) +
                          " out of range for vocabulary " + std::to_string(v));
    }
    const auto& d = logits.data();
    double mx = d[0];
    for (double e : d) mx = std::max(mx, e);
    double lse = 0.0;
    for (double e : d) lse += std::exp(e - mx);
    lse = mx + std::log(lse);
    double loss = lse - d[label];
    Tensor tl = logits;
    return make_op({1}, {loss}, {logits}, [tl, label, lse](Node& node) {
        auto& gx = tl.node()->grad_buffer();
        const auto& d = tl.data();
        double g = node.grad[0];
        for (size_t i = 0; i < gx.size(); ++i) {
            double p = std::exp(d[i] - lse);
            gx[i] += g * (p - (static_cast<int64_t>(i) == label ? 1.0 : 0.0));
        }
    });
}

// ---- backward ----

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    // iterative topological sort
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stk;
    stk.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
    while (!stk.empty()) {
        auto& [n, i] = stk.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i].node();
            ++i;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stk.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stk.pop_back();
        }
    }
    loss.node()->grad_buffer()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

// ---- gradient checking ----

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

GradCheckReport grad_check(const std::string& op_name, const std::function<Tensor()>& closure,
                           const std::vector<Tensor>& leafs, double tolerance,
                           GradCheckOptions opts) {
    GradCheckReport report;
    report.op_name = op_name;
    report.tolerance = tolerance;

    for (auto leaf : leafs) {
        leaf.node()->grad.clear();
    }
    Tensor loss = closure();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leafs.size());
    for (const auto& leaf : leafs) {
        std::vector<double> g = leaf.node()->grad;
        if (g.empty()) g.assign(leaf.size(), 0.0);
        if (!all_finite(g)) {
            report.max_rel_error = std::numeric_limits<double>::infinity();
            report.passed = false;
            return report;
        }
        analytic.push_back(std::move(g));
    }

    Rng rng(mix_seed(opts.sample_seed, 0x67726164));
    double h = opts.step;
    double max_err = 0.0;
    for (size_t li = 0; li < leafs.size(); ++li) {
        Tensor leaf = leafs[li];
        auto& d = leaf.mutable_data();
        int64_t n = static_cast<int64_t>(d.size());
        std::vector<int64_t> coords;
        if (opts.max_coords_per_leaf > 0 && n > opts.max_coords_per_leaf) {
            for (int64_t i = 0; i < opts.max_coords_per_leaf; ++i) {
                coords.push_back(static_cast<int64_t>(rng.next_below(n)));
            }
        } else {
            coords.resize(n);
            for (int64_t i = 0; i < n; ++i) coords[i] = i;
        }
        for (int64_t i : coords) {
            double orig = d[i];
            d[i] = orig + h;
            double fp = closure().item();
            d[i] = orig - h;
            double fm = closure().item();
            d[i] = orig;
            double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[li][i];
            if (!std::isfinite(numeric)) {
                report.max_rel_error = std::numeric_limits<double>::infinity();
                report.passed = false;
                return report;
            }
            double diff = std::fabs(a - numeric);
            // below this the difference is indistinguishable from the
            // cancellation noise of the central difference itself (exactly
            // zero-gradient directions would otherwise divide noise by the
            // denominator floor)
            if (diff < 1e-8) continue;
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            max_err = std::max(max_err, diff / denom);
        }
    }
    report.max_rel_error = max_err;
    report.passed = max_err <= tolerance;
    return report;
}

}  // namespace qstar
