#include "vqsad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "vqsad/errors.hpp"

namespace vqsad::ad {

namespace {

constexpr double kCosineEps = 1e-12;

thread_local bool g_grad_enabled = true;
thread_local std::int64_t g_seq = 0;

std::shared_ptr<TensorNode> make_node(Array value) {
    auto n = std::make_shared<TensorNode>();
    n->value = std::move(value);
    n->seq = ++g_seq;
    return n;
}

bool any_requires_grad(const std::vector<Tensor>& parents) {
    for (const auto& p : parents)
        if (p.requires_grad()) return true;
    return false;
}

// Attach parents + backward closure only when gradients are live.
Tensor finish(std::shared_ptr<TensorNode> node, const std::vector<Tensor>& parents,
              std::function<void(TensorNode&)> backprop) {
    if (g_grad_enabled && any_requires_grad(parents)) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

enum class Broadcast { same, row, col, scalar };

Broadcast broadcast_mode(const Array& a, const Array& b) {
    if (a.same_shape(b)) return Broadcast::same;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
    throw ShapeError("incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

double broadcast_at(const Array& b, Broadcast mode, long r, long c) {
    switch (mode) {
        case Broadcast::same: return b.at(r, c);
        case Broadcast::row: return b.at(0, c);
        case Broadcast::col: return b.at(r, 0);
        default: return b[0];
    }
}

void broadcast_accum(Array& db, Broadcast mode, long r, long c, double g) {
    switch (mode) {
        case Broadcast::same: db.at(r, c) += g; break;
        case Broadcast::row: db.at(0, c) += g; break;
        case Broadcast::col: db.at(r, 0) += g; break;
        default: db[0] += g; break;
    }
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, DA da_of, DB db_of) {
    const Array& av = a.value();
    const Array& bv = b.value();
    Broadcast mode = broadcast_mode(av, bv);
    Array out(av.rows(), av.cols());
    for (long r = 0; r < av.rows(); ++r)
        for (long c = 0; c < av.cols(); ++c) out.at(r, c) = fwd(av.at(r, c), broadcast_at(bv, mode, r, c));
    auto node = make_node(std::move(out));
    return finish(node, {a, b}, [a, b, mode, da_of, db_of](TensorNode& self) {
        const Array& av = a.value();
        const Array& bv = b.value();
        bool need_a = a.requires_grad();
        bool need_b = b.requires_grad();
        Array* da = need_a ? &a.node()->ensure_grad() : nullptr;
        Array* db = need_b ? &b.node()->ensure_grad() : nullptr;
        for (long r = 0; r < av.rows(); ++r)
            for (long c = 0; c < av.cols(); ++c) {
                double g = self.grad.at(r, c);
                double x = av.at(r, c);
                double y = broadcast_at(bv, mode, r, c);
                if (need_a) da->at(r, c) += g * da_of(x, y);
                if (need_b) broadcast_accum(*db, mode, r, c, g * db_of(x, y));
            }
    });
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& a, Fwd fwd, Deriv deriv) {
    const Array& av = a.value();
    Array out(av.rows(), av.cols());
    for (long i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    auto node = make_node(std::move(out));
    return finish(node, {a}, [a, deriv](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        const Array& av = a.value();
        for (long i = 0; i < av.size(); ++i) da[i] += self.grad[i] * deriv(av[i], self.value[i]);
    });
}

}  // namespace

Array& TensorNode::ensure_grad() {
    if (!grad_alloc) {
        grad = Array::zeros(value.rows(), value.cols());
        grad_alloc = true;
    }
    return grad;
}

Tensor Tensor::constant(Array value) { return Tensor(make_node(std::move(value))); }

Tensor Tensor::leaf(Array value) {
    auto n = make_node(std::move(value));
    n->requires_grad = true;
    return Tensor(std::move(n));
}

const Array& Tensor::value() const {
    if (!node_) throw ContractError("value() on empty tensor");
    return node_->value;
}

const Array& Tensor::grad() const {
    if (!node_) throw ContractError("grad() on empty tensor");
    if (!node_->grad_alloc) node_->ensure_grad();
    return node_->grad;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
    if (!loss.defined() || !loss.value().is_scalar())
        throw DomainError("backward requires a scalar loss, got " +
                          (loss.defined() ? loss.value().shape_str() : std::string("<empty>")));
    // Collect the reachable subgraph; creation order is a topological order.
    std::vector<TensorNode*> nodes;
    std::unordered_set<TensorNode*> seen;
    std::vector<TensorNode*> stack{loss.node().get()};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        nodes.push_back(n);
        for (const auto& p : n->parents)
            if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(nodes.begin(), nodes.end(), [](const TensorNode* a, const TensorNode* b) { return a->seq > b->seq; });
    loss.node()->ensure_grad()[0] = 1.0;
    for (TensorNode* n : nodes)
        if (n->backprop && n->grad_alloc) n->backprop(*n);
}

// ---- arithmetic -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
    return unary_op(
        a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(
        a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// ---- matmul ------------------------------------------------------------------

namespace {

// C += A * B or C += A^T * B or C += A * B^T, row-major, ikj loop order.
void gemm_nn(const Array& a, const Array& b, Array& c) {
    long m = a.rows(), k = a.cols(), n = b.cols();
    for (long i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* crow = c.data() + i * n;
        for (long p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.data() + p * n;
            for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const Array& a, const Array& b, Array& c) {  // C += A * B^T
    long m = a.rows(), k = a.cols(), n = b.rows();
    for (long i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* crow = c.data() + i * n;
        for (long j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0.0;
            for (long p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

void gemm_tn(const Array& a, const Array& b, Array& c) {  // C += A^T * B
    long m = a.cols(), k = a.rows(), n = b.cols();
    for (long p = 0; p < k; ++p) {
        const double* arow = a.data() + p * m;
        const double* brow = b.data() + p * n;
        for (long i = 0; i < m; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c.data() + i * n;
            for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Array& av = a.value();
    const Array& bv = b.value();
    if (av.cols() != bv.rows())
        throw ShapeError("matmul shapes " + av.shape_str() + " x " + bv.shape_str());
    Array out(av.rows(), bv.cols());
    gemm_nn(av, bv, out);
    auto node = make_node(std::move(out));
    return finish(node, {a, b}, [a, b](TensorNode& self) {
        if (a.requires_grad()) gemm_nt(self.grad, b.value(), a.node()->ensure_grad());
        if (b.requires_grad()) gemm_tn(a.value(), self.grad, b.node()->ensure_grad());
    });
}

// ---- nonlinearities ----------------------------------------------------------

Tensor relu(const Tensor& a) {
    return unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
    return unary_op(
        a,
        [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor log(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor pow_const(const Tensor& a, double p) {
    return unary_op(
        a, [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor clamp_abs(const Tensor& a, double limit) {
    return unary_op(
        a, [limit](double x) { return x > limit ? limit : (x < -limit ? -limit : x); },
        [limit](double x, double) { return std::fabs(x) <= limit ? 1.0 : 0.0; });
}

Tensor softmax_rows(const Tensor& a) {
    const Array& av = a.value();
    Array out(av.rows(), av.cols());
    for (long r = 0; r < av.rows(); ++r) {
        double mx = -1e300;
        for (long c = 0; c < av.cols(); ++c) mx = std::max(mx, av.at(r, c));
        double z = 0.0;
        for (long c = 0; c < av.cols(); ++c) {
            double e = std::exp(av.at(r, c) - mx);
            out.at(r, c) = e;
            z += e;
        }
        for (long c = 0; c < av.cols(); ++c) out.at(r, c) /= z;
    }
    auto node = make_node(std::move(out));
    return finish(node, {a}, [a](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        const Array& y = self.value;
        for (long r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (long c = 0; c < y.cols(); ++c) dot += self.grad.at(r, c) * y.at(r, c);
            for (long c = 0; c < y.cols(); ++c) da.at(r, c) += y.at(r, c) * (self.grad.at(r, c) - dot);
        }
    });
}

Tensor log_softmax_rows(const Tensor& a) {
    const Array& av = a.value();
    Array out(av.rows(), av.cols());
    for (long r = 0; r < av.rows(); ++r) {
        double mx = -1e300;
        for (long c = 0; c < av.cols(); ++c) mx = std::max(mx, av.at(r, c));
        double z = 0.0;
        for (long c = 0; c < av.cols(); ++c) z += std::exp(av.at(r, c) - mx);
        double lz = mx + std::log(z);
        for (long c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c) - lz;
    }
    auto node = make_node(std::move(out));
    return finish(node, {a}, [a](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        const Array& y = self.value;
        for (long r = 0; r < y.rows(); ++r) {
            double gsum = 0.0;
            for (long c = 0; c < y.cols(); ++c) gsum += self.grad.at(r, c);
            for (long c = 0; c < y.cols(); ++c)
                da.at(r, c) += self.grad.at(r, c) - std::exp(y.at(r, c)) * gsum;
        }
    });
}

// ---- shape ops ---------------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    long rows = parts[0].value().rows();
    long cols = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != rows) throw ShapeError("concat_cols row mismatch");
        cols += p.value().cols();
    }
    Array out(rows, cols);
    long off = 0;
    for (const auto& p : parts) {
        const Array& pv = p.value();
        for (long r = 0; r < rows; ++r)
            for (long c = 0; c < pv.cols(); ++c) out.at(r, off + c) = pv.at(r, c);
        off += pv.cols();
    }
    auto node = make_node(std::move(out));
    return finish(node, parts, [parts](TensorNode& self) {
        long off = 0;
        for (const auto& p : parts) {
            long pc = p.value().cols();
            if (p.requires_grad()) {
                Array& dp = p.node()->ensure_grad();
                for (long r = 0; r < dp.rows(); ++r)
                    for (long c = 0; c < pc; ++c) dp.at(r, c) += self.grad.at(r, off + c);
            }
            off += pc;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    long cols = parts[0].value().cols();
    long rows = 0;
    for (const auto& p : parts) {
        if (p.value().cols() != cols) throw ShapeError("concat_rows col mismatch");
        rows += p.value().rows();
    }
    Array out(rows, cols);
    long off = 0;
    for (const auto& p : parts) {
        const Array& pv = p.value();
        for (long r = 0; r < pv.rows(); ++r)
            for (long c = 0; c < cols; ++c) out.at(off + r, c) = pv.at(r, c);
        off += pv.rows();
    }
    auto node = make_node(std::move(out));
    return finish(node, parts, [parts](TensorNode& self) {
        long off = 0;
        for (const auto& p : parts) {
            long pr = p.value().rows();
            if (p.requires_grad()) {
                Array& dp = p.node()->ensure_grad();
                for (long r = 0; r < pr; ++r)
                    for (long c = 0; c < dp.cols(); ++c) dp.at(r, c) += self.grad.at(off + r, c);
            }
            off += pr;
        }
    });
}

Tensor slice_cols(const Tensor& a, long c0, long c1) {
    const Array& av = a.value();
    if (c0 < 0 || c1 > av.cols() || c0 >= c1) throw ShapeError("slice_cols range");
    Array out(av.rows(), c1 - c0);
    for (long r = 0; r < av.rows(); ++r)
        for (long c = c0; c < c1; ++c) out.at(r, c - c0) = av.at(r, c);
    auto node = make_node(std::move(out));
    return finish(node, {a}, [a, c0, c1](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        for (long r = 0; r < da.rows(); ++r)
            for (long c = c0; c < c1; ++c) da.at(r, c) += self.grad.at(r, c - c0);
    });
}

// ---- reductions --------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (long i = 0; i < a.value().size(); ++i) s += a.value()[i];
    auto node = make_node(Array::scalar(s));
    return finish(node, {a}, [a](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        double g = self.grad[0];
        for (long i = 0; i < da.size(); ++i) da[i] += g;
    });
}

Tensor mean_all(const Tensor& a) {
    long n = a.value().size();
    double s = 0.0;
    for (long i = 0; i < n; ++i) s += a.value()[i];
    auto node = make_node(Array::scalar(s / n));
    return finish(node, {a}, [a, n](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        double g = self.grad[0] / n;
        for (long i = 0; i < da.size(); ++i) da[i] += g;
    });
}

Tensor sum_rows(const Tensor& a) {
    const Array& av = a.value();
    Array out(av.rows(), 1);
    for (long r = 0; r < av.rows(); ++r) {
        double s = 0.0;
        for (long c = 0; c < av.cols(); ++c) s += av.at(r, c);
        out.at(r, 0) = s;
    }
    auto node = make_node(std::move(out));
    return finish(node, {a}, [a](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        for (long r = 0; r < da.rows(); ++r) {
            double g = self.grad.at(r, 0);
            for (long c = 0; c < da.cols(); ++c) da.at(r, c) += g;
        }
    });
}

// ---- indexed ops ---------------------------------------------------------------

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    const Array& av = a.value();
    Array out(static_cast<long>(idx.size()), av.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= av.rows()) throw DomainError("gather_rows index out of range");
        for (long c = 0; c < av.cols(); ++c) out.at(static_cast<long>(r), c) = av.at(idx[r], c);
    }
    auto node = make_node(std::move(out));
    return finish(node, {a}, [a, idx](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (long c = 0; c < da.cols(); ++c) da.at(idx[r], c) += self.grad.at(static_cast<long>(r), c);
    });
}

Tensor scatter_add_rows(const Tensor& a, const std::vector<int>& idx, long out_rows) {
    const Array& av = a.value();
    if (static_cast<long>(idx.size()) != av.rows()) throw ShapeError("scatter_add_rows index count");
    Array out(out_rows, av.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= out_rows) throw DomainError("scatter_add_rows index out of range");
        for (long c = 0; c < av.cols(); ++c) out.at(idx[r], c) += av.at(static_cast<long>(r), c);
    }
    auto node = make_node(std::move(out));
    return finish(node, {a}, [a, idx](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (long c = 0; c < da.cols(); ++c) da.at(static_cast<long>(r), c) += self.grad.at(idx[r], c);
    });
}

Tensor pick_cols(const Tensor& a, const std::vector<int>& cols) {
    const Array& av = a.value();
    if (static_cast<long>(cols.size()) != av.rows()) throw ShapeError("pick_cols index count");
    Array out(av.rows(), 1);
    for (long r = 0; r < av.rows(); ++r) {
        int c = cols[static_cast<std::size_t>(r)];
        if (c < 0 || c >= av.cols()) throw DomainError("pick_cols index out of range");
        out.at(r, 0) = av.at(r, c);
    }
    auto node = make_node(std::move(out));
    return finish(node, {a}, [a, cols](TensorNode& self) {
        Array& da = a.node()->ensure_grad();
        for (long r = 0; r < da.rows(); ++r) da.at(r, cols[static_cast<std::size_t>(r)]) += self.grad.at(r, 0);
    });
}

// ---- specials -------------------------------------------------------------------

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    const Array& av = a.value();
    const Array& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("cosine_rows shapes " + av.shape_str() + " vs " + bv.shape_str());
    
    Array out(av.rows(), 1);
    for (long r = 0; r < av.rows(); ++r) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (long c = 0; c < av.cols(); ++c) {
            dot += av.at(r, c) * bv.at(r, c);
            na += av.at(r, c) * av.at(r, c);
            nb += bv.at(r, c) * bv.at(r, c);
        }
        out.at(r, 0) = dot / ((std::sqrt(na) + kCosineEps) * (std::sqrt(nb) + kCosineEps));
    }
    auto node = make_node(std::move(out));
    return finish(node, {a, b}, [a, b](TensorNode& self) {
        const Array& av = a.value();
        const Array& bv = b.value();
        bool need_a = a.requires_grad();
        bool need_b = b.requires_grad();
        Array* da = need_a ? &a.node()->ensure_grad() : nullptr;
        Array* db = need_b ? &b.node()->ensure_grad() : nullptr;
        for (long r = 0; r < av.rows(); ++r) {
            double dot = 0.0, na2 = 0.0, nb2 = 0.0;
            for (long c = 0; c < av.cols(); ++c) {
                dot += av.at(r, c) * bv.at(r, c);
                na2 += av.at(r, c) * av.at(r, c);
                nb2 += bv.at(r, c) * bv.at(r, c);
            }
            double na = std::sqrt(na2), nb = std::sqrt(nb2);
            double den = (na + kCosineEps) * (nb + kCosineEps);
            double cosv = dot / den;
            double g = self.grad.at(r, 0);
            for (long c = 0; c < av.cols(); ++c) {
                if (need_a) da->at(r, c) += g * (bv.at(r, c) / den - cosv * av.at(r, c) / (std::max(na, kCosineEps) * (na + kCosineEps)));
                if (need_b) db->at(r, c) += g * (av.at(r, c) / den - cosv * bv.at(r, c) / (std::max(nb, kCosineEps) * (nb + kCosineEps)));
            }
        }
    });
}

Tensor stop_gradient(const Tensor& a) { return Tensor::constant(a.value()); }

Tensor hard_onehot_straight_through(const Tensor& probs) {
    const Array& pv = probs.value();
    Array out(pv.rows(), pv.cols());
    for (long r = 0; r < pv.rows(); ++r) {
        long best = 0;
        for (long c = 1; c < pv.cols(); ++c)
            if (pv.at(r, c) > pv.at(r, best)) best = c;
        out.at(r, best) = 1.0;
    }
    auto node = make_node(std::move(out));
    return finish(node, {probs}, [probs](TensorNode& self) {
        Array& dp = probs.node()->ensure_grad();
        for (long i = 0; i < dp.size(); ++i) dp[i] += self.grad[i];
    });
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, Rng& rng, bool hard) {
    if (temperature <= 0.0) throw DomainError("gumbel_softmax temperature must be positive");
    const Array& lv = logits.value();
    Array noise(lv.rows(), lv.cols());
    for (long i = 0; i < lv.size(); ++i) {
        if (!std::isfinite(lv[i])) throw DomainError("gumbel_softmax: non-finite logit");
        noise[i] = rng.gumbel();
    }
    Tensor perturbed = scale(add(logits, Tensor::constant(std::move(noise))), 1.0 / temperature);
    Tensor soft = softmax_rows(perturbed);
    return hard ? hard_onehot_straight_through(soft) : soft;
}

}  // namespace vqsad::ad
