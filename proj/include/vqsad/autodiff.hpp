#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vqsad/array.hpp"
#include "vqsad/rng.hpp"

namespace vqsad::ad {

struct TensorNode;

// Handle to a node of the reverse-mode computation graph. Cheap to copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor constant(Array value);
    static Tensor scalar(double value) { return constant(Array::scalar(value)); }
    static Tensor leaf(Array value);  // trainable leaf (requires_grad = true)

    const Array& value() const;
    const Array& grad() const;
    bool defined() const { return node_ != nullptr; }
    bool requires_grad() const;
    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
    Array value;
    Array grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool grad_alloc = false;
    std::int64_t seq = 0;  // creation order; a valid topological order
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    Array& ensure_grad();
};

// While alive, newly built ops record no backward closures (inference mode).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Accumulates d(loss)/d(leaf) into every reachable node's grad. loss must be
// scalar shaped [1,1].
void backward(const Tensor& loss);

// ---- elementwise / broadcast arithmetic -----------------------------------
// Binary ops accept b of shape equal to a, or [1,n] (row broadcast),
// [m,1] (column broadcast), or [1,1] (scalar broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// ---- linear algebra --------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- nonlinearities --------------------------------------------------------
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor pow_const(const Tensor& a, double p);
Tensor clamp_abs(const Tensor& a, double limit);  // gradient zero outside the clamp
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

// ---- shape ops -------------------------------------------------------------
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, long c0, long c1);

// ---- reductions ------------------------------------------------------------
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // [m,n] -> [m,1]

// ---- indexed ops -----------------------------------------------------------
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor scatter_add_rows(const Tensor& a, const std::vector<int>& idx, long out_rows);
Tensor pick_cols(const Tensor& a, const std::vector<int>& cols);  // [m,n] -> [m,1]

// ---- specials ---------------------------------------------------------------
// Row-wise cosine similarity; each norm carries an additive 1e-12 guard.
Tensor cosine_rows(const Tensor& a, const Tensor& b);
Tensor stop_gradient(const Tensor& a);

// Forward value is the row-wise one-hot argmax; gradient passes through
// unchanged (straight-through).
Tensor hard_onehot_straight_through(const Tensor& probs);

// Relaxed categorical sample, rows on the simplex. hard = true returns the
// straight-through variant. Throws DomainError on non-finite logits or
// temperature <= 0.
Tensor gumbel_softmax(const Tensor& logits, double temperature, Rng& rng, bool hard);

}  // namespace vqsad::ad
