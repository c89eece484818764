#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qstar/errors.hpp"
#include "qstar/rng.hpp"

namespace qstar {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

// Shared handle to a node in the computation graph. Values are immutable
// after construction except for grad accumulation during backward() and
// explicit in-place updates of leaf data (optimizer steps, finite
// differences), which happen between graph builds.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // i.i.d. uniform in [lo, hi]
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);
    static Tensor gaussian(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t size() const;
    int64_t dim(int axis) const;
    int rank() const;
    bool requires_grad() const;

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();
    // grad of a leaf after backward(); empty vector if never touched
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;  // scalar tensors only

    Node* node() const { return node_.get(); }

    friend Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(Node&)> backprop);

private:
    std::shared_ptr<Node> node_;
};

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // lazily sized
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    std::vector<double>& grad_buffer();
};

// number of non-leaf nodes created on this thread; used by the harness to
// assert that ablations actually change the forward graph
uint64_t op_counter();

// ---- differentiable operations ----

// batched matrix product: a [..., m, k] x b [..., k, n] -> [..., m, n];
// batch extents must match or broadcast from 1
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);  // numpy-style broadcasting
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

Tensor relu(const Tensor& x);
Tensor tanh_op(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);
Tensor reduce_mean(const Tensor& x, int axis);  // removes the axis
Tensor reduce_sum(const Tensor& x, int axis);
Tensor reduce_sum_all(const Tensor& x);  // -> scalar

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor stack0(const std::vector<Tensor>& parts);  // new leading axis
Tensor transpose(const Tensor& x, const std::vector<int>& axes);
Tensor transpose2d(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// select index along an axis, removing it (e.g. one segment of F_p)
Tensor take(const Tensor& x, int axis, int64_t index);

// x [..., k] * W [k, n] + b [n]; pass an undefined Tensor for no bias
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x [C_in, L], w [C_out, C_in, k], b [C_out]; cross-correlation, odd k,
// padding (k-1)/2 so the length is preserved
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t padding);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

// x [C, L]; normalizes each channel over L. Training mode uses batch
// statistics (and optionally folds them into the running estimates);
// eval mode uses the running estimates.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 bool training, bool update_running);

// normalization over the last axis
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// -log softmax(logits)[label], stabilized via log-sum-exp; logits rank 1
Tensor cross_entropy_with_logits(const Tensor& logits, int64_t label);

// ---- backward pass ----

void backward(const Tensor& loss);

// ---- gradient checking ----

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct GradCheckOptions {
    double step = 1e-5;
    // check at most this many coordinates per leaf (0 = all), chosen
    // deterministically from sample_seed
    int64_t max_coords_per_leaf = 0;
    uint64_t sample_seed = 0;
};

// Reruns `closure` with leaf data perturbed coordinate-wise and compares
// central differences against the analytic gradients from backward().
// Relative error uses denominator max(|analytic|, |numeric|, 1e-8);
// absolute differences below 1e-8 count as exact (cancellation noise on
// zero-gradient directions).
GradCheckReport grad_check(const std::string& op_name, const std::function<Tensor()>& closure,
                           const std::vector<Tensor>& leafs, double tolerance,
                           GradCheckOptions opts = {});

bool all_finite(const std::vector<double>& v);

}  // namespace qstar
