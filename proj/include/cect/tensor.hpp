#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace cect {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

/// One node of the (implicit) reverse-mode graph. Parents are ordered; the
/// backward pass walks nodes in reverse topological order and calls each
/// node's backward_fn exactly once.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::vector<double>& ensure_grad();
};

/// Dense double-precision tensor with value semantics over a shared node.
/// Copies share storage; operations build new nodes.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    std::vector<double>& data();
    const std::vector<double>& data() const;
    bool has_grad() const;
    std::vector<double>& grad();             // allocates zeros on first use
    const std::vector<double>& grad() const; // throws if absent
    bool requires_grad() const;
    void set_requires_grad(bool flag);
    void zero_grad();

    double value() const; // scalar tensors only
    double at(std::initializer_list<int> idx) const;

    TensorNode* node() const { return node_.get(); }

private:
    std::shared_ptr<TensorNode> node_;
    friend Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backward_fn);
};

enum class Mode { Train, Infer };

/// Per-channel running statistics owned by the caller; updated in Train mode.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    static BatchNormState init(int channels);
};

// ---- operations ---------------------------------------------------------

/// 2-D convolution, NCHW. Kernel must be square with odd side; zero padding
/// of k/2 keeps the spatial size except for the stride (1 or 2) reduction.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);

/// Transposed convolution with a 2x2 kernel and stride 2; exactly doubles
/// both spatial dimensions. Weight layout [C_in, C_out, 2, 2].
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode, double momentum = 0.9,
                  double eps = 1e-5);

Tensor relu(const Tensor& x);

/// 1 / (1 + exp(-s (x - threshold))). The exponent is clamped to +-60 before
/// exponentiation; values and gradients in the unclamped region are unchanged
/// to machine precision.
Tensor steep_sigmoid(const Tensor& x, double steepness, double threshold);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); // elementwise
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor sum(const Tensor& x); // full reduction to a scalar

/// Elementwise sqrt; the subgradient at exactly 0 is taken as 0.
Tensor sqrt(const Tensor& x);

/// log(max(x, floor)); gradient is 0 in the clamped region.
Tensor log_clamped(const Tensor& x, double floor = 1e-12);

/// Zeroes x outside the {0,1} mask. The mask never receives gradient; it may
/// either match x's shape or broadcast over the batch dimension ([1,C,H,W]
/// against [N,C,H,W]).
Tensor masked_select(const Tensor& x, const Tensor& mask);

/// Extracts sample n of an [N,C,H,W] tensor as [1,C,H,W].
Tensor select_sample(const Tensor& x, int n);

/// Reverse-mode pass from a scalar loss. Gradients accumulate into the .grad
/// of every requires_grad tensor reachable through the graph.
void backward(const Tensor& loss);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar-valued function of one tensor.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point,
                  double step = 1e-4);

} // namespace cect
