#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dyadit/tensor.hpp"

namespace dyadit::ad {

// Reverse-mode autodiff over Tensor. A forward pass builds a DAG of Nodes; backward()
// walks it in reverse topological order. Parameter nodes persist across steps and
// accumulate into their grad until zeroed.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates parents' grads

    Tensor& ensure_grad();
    void accumulate(const Tensor& g);
};

using Var = std::shared_ptr<Node>;

// Leaf constructors.
Var constant(Tensor value);
Var parameter(Tensor value);

// While alive, newly built nodes do not record parents/backward closures. Use for
// inference passes so parameter nodes do not pin graph memory.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Scalar-DAG backward: seeds root grad with 1 (root must have size 1).
void backward(const Var& root);

// Elementwise / algebra.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

// x:[T,C] with row vector v:[1,C].
Var add_bias_row(const Var& x, const Var& v);
Var mul_row(const Var& x, const Var& v);
// v:[1,C] -> [T,C].
Var broadcast_row(const Var& v, std::int64_t rows);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Activations.
Var leaky_relu(const Var& x, double slope = 0.01);
Var sigmoid(const Var& x);
Var gelu(const Var& x);

Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Builds a node for a fused domain op: forward value computed by the caller,
// backprop reads node.grad and accumulates into the parents.
Var custom(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop);

// Structure.
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& x, std::int64_t begin, std::int64_t end);
Var slice_cols(const Var& x, std::int64_t begin, std::int64_t end);
Var mean_rows(const Var& x);   // [T,C] -> [1,C]
Var mean_all(const Var& x);    // [..] -> [1]
Var sum_all(const Var& x);     // [..] -> [1]

// Mean over rows of the squared row L2 norm: (1/T) sum_t ||x_t||^2. The epsilon-loss
// convention; equals mean_all(x*x) * C.
Var mean_sq_rows(const Var& x);

// x:[T,Cin] -> [Tout,Cout]; w:[Cout, Cin*K], b:[1,Cout].
Var conv1d(const Var& x, const Var& w, const Var& b, std::int64_t kernel, std::int64_t stride,
           std::int64_t pad);

// Linear-interpolation temporal upsample by 2: out[2i]=x[i], out[2i+1]=(x[i]+x[i+1])/2
// (last odd row repeats x[T-1]).
Var upsample_linear_2x(const Var& x);

// Fused scaled-dot-product attention over `heads` channel groups.
// q:[Tq,C], k/v:[Tkv,C]; scale = 1/sqrt(C/heads). If probs_out is non-null it
// receives the [heads*Tq, Tkv] row-stochastic attention matrix.
Var attention(const Var& q, const Var& k, const Var& v, int heads, Tensor* probs_out = nullptr);

}  // namespace dyadit::ad
