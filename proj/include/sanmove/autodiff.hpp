#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sanmove/tensor.hpp"

namespace sanmove::autodiff {

// Define-by-run reverse-mode graph node. The graph is rebuilt every forward
// pass; a node owns its value unless it is a non-owning view of a parameter
// tensor (ext != nullptr). Gradients are per-node, so distinct graphs can run
// on different threads against read-shared parameters.
struct Var {
    std::vector<std::size_t> shape;
    std::vector<double> val;          // owned value (empty when ext is set)
    const double* ext = nullptr;      // leaf view into a parameter tensor
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Var>> parents;
    std::function<void()> backprop;

    const double* data() const { return ext ? ext : val.data(); }
    std::size_t numel() const { return Tensor::numel_of(shape); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    void ensure_grad() {
        if (grad.empty()) grad.assign(numel(), 0.0);
    }
};

using VarPtr = std::shared_ptr<Var>;

// Leaves.
VarPtr leaf(const Tensor& t, bool requires_grad);   // non-owning view of t.data
VarPtr constant(Tensor t);                          // owned, no grad

// Linear algebra.
VarPtr matmul(const VarPtr& a, const VarPtr& b);     // [m x k]·[k x n]
VarPtr matmul_nt(const VarPtr& a, const VarPtr& b);  // [m x k]·[n x k]^T -> [m x n]

// Elementwise / shape ops.
VarPtr add(const VarPtr& a, const VarPtr& b);        // equal shapes, or b a row vector broadcast over a's rows
VarPtr mul(const VarPtr& a, const VarPtr& b);        // equal shapes
VarPtr mul_const(const VarPtr& a, const std::vector<double>& c);  // elementwise, c not differentiated
VarPtr add_const(const VarPtr& a, const std::vector<double>& c);  // supports -inf mask entries
VarPtr scale(const VarPtr& a, double s);
VarPtr relu(const VarPtr& a);
VarPtr sigmoid(const VarPtr& a);
VarPtr tanh_v(const VarPtr& a);
VarPtr softmax_rows(const VarPtr& a);                // rows with all -inf are an error
VarPtr mean_axis0(const VarPtr& a);                  // [m x n] -> [n]
VarPtr sum_all(const VarPtr& a);                     // -> scalar [1]
VarPtr gather_rows(const VarPtr& table, const std::vector<std::size_t>& idx);
VarPtr slice_cols(const VarPtr& a, std::size_t c0, std::size_t w);
VarPtr slice_rows(const VarPtr& a, std::size_t r0, std::size_t h);
VarPtr concat_cols(const std::vector<VarPtr>& parts);
VarPtr concat_rows(const std::vector<VarPtr>& parts);
// Mean over rows of -log(probs[r][targets[r]]).
VarPtr nll_rows(const VarPtr& probs, const std::vector<std::size_t>& targets);

// Populates grads of every node reachable from loss. loss must be scalar.
void backward(const VarPtr& loss);

// Max relative finite-difference error of f's gradient at x (central
// differences, step eps). f must rebuild its graph from the leaf it is given.
double grad_check(const std::function<VarPtr(const VarPtr&)>& f, Tensor& x, double eps = 1e-5);

}  // namespace sanmove::autodiff
