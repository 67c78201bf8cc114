#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "pcode/common.hpp"

namespace pcode {

// Dense tensors of rank 1..3 holding doubles, with a dynamic tape for
// reverse-mode gradients. Ops record a backward closure on the thread's
// active tape (if any). Without an active tape the same ops run
// value-only, which is the inference path.

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first needed
    bool requires_grad = false;

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return int(node_->shape.size()); }
    int dim(int i) const { return node_->shape[size_t(i)]; }
    int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<double>& value() { return node_->value; }
    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& grad() { node_->ensure_grad(); return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    double item() const;

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;
    friend Tensor make_result(Shape shape, bool requires_grad);
};

// Ordered record of primitive ops; replayed in reverse by backward().
// One tape per thread of execution; activate with Tape::Scope.
class Tape {
public:
    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;
    private:
        Tape* prev_;
    };

    static Tape* active();

    void record(std::shared_ptr<TensorNode> out, std::function<void()> backward_fn);
    void backward(const Tensor& loss);
    void clear();
    size_t size() const { return entries_.size(); }

private:
    struct Entry {
        std::shared_ptr<TensorNode> out;
        std::function<void()> fn;
    };
    std::vector<Entry> entries_;
};

// ---- primitive ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b); // same shape, or b rank-1 bias broadcast over rows
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// row i scaled by w[i]; weights are constants (no gradient into w)
Tensor scale_rows(const Tensor& a, const std::vector<double>& w);
Tensor concat(const Tensor& a, const Tensor& b); // along last dim, rank 2
Tensor slice(const Tensor& a, int from, int to); // along last dim, rank 2
Tensor sigmoid(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor mse(const Tensor& a, const Tensor& b); // scalar mean((a-b)^2)
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// row i of result = a[i] where mask[i] else b[i]; gradient flows only to
// the selected source per row. a, b rank 2 with leading batch extent.
Tensor mask_blend(const std::vector<uint8_t>& mask, const Tensor& a, const Tensor& b);
inline Tensor select_by_mask(const std::vector<uint8_t>& mask, const Tensor& a, const Tensor& b) {
    return mask_blend(mask, a, b);
}

// per-row mean squared error, value-only (feeds non-differentiable decisions)
std::vector<double> row_mse_values(const Tensor& a, const Tensor& b);

// Deterministic matmul kernel: per-element accumulation order is fixed and
// independent of the row count, so a 1-row pass is bit-identical to the
// matching row of a batched pass.
void mm_nn(const double* A, const double* B, double* C, int m, int k, int n); // C += A*B
void mm_nt(const double* A, const double* B, double* C, int m, int n, int k); // C += A*B^T, A:mxn B:kxn
void mm_tn(const double* A, const double* B, double* C, int k, int m, int n); // C += A^T*B, A:mxk B:mxn

} // namespace pcode
