#include "pcode/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pcode {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

static int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

static void check_shape(const Shape& s) {
    check(!s.empty() && s.size() <= 3, "tensor rank must be 1..3, got rank " + std::to_string(s.size()));
    for (int d : s) check(d > 0, "non-positive extent in shape " + shape_str(s));
}

Tensor make_result(Shape shape, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.assign(size_t(n->numel()), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape(shape);
    return make_result(std::move(shape), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape);
    check(shape_numel(shape) == int64_t(data.size()),
          "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    Tensor t = make_result(std::move(shape), requires_grad);
    t.node()->value = std::move(data);
    return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
    check(numel() == 1, "item() on non-scalar tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

// ---- tape ----

static thread_local Tape* g_active_tape = nullptr;

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorNode> out, std::function<void()> backward_fn) {
    entries_.push_back({std::move(out), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
    check(loss.numel() == 1, "backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    bool on_tape = false;
    for (auto& e : entries_)
        if (e.out == loss.node()) { on_tape = true; break; }
    check(on_tape, "backward() loss was not produced on this tape");

    // Non-leaf grads are scratch space for one replay; zero them so repeated
    // backward calls accumulate correctly into leaf grads.
    for (auto& e : entries_) {
        e.out->ensure_grad();
        std::fill(e.out->grad.begin(), e.out->grad.end(), 0.0);
    }
    loss.node()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
}

void Tape::clear() { entries_.clear(); }

// ---- matmul kernels ----

void mm_nn(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + int64_t(i) * k;
        double* c = C + int64_t(i) * n;
        for (int l = 0; l < k; ++l) {
            const double al = a[l];
            const double* b = B + int64_t(l) * n;
            for (int j = 0; j < n; ++j) c[j] += al * b[j];
        }
    }
}

void mm_nt(const double* A, const double* B, double* C, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + int64_t(i) * n;
        double* c = C + int64_t(i) * k;
        for (int j = 0; j < k; ++j) {
            const double* b = B + int64_t(j) * n;
            double acc = 0.0;
            for (int l = 0; l < n; ++l) acc += a[l] * b[l];
            c[j] += acc;
        }
    }
}

void mm_tn(const double* A, const double* B, double* C, int k, int m, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + int64_t(i) * k;
        const double* b = B + int64_t(i) * n;
        for (int p = 0; p < k; ++p) {
            const double ap = a[p];
            double* c = C + int64_t(p) * n;
            for (int j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

// ---- op helpers ----

static bool want_grad(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

static void maybe_record(const Tensor& out, std::function<void()> fn) {
    if (out.requires_grad())
        if (Tape* t = Tape::active()) t->record(out.node(), std::move(fn));
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2,
          "matmul expects rank-2 operands, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    check(a.dim(1) == b.dim(0),
          "matmul inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_result({m, n}, want_grad({&a, &b}));
    mm_nn(a.value().data(), b.value().data(), out.value().data(), m, k, n);
    maybe_record(out, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
        if (an->requires_grad) {
            an->ensure_grad();
            mm_nt(on->grad.data(), bn->value.data(), an->grad.data(), m, n, k);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            mm_tn(an->value.data(), on->grad.data(), bn->grad.data(), k, m, n);
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    const bool bias = (a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0));
    check(bias || a.shape() == b.shape(),
          "add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = make_result(a.shape(), want_grad({&a, &b}));
    auto& ov = out.value();
    const auto& av = a.value();
    const auto& bv = b.value();
    if (bias) {
        const int rows = a.dim(0), cols = a.dim(1);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) ov[size_t(i) * cols + j] = av[size_t(i) * cols + j] + bv[size_t(j)];
    } else {
        for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
    }
    maybe_record(out, [an = a.node(), bn = b.node(), on = out.node(), bias] {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            if (bias) {
                const int cols = int(bn->value.size());
                const int rows = int(on->value.size()) / cols;
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) bn->grad[size_t(j)] += on->grad[size_t(i) * cols + j];
            } else {
                for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        }
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "sub shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = make_result(a.shape(), want_grad({&a, &b}));
    for (size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
    maybe_record(out, [an = a.node(), bn = b.node(), on = out.node()] {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] -= on->grad[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = make_result(a.shape(), want_grad({&a, &b}));
    for (size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
    maybe_record(out, [an = a.node(), bn = b.node(), on = out.node()] {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = make_result(a.shape(), want_grad({&a}));
    for (size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] * c;
    maybe_record(out, [an = a.node(), on = out.node(), c] {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
    });
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = make_result(a.shape(), want_grad({&a}));
    for (size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] + c;
    maybe_record(out, [an = a.node(), on = out.node()] {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
    return out;
}

Tensor scale_rows(const Tensor& a, const std::vector<double>& w) {
    check(a.rank() == 2, "scale_rows expects rank 2, got " + shape_str(a.shape()));
    check(size_t(a.dim(0)) == w.size(),
          "scale_rows batch extent " + std::to_string(a.dim(0)) + " vs weights " + std::to_string(w.size()));
    const int rows = a.dim(0), cols = a.dim(1);
    Tensor out = make_result(a.shape(), want_grad({&a}));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out.value()[size_t(i) * cols + j] = a.value()[size_t(i) * cols + j] * w[size_t(i)];
    maybe_record(out, [an = a.node(), on = out.node(), w, rows, cols] {
        an->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) an->grad[size_t(i) * cols + j] += on->grad[size_t(i) * cols + j] * w[size_t(i)];
    });
    return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
          "concat expects rank-2 with equal rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Tensor out = make_result({rows, ca + cb}, want_grad({&a, &b}));
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < ca; ++j) out.value()[size_t(i) * (ca + cb) + j] = a.value()[size_t(i) * ca + j];
        for (int j = 0; j < cb; ++j) out.value()[size_t(i) * (ca + cb) + ca + j] = b.value()[size_t(i) * cb + j];
    }
    maybe_record(out, [an = a.node(), bn = b.node(), on = out.node(), rows, ca, cb] {
        if (an->requires_grad) {
            an->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < ca; ++j) an->grad[size_t(i) * ca + j] += on->grad[size_t(i) * (ca + cb) + j];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cb; ++j) bn->grad[size_t(i) * cb + j] += on->grad[size_t(i) * (ca + cb) + ca + j];
        }
    });
    return out;
}

Tensor slice(const Tensor& a, int from, int to) {
    check(a.rank() == 2, "slice expects rank 2, got " + shape_str(a.shape()));
    check(0 <= from && from < to && to <= a.dim(1),
          "slice range [" + std::to_string(from) + "," + std::to_string(to) + ") out of " + shape_str(a.shape()));
    const int rows = a.dim(0), cols = a.dim(1), w = to - from;
    Tensor out = make_result({rows, w}, want_grad({&a}));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < w; ++j) out.value()[size_t(i) * w + j] = a.value()[size_t(i) * cols + from + j];
    maybe_record(out, [an = a.node(), on = out.node(), rows, cols, from, w] {
        an->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < w; ++j) an->grad[size_t(i) * cols + from + j] += on->grad[size_t(i) * w + j];
    });
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = make_result(a.shape(), want_grad({&a}));
    for (size_t i = 0; i < out.value().size(); ++i) out.value()[i] = 1.0 / (1.0 + std::exp(-a.value()[i]));
    maybe_record(out, [an = a.node(), on = out.node()] {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) {
            const double y = on->value[i];
            an->grad[i] += on->grad[i] * y * (1.0 - y);
        }
    });
    return out;
}

Tensor tanh_(const Tensor& a) {
    Tensor out = make_result(a.shape(), want_grad({&a}));
    for (size_t i = 0; i < out.value().size(); ++i) out.value()[i] = std::tanh(a.value()[i]);
    maybe_record(out, [an = a.node(), on = out.node()] {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) {
            const double y = on->value[i];
            an->grad[i] += on->grad[i] * (1.0 - y * y);
        }
    });
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = make_result(a.shape(), want_grad({&a}));
    for (size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    maybe_record(out, [an = a.node(), on = out.node()] {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i)
            if (an->value[i] > 0.0) an->grad[i] += on->grad[i];
    });
    return out;
}

Tensor leaky_relu(const Tensor& a, double slope) {
    Tensor out = make_result(a.shape(), want_grad({&a}));
    for (size_t i = 0; i < out.value().size(); ++i)
        out.value()[i] = a.value()[i] > 0.0 ? a.value()[i] : slope * a.value()[i];
    maybe_record(out, [an = a.node(), on = out.node(), slope] {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i)
            an->grad[i] += on->grad[i] * (an->value[i] > 0.0 ? 1.0 : slope);
    });
    return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "mse shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = make_result({1}, want_grad({&a, &b}));
    const size_t n = a.value().size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    out.value()[0] = acc / double(n);
    maybe_record(out, [an = a.node(), bn = b.node(), on = out.node(), n] {
        const double g = on->grad[0] * 2.0 / double(n);
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < n; ++i) an->grad[i] += g * (an->value[i] - bn->value[i]);
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < n; ++i) bn->grad[i] -= g * (an->value[i] - bn->value[i]);
        }
    });
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out = make_result({1}, want_grad({&a}));
    double acc = 0.0;
    for (double v : a.value()) acc += v;
    out.value()[0] = acc;
    maybe_record(out, [an = a.node(), on = out.node()] {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0];
    });
    return out;
}

Tensor mean(const Tensor& a) {
    const double n = double(a.numel());
    Tensor out = make_result({1}, want_grad({&a}));
    double acc = 0.0;
    for (double v : a.value()) acc += v;
    out.value()[0] = acc / n;
    maybe_record(out, [an = a.node(), on = out.node(), n] {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0] / n;
    });
    return out;
}

Tensor mask_blend(const std::vector<uint8_t>& mask, const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(),
          "mask_blend shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    check(a.rank() == 2, "mask_blend expects rank-2 operands, got " + shape_str(a.shape()));
    check(size_t(a.dim(0)) == mask.size(),
          "mask_blend batch extent " + std::to_string(a.dim(0)) + " vs mask length " + std::to_string(mask.size()));
    const int rows = a.dim(0), cols = a.dim(1);
    Tensor out = make_result(a.shape(), want_grad({&a, &b}));
    for (int i = 0; i < rows; ++i) {
        const auto& src = mask[size_t(i)] ? a.value() : b.value();
        for (int j = 0; j < cols; ++j) out.value()[size_t(i) * cols + j] = src[size_t(i) * cols + j];
    }
    maybe_record(out, [an = a.node(), bn = b.node(), on = out.node(), mask, rows, cols] {
        for (int i = 0; i < rows; ++i) {
            TensorNode* dst = mask[size_t(i)] ? an.get() : bn.get();
            if (!dst->requires_grad) continue;
            dst->ensure_grad();
            for (int j = 0; j < cols; ++j) dst->grad[size_t(i) * cols + j] += on->grad[size_t(i) * cols + j];
        }
    });
    return out;
}

std::vector<double> row_mse_values(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape() && a.rank() == 2,
          "row_mse shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(size_t(rows));
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double d = a.value()[size_t(i) * cols + j] - b.value()[size_t(i) * cols + j];
            acc += d * d;
        }
        out[size_t(i)] = acc / double(cols);
    }
    return out;
}

} // namespace pcode
