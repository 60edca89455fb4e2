#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dag/common.hpp"
#include "dag/rng.hpp"

namespace dag {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
    return r + "]";
}

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // allocated on first accumulation
    bool requires_grad = false;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    float* grad_acc() {
        if (grad.empty()) grad.assign(data.size(), 0.0f);
        return grad.data();
    }
};

// Dense f32 tensor handle participating in a reverse-mode tape. Values are
// immutable once created except for the grad buffer; parameter updates happen
// between tapes.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}

    static Tensor zeros(const Shape& s, bool requires_grad = false) {
        auto p = std::make_shared<TensorImpl>();
        p->shape = s;
        p->data.assign(static_cast<size_t>(shape_numel(s)), 0.0f);
        p->requires_grad = requires_grad;
        return Tensor(p);
    }

    static Tensor full(const Shape& s, float v) {
        Tensor t = zeros(s);
        for (auto& x : t.p_->data) x = v;
        return t;
    }

    static Tensor from(const Shape& s, std::vector<float> values) {
        DAG_CHECK(shape_numel(s) == static_cast<int64_t>(values.size()), contract,
                  "tensor data does not match shape " + shape_str(s));
        auto p = std::make_shared<TensorImpl>();
        p->shape = s;
        p->data = std::move(values);
        return Tensor(p);
    }

    static Tensor scalar(float v) { return from({1}, {v}); }

    static Tensor randn(const Shape& s, Rng& rng, float stdev = 1.0f) {
        Tensor t = zeros(s);
        for (auto& x : t.p_->data) x = stdev * rng.normal();
        return t;
    }

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int64_t dim(size_t i) const { return p_->shape[i]; }
    size_t ndim() const { return p_->shape.size(); }
    int64_t numel() const { return p_->numel(); }

    const float* data() const { return p_->data.data(); }
    float* mutable_data() { return p_->data.data(); }
    float item() const {
        DAG_CHECK(numel() == 1, contract, "item() on non-scalar tensor");
        return p_->data[0];
    }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool rg) { p_->requires_grad = rg; }

    bool has_grad() const { return !p_->grad.empty(); }
    const std::vector<float>& grad() const { return p_->grad; }
    void zero_grad() { p_->grad.clear(); }

    const std::shared_ptr<TensorImpl>& impl() const { return p_; }

    Tensor clone() const {
        auto p = std::make_shared<TensorImpl>();
        p->shape = p_->shape;
        p->data = p_->data;
        return Tensor(p);
    }

  private:
    std::shared_ptr<TensorImpl> p_;
};

// Reverse-mode tape. Forward ops append a backward rule; backward() replays
// them in exact reverse recording order, so gradient accumulation is additive
// and order-deterministic. A tape lives on one thread and is rebuilt per pass.
class Tape {
  public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void backward(const Tensor& loss) {
        DAG_CHECK(loss.numel() == 1, contract, "backward() requires a scalar loss");
        DAG_CHECK(loss.requires_grad(), contract, "backward() loss is not connected to the tape");
        loss.impl()->grad_acc()[0] += 1.0f;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    static Tape* current() { return current_; }

  private:
    std::vector<std::function<void()>> nodes_;
    static thread_local Tape* current_;
    friend struct TapeScope;
};

inline thread_local Tape* Tape::current_ = nullptr;

struct TapeScope {
    explicit TapeScope(Tape& t) : prev_(Tape::current_) { Tape::current_ = &t; }
    ~TapeScope() { Tape::current_ = prev_; }

  private:
    Tape* prev_;
};

// true when the op must be recorded: a tape is active and some input tracks grads
inline bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current()) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace dag
