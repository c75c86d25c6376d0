#pragma once

// Dense row-major tensor with reverse-mode autodiff over an explicit tape.
// Templated on the scalar type: the artifact runs at float, the double
// instantiation backs the finite-difference oracles in the tests.

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace fourplane {

using i64 = int64_t;
using Shape = std::vector<i64>;

inline i64 shape_numel(const Shape& s) {
    i64 n = 1;
    for (i64 d : s) {
        if (d <= 0)
            throw std::invalid_argument("tensor extents must be positive");
        n *= d;
    }
    return n;
}

template <class T>
struct TensorData {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;   // allocated lazily by backward
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty())
            grad.assign(value.size(), T(0));
    }
};

template <class T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorData<T>> p) : p_(std::move(p)) {}

    static Tensor zeros(const Shape& s, bool requires_grad = false) {
        auto d = std::make_shared<TensorData<T>>();
        d->shape = s;
        d->value.assign(shape_numel(s), T(0));
        d->requires_grad = requires_grad;
        return Tensor(std::move(d));
    }

    static Tensor full(const Shape& s, T v, bool requires_grad = false) {
        Tensor t = zeros(s, requires_grad);
        std::fill(t.data(), t.data() + t.numel(), v);
        return t;
    }

    static Tensor from_data(const Shape& s, std::vector<T> v, bool requires_grad = false) {
        if (static_cast<i64>(v.size()) != shape_numel(s))
            throw std::invalid_argument("data length does not match shape");
        auto d = std::make_shared<TensorData<T>>();
        d->shape = s;
        d->value = std::move(v);
        d->requires_grad = requires_grad;
        return Tensor(std::move(d));
    }

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    i64 dim(size_t i) const { return p_->shape.at(i); }
    size_t rank() const { return p_->shape.size(); }
    i64 numel() const { return static_cast<i64>(p_->value.size()); }

    T* data() { return p_->value.data(); }
    const T* data() const { return p_->value.data(); }
    T* grad() { p_->ensure_grad(); return p_->grad.data(); }
    bool has_grad() const { return !p_->grad.empty(); }

    T& at(i64 i) { return p_->value[i]; }
    T at(i64 i) const { return p_->value[i]; }

    bool requires_grad() const { return p_->requires_grad; }
    void set_requires_grad(bool b) { p_->requires_grad = b; }

    void zero_grad() {
        if (!p_->grad.empty())
            std::fill(p_->grad.begin(), p_->grad.end(), T(0));
    }

    std::shared_ptr<TensorData<T>> ptr() const { return p_; }

    // value copy that does not participate in any tape
    Tensor detached() const {
        auto d = std::make_shared<TensorData<T>>();
        d->shape = p_->shape;
        d->value = p_->value;
        d->requires_grad = false;
        return Tensor(std::move(d));
    }

  private:
    std::shared_ptr<TensorData<T>> p_;
};

// Record of executed differentiable operations. backward() replays the
// records in reverse execution order exactly once. One tape serves one
// forward/backward pass; independent model instances use independent tapes.
template <class T>
class Tape {
  public:
    struct Node {
        const char* op;
        std::function<void()> backward;
    };

    bool recording() const { return recording_ && depth_paused_ == 0; }

    void record(const char* op, std::function<void()> fn) {
        if (recording())
            nodes_.push_back(Node{op, std::move(fn)});
    }

    size_t size() const { return nodes_.size(); }
    const char* op_name(size_t i) const { return nodes_[i].op; }

    void backward(Tensor<T> loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        if (nodes_.empty())
            throw std::runtime_error("backward: tape is empty");
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            it->backward();
    }

    void clear() { nodes_.clear(); }

    // Scoped no-grad: operations executed inside are not recorded.
    class Pause {
      public:
        explicit Pause(Tape& t) : t_(t) { ++t_.depth_paused_; }
        ~Pause() { --t_.depth_paused_; }
        Pause(const Pause&) = delete;
        Pause& operator=(const Pause&) = delete;

      private:
        Tape& t_;
    };

  private:
    std::vector<Node> nodes_;
    bool recording_ = true;
    int depth_paused_ = 0;
};

template <class T>
struct Parameter {
    Tensor<T> tensor;
    std::string name;
};

// Flat list of named parameters; names must be unique within a model.
template <class T>
class ParamStore {
  public:
    Tensor<T> add(const std::string& name, Tensor<T> t) {
        if (!names_.insert(name).second)
            throw std::invalid_argument("duplicate parameter name: " + name);
        t.set_requires_grad(true);
        params_.push_back(Parameter<T>{t, name});
        return t;
    }

    std::vector<Parameter<T>>& all() { return params_; }
    const std::vector<Parameter<T>>& all() const { return params_; }

    Tensor<T> find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name)
                return p.tensor;
        throw std::out_of_range("no parameter named " + name);
    }

    void zero_grad() {
        for (auto& p : params_)
            p.tensor.zero_grad();
    }

    i64 count() const {
        i64 n = 0;
        for (const auto& p : params_)
            n += p.tensor.numel();
        return n;
    }

  private:
    std::vector<Parameter<T>> params_;
    std::unordered_set<std::string> names_;
};

} // namespace fourplane
