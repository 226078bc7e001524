// Dense tensors and the reverse-mode tape that records operations on them.
//
// A Tensor is a cheap handle onto shared storage. Operations that consume a
// tensor with requires_grad() while a Tape is active (see TapeScope) append a
// record holding the local backward rule; Tape::backward() then walks the
// records in reverse creation order, which is a valid reverse topological
// order, and accumulates gradients into every reachable tensor.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace snas {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::int64_t tape_id = -1;
    const Tape<T>* tape = nullptr;
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl<T>>()) {
        impl_->data.assign(numel(shape), fill);
        impl_->shape = std::move(shape);
        impl_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl<T>>()) {
        if (numel(shape) != data.size()) {
            throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                             std::to_string(numel(shape)) + " elements, got " +
                             std::to_string(data.size()));
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{1}, value, requires_grad);
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t size() const { return impl_->data.size(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    T& operator[](std::size_t i) { return impl_->data[i]; }
    const T& operator[](std::size_t i) const { return impl_->data[i]; }

    T item() const {
        if (size() != 1) {
            throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
        }
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        impl_->requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    /// Gradient buffer, allocated (zero-filled) on first use.
    std::span<T> grad_buffer() const {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.clear(); }

    /// New tensor with copied values and no history.
    Tensor detach() const { return Tensor(impl_->shape, impl_->data, false); }
    Tensor clone() const { return detach(); }

    std::int64_t tape_id() const { return impl_->tape_id; }
    const Tape<T>* tape() const { return impl_->tape; }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    detail::TensorImpl<T>* impl() const { return impl_.get(); }

private:
    std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Recording of primitive operations for one forward/backward pass.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void()>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Appends a record producing `output`. The closure reads output's grad
    /// and accumulates into the inputs' grad buffers.
    void record(std::string_view op, Tensor<T>& output, BackwardFn backward) {
        auto* impl = output.impl();
        impl->requires_grad = true;
        impl->tape_id = static_cast<std::int64_t>(records_.size());
        impl->tape = this;
        records_.push_back(Record{std::string(op), output, std::move(backward)});
    }

    void backward(Tensor<T> loss) {
        if (loss.size() != 1) {
            throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
        }
        if (loss.tape() != this) {
            throw std::logic_error("backward: loss was not recorded on this tape");
        }
        loss.grad_buffer()[0] += T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            if (!it->output.has_grad()) continue;  // not reachable from the loss
            it->backward();
            ++visited_;
        }
        ++backward_passes_;
    }

    std::size_t size() const { return records_.size(); }
    std::size_t backward_passes() const { return backward_passes_; }
    std::size_t visited_records() const { return visited_; }
    std::string_view op_name(std::size_t id) const { return records_.at(id).op; }

private:
    struct Record {
        std::string op;
        Tensor<T> output;
        BackwardFn backward;
    };
    std::vector<Record> records_;
    std::size_t backward_passes_ = 0;
    std::size_t visited_ = 0;
};

namespace detail {
template <typename T>
Tape<T>*& active_tape_slot() {
    thread_local Tape<T>* slot = nullptr;
    return slot;
}
}  // namespace detail

template <typename T>
Tape<T>* active_tape() {
    return detail::active_tape_slot<T>();
}

/// Makes `tape` the recording target for the current thread until destroyed.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape_slot<T>()) {
        detail::active_tape_slot<T>() = &tape;
    }
    ~TapeScope() { detail::active_tape_slot<T>() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

/// Suspends recording for the current thread.
template <typename T>
class NoGradScope {
public:
    NoGradScope() : previous_(detail::active_tape_slot<T>()) { detail::active_tape_slot<T>() = nullptr; }
    ~NoGradScope() { detail::active_tape_slot<T>() = previous_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<T>* previous_;
};

}  // namespace snas
