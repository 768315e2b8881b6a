#include "flowbench/tensor.hpp"

#include <sstream>

namespace flowbench {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << ", ";
        }
        out << shape[i];
    }
    out << "]";
    return out.str();
}

static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
        throw DimensionError("tensor shape must have 1 to 4 dimensions, got " +
                             shape_str(shape));
    }
    for (std::size_t d : shape) {
        if (d == 0) {
            throw DimensionError("tensor shape has a zero dimension: " + shape_str(shape));
        }
    }
}

Tensor::Tensor(Shape shape, double fill) {
    check_shape(shape);
    d_ = std::make_shared<TensorData>();
    d_->data.assign(shape_size(shape), fill);
    d_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (shape_size(shape) != values.size()) {
        throw DimensionError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    d_ = std::make_shared<TensorData>();
    d_->shape = std::move(shape);
    d_->data = std::move(values);
}

const std::vector<double>& Tensor::grad() const {
    if (d_->grad.empty()) {
        throw ContractError("tensor has no gradient populated");
    }
    return d_->grad;
}

std::vector<double>& Tensor::ensure_grad() {
    if (d_->grad.empty()) {
        d_->grad.assign(d_->data.size(), 0.0);
    }
    return d_->grad;
}

void Tensor::zero_grad() {
    d_->grad.assign(d_->data.size(), 0.0);
}

Tensor Tensor::clone_values() const {
    return Tensor(d_->shape, d_->data);
}

Tensor random_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.at(i) = rng.uniform(lo, hi);
    }
    return t;
}

void Tape::record(OpKind kind, std::vector<std::shared_ptr<TensorData>> inputs,
                  const std::shared_ptr<TensorData>& output, BackwardFn fn) {
    output->tape_epoch = epoch_;
    output->tape_node = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{kind, std::move(inputs), output, std::move(fn)});
}

const std::vector<double>* Tape::flow_grad(TensorData* t) const {
    auto it = flow_.find(t);
    return it == flow_.end() ? nullptr : &it->second;
}

std::vector<double>& Tape::flow_accum(TensorData* t) {
    auto [it, inserted] = flow_.try_emplace(t);
    if (inserted) {
        it->second.assign(t->data.size(), 0.0);
    }
    return it->second;
}

bool Tape::wants_grad(const TensorData* t) const {
    return t->requires_grad || (t->tape_epoch == epoch_ && t->tape_node >= 0);
}

void Tape::backward(const Tensor& loss) {
    if (!loss.valid() || loss.size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            (loss.valid() ? shape_str(loss.shape()) : std::string("<empty>")));
    }
    TensorData* seed = loss.ptr().get();
    if (seed->tape_epoch != epoch_ || seed->tape_node < 0 ||
        static_cast<std::size_t>(seed->tape_node) >= nodes_.size() ||
        nodes_[static_cast<std::size_t>(seed->tape_node)].output.get() != seed) {
        throw ContractError("backward: loss tensor was not produced on this tape");
    }

    flow_.clear();
    flow_[seed] = {1.0};

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (flow_.find(it->output.get()) == flow_.end()) {
            continue; // nothing downstream of the loss flowed into this node
        }
        it->backward(*this);
    }

    for (auto& [td, buf] : flow_) {
        if (!td->requires_grad) {
            continue;
        }
        if (td->grad.empty()) {
            td->grad.assign(td->data.size(), 0.0);
        }
        for (std::size_t i = 0; i < buf.size(); ++i) {
            td->grad[i] += buf[i];
        }
    }
    flow_.clear();
}

} // namespace flowbench
