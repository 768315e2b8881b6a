#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowbench/errors.hpp"
#include "flowbench/rng.hpp"

namespace flowbench {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Backing store shared by Tensor handles. `tape_epoch`/`tape_node` identify
// the tape node that produced this tensor, if any; leaves keep node -1.
struct TensorData {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until backward populates it
    bool requires_grad = false;
    std::uint64_t tape_epoch = 0;
    int tape_node = -1;
};

// Dense n-dimensional array of 64-bit floats with value semantics over a
// shared store. Shapes have 1 to 4 dimensions (vector, matrix, CHW, NCHW).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }

    bool valid() const { return d_ != nullptr; }

    const Shape& shape() const { return d_->shape; }
    std::size_t ndim() const { return d_->shape.size(); }
    std::size_t dim(std::size_t i) const { return d_->shape[i]; }
    std::size_t size() const { return d_->data.size(); }

    double* data() { return d_->data.data(); }
    const double* data() const { return d_->data.data(); }

    double& at(std::size_t i) { return d_->data[i]; }
    double at(std::size_t i) const { return d_->data[i]; }

    double& operator()(std::size_t i, std::size_t j) {
        assert(ndim() == 2);
        return d_->data[i * dim(1) + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        assert(ndim() == 2);
        return d_->data[i * dim(1) + j];
    }
    double& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        assert(ndim() == 4);
        return d_->data[((n * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }
    double operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        assert(ndim() == 4);
        return d_->data[((n * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool v) { d_->requires_grad = v; }

    bool has_grad() const { return !d_->grad.empty(); }
    const std::vector<double>& grad() const;
    // Allocates a zero gradient buffer if none exists yet.
    std::vector<double>& ensure_grad();
    void zero_grad();

    // Deep copy of the values only (no grad, no tape linkage).
    Tensor clone_values() const;

    std::shared_ptr<TensorData> ptr() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

Tensor random_uniform(const Shape& shape, double lo, double hi, Rng& rng);

enum class OpKind : std::uint8_t {
    Add,
    AddBias,
    Sub,
    Mul,
    Scale,
    Sum,
    Mean,
    Tanh,
    Relu,
    Matmul,
    MatmulNT,
    Transpose,
    Reshape,
    Conv2d,
    MaxPool2d,
    UpsampleNearest,
    Softmax,
    LayerNorm,
    SliceRows,
    SliceCols,
    ConcatRows,
    ConcatCols,
    PadCrop2d,
};

// Define-by-run record of differentiable operations. Ops append nodes during
// the forward pass; backward() replays them once in reverse. The tape is
// rebuilt every forward pass; reset() bumps the epoch so stale tensor handles
// from an earlier pass are rejected.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::uint64_t epoch() const { return epoch_; }

    void reset() {
        nodes_.clear();
        ++epoch_;
    }

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, accumulating
    // into the persistent grad of every leaf with requires_grad. Repeated
    // calls keep accumulating until grads are zeroed.
    void backward(const Tensor& loss);

    using BackwardFn = std::function<void(Tape&)>;
    void record(OpKind kind, std::vector<std::shared_ptr<TensorData>> inputs,
                const std::shared_ptr<TensorData>& output, BackwardFn fn);

    // Gradient flow buffers live only for the duration of one backward pass.
    const std::vector<double>* flow_grad(TensorData* t) const;
    std::vector<double>& flow_accum(TensorData* t);
    // True when a gradient for `t` is worth computing: either a leaf that
    // requires grad or an intermediate produced on this tape.
    bool wants_grad(const TensorData* t) const;

private:
    struct Node {
        OpKind kind;
        std::vector<std::shared_ptr<TensorData>> inputs;
        std::shared_ptr<TensorData> output;
        BackwardFn backward;
    };

    bool recording_;
    std::uint64_t epoch_ = 1;
    std::vector<Node> nodes_;
    std::unordered_map<TensorData*, std::vector<double>> flow_;
};

} // namespace flowbench
