#pragma once

// Reverse-mode automatic differentiation core.
//
// A Tensor is a shared handle to a node holding row-major data and an
// optional gradient buffer. Operations executed while a Tape is active, and
// with at least one input that requires a gradient, append a record to that
// tape. backward() walks the tape once in reverse order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace defectvit {

// Storage and arithmetic precision of every tensor.
using Scalar = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

struct TensorNode {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  Tape* tape = nullptr;  // tape that produced this node, if any

  Scalar* grad_buffer();  // allocates zeros on first use
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const Scalar> data() const { return node_->data; }
  // Direct write access, for parameters and optimizers only. Writing into a
  // tensor that already fed a recorded op invalidates that op's backward.
  std::span<Scalar> mutable_data() { return node_->data; }
  Scalar item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Scalar> grad() const { return node_->grad; }
  std::span<Scalar> mutable_grad();
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  // Same data, no tape participation.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of differentiable operations. Records are appended in
// execution order, so the list is already topologically sorted.
class Tape {
 public:
  using BackwardFn = std::function<void(const TensorNode& output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  void record(const Tensor& output, BackwardFn fn);
  void backward(const Tensor& loss);
  std::size_t size() const { return records_.size(); }
  void clear();

 private:
  struct Record {
    std::shared_ptr<TensorNode> output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
};

// Installs a tape as the thread's active tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Tape of the loss, seeded with d(loss)/d(loss) = 1.
void backward(const Tensor& loss);

namespace detail {
// Output node for an op over `inputs`; marked requires_grad when the op will
// be recorded. Returns the tape to record on, or nullptr.
Tape* tape_for(std::initializer_list<const Tensor*> inputs);
}  // namespace detail

}  // namespace defectvit
